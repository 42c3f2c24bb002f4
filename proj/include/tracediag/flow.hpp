#pragma once

#include <cstdint>
#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include "tracediag/packet.hpp"

namespace tracediag {

enum class Vantage { client_side, server_side };

enum class Dir { a2b, b2a };

// One TCP connection episode as seen from a single capture point.
// Direction A is the connection initiator: the sender of the episode's first
// SYN, or of its first packet when no SYN was captured.
struct FlowTrace {
    uint32_t a_ip = 0;
    uint16_t a_port = 0;
    uint32_t b_ip = 0;
    uint16_t b_port = 0;
    Vantage vantage = Vantage::client_side;
    std::vector<PacketRecord> packets_a2b;
    std::vector<PacketRecord> packets_b2a;
    // capture-order merge of the two lists: (direction, index into its list)
    std::vector<std::pair<Dir, std::size_t>> capture_order;

    std::size_t total_packets() const { return packets_a2b.size() + packets_b2a.size(); }

    std::tuple<uint32_t, uint16_t, uint32_t, uint16_t> key() const {
        return {a_ip, a_port, b_ip, b_port};
    }
};

namespace detail {

struct EndpointPair {
    uint32_t ip1, ip2;
    uint16_t port1, port2;
    bool operator<(const EndpointPair& o) const {
        return std::tie(ip1, port1, ip2, port2) < std::tie(o.ip1, o.port1, o.ip2, o.port2);
    }
};

// Direction-insensitive lookup key: lower endpoint first.
inline EndpointPair pair_key(const PacketRecord& p) {
    if (std::tie(p.src_ip, p.src_port) <= std::tie(p.dst_ip, p.dst_port))
        return {p.src_ip, p.dst_ip, p.src_port, p.dst_port};
    return {p.dst_ip, p.src_ip, p.dst_port, p.src_port};
}

struct OpenEpisode {
    std::vector<PacketRecord> packets; // capture order
    // first SYN per endpoint (keyed by src ip/port), used for episode splits
    std::map<std::pair<uint32_t, uint16_t>, uint32_t> syn_isn;
    bool any_syn = false;
};

inline FlowTrace finalize(OpenEpisode&& ep, Vantage vantage) {
    FlowTrace flow;
    flow.vantage = vantage;
    // initiator: sender of the first pure SYN, else sender of the first packet
    const PacketRecord* initiator_pkt = nullptr;
    for (const auto& p : ep.packets) {
        if (p.has(tcpflag::SYN) && !p.has(tcpflag::ACK)) { initiator_pkt = &p; break; }
    }
    if (!initiator_pkt) {
        for (const auto& p : ep.packets) {
            if (p.has(tcpflag::SYN)) { initiator_pkt = &p; break; }
        }
    }
    if (!initiator_pkt) initiator_pkt = &ep.packets.front();
    flow.a_ip = initiator_pkt->src_ip;
    flow.a_port = initiator_pkt->src_port;
    flow.b_ip = initiator_pkt->dst_ip;
    flow.b_port = initiator_pkt->dst_port;
    for (auto& p : ep.packets) {
        if (p.src_ip == flow.a_ip && p.src_port == flow.a_port) {
            flow.capture_order.emplace_back(Dir::a2b, flow.packets_a2b.size());
            flow.packets_a2b.push_back(std::move(p));
        } else {
            flow.capture_order.emplace_back(Dir::b2a, flow.packets_b2a.size());
            flow.packets_b2a.push_back(std::move(p));
        }
    }
    return flow;
}

} // namespace detail

// Groups packets into per-connection episodes. A new pure SYN whose sequence
// number differs from the episode's recorded ISN for that endpoint opens a
// fresh episode on the same 4-tuple (retransmitted SYNs stay put).
inline std::vector<FlowTrace> assemble_flows(const std::vector<PacketRecord>& packets,
                                             Vantage vantage) {
    std::map<detail::EndpointPair, std::size_t> open; // key -> episode slot
    std::vector<detail::OpenEpisode> episodes;        // in creation order
    std::vector<bool> closed;

    for (const auto& p : packets) {
        const auto key = detail::pair_key(p);
        auto it = open.find(key);
        const bool pure_syn = p.has(tcpflag::SYN) && !p.has(tcpflag::ACK);
        if (it != open.end() && pure_syn) {
            auto& ep = episodes[it->second];
            const auto src = std::make_pair(p.src_ip, p.src_port);
            auto isn_it = ep.syn_isn.find(src);
            if (isn_it != ep.syn_isn.end() && isn_it->second != p.seq) {
                closed[it->second] = true; // episode superseded by a new connection
                open.erase(it);
                it = open.end();
            }
        }
        if (it == open.end()) {
            open.emplace(key, episodes.size());
            episodes.emplace_back();
            closed.push_back(false);
            it = open.find(key);
        }
        auto& ep = episodes[it->second];
        if (p.has(tcpflag::SYN)) {
            ep.any_syn = true;
            ep.syn_isn.emplace(std::make_pair(p.src_ip, p.src_port), p.seq);
        }
        ep.packets.push_back(p);
    }

    std::vector<FlowTrace> flows;
    flows.reserve(episodes.size());
    for (auto& ep : episodes) {
        if (!ep.packets.empty()) flows.push_back(detail::finalize(std::move(ep), vantage));
    }
    return flows;
}

} // namespace tracediag
