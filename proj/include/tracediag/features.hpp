#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tracediag/errors.hpp"
#include "tracediag/flow.hpp"

namespace tracediag {

constexpr int CATALOG_VERSION = 1;
constexpr std::size_t DIR_FEATURE_COUNT = 44;
constexpr std::size_t CONN_FEATURE_COUNT = 4;
constexpr std::size_t TRACE_FEATURE_COUNT = 2 * DIR_FEATURE_COUNT + CONN_FEATURE_COUNT; // 92
constexpr std::size_t SIGNATURE_DIM = 2 * TRACE_FEATURE_COUNT; // 184

// Order defines the vector layout; docs/feature_catalog_v1.txt mirrors it.
inline const std::array<const char*, DIR_FEATURE_COUNT>& direction_feature_names() {
    static const std::array<const char*, DIR_FEATURE_COUNT> names = {
        "total_pkts", "ack_pkts", "pure_acks", "unique_bytes", "data_pkts",
        "data_bytes", "rexmt_data_pkts", "rexmt_data_bytes", "out_of_order_pkts",
        "pushed_data_pkts", "syn_pkts", "fin_pkts", "resets",
        "zero_window_probe_pkts", "zero_window_probe_bytes", "sack_permitted",
        "sack_blocks_sent", "max_sack_blocks_in_pkt", "dsack_blocks_sent",
        "window_scale_requested", "adv_window_scale", "timestamp_requested",
        "mss_requested", "max_segm_size", "min_segm_size", "avg_segm_size",
        "max_win_adv", "min_win_adv", "avg_win_adv", "zero_win_adv_count",
        "initial_window_bytes", "initial_window_pkts", "duplicate_acks_sent",
        "triple_dupacks", "max_idle_ms", "throughput_Bps", "data_xmit_ms",
        "rtt_samples", "rtt_min_ms", "rtt_avg_ms", "rtt_max_ms", "rtt_stdev_ms",
        "max_rexmt_of_segment", "missed_data_bytes"};
    return names;
}

inline const std::array<const char*, CONN_FEATURE_COUNT>& connection_feature_names() {
    static const std::array<const char*, CONN_FEATURE_COUNT> names = {
        "duration_s", "total_pkts_both", "handshake_complete", "clean_close"};
    return names;
}

// The 92 per-trace feature names: a2b_*, b2a_*, then connection-level.
inline const std::vector<std::string>& trace_feature_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        v.reserve(TRACE_FEATURE_COUNT);
        for (const char* prefix : {"a2b_", "b2a_"})
            for (const char* n : direction_feature_names()) v.push_back(std::string(prefix) + n);
        for (const char* n : connection_feature_names()) v.emplace_back(n);
        return v;
    }();
    return names;
}

// The 184 signature names: client-vantage vector then server-vantage vector.
inline const std::vector<std::string>& signature_feature_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        v.reserve(SIGNATURE_DIM);
        for (const char* prefix : {"cl_", "sv_"})
            for (const auto& n : trace_feature_names()) v.push_back(prefix + n);
        return v;
    }();
    return names;
}

inline std::size_t trace_feature_index(std::string_view name) {
    static const std::map<std::string, std::size_t, std::less<>> index = [] {
        std::map<std::string, std::size_t, std::less<>> m;
        for (std::size_t i = 0; i < trace_feature_names().size(); ++i)
            m.emplace(trace_feature_names()[i], i);
        return m;
    }();
    auto it = index.find(name);
    if (it == index.end()) throw CatalogMismatch("unknown feature name: " + std::string(name));
    return it->second;
}

struct TraceFeatures {
    std::vector<double> values; // length TRACE_FEATURE_COUNT, catalog order
    int catalog_version = CATALOG_VERSION;

    double at(std::string_view name) const { return values.at(trace_feature_index(name)); }
};

namespace detail {

// Disjoint half-open byte intervals over the unwrapped sequence axis.
class IntervalSet {
public:
    uint64_t total() const {
        uint64_t t = 0;
        for (const auto& [s, e] : m_) t += e - s;
        return t;
    }
    uint64_t overlap(uint64_t s, uint64_t e) const {
        if (s >= e) return 0;
        uint64_t ov = 0;
        auto it = m_.upper_bound(s);
        if (it != m_.begin()) {
            auto prev = std::prev(it);
            if (prev->second > s) it = prev;
        }
        for (; it != m_.end() && it->first < e; ++it)
            ov += std::min(e, it->second) - std::max(s, it->first);
        return ov;
    }
    void insert(uint64_t s, uint64_t e) {
        if (s >= e) return;
        auto it = m_.upper_bound(s);
        if (it != m_.begin()) {
            auto prev = std::prev(it);
            if (prev->second >= s) { s = prev->first; e = std::max(e, prev->second); it = m_.erase(prev); }
        }
        while (it != m_.end() && it->first <= e) {
            e = std::max(e, it->second);
            it = m_.erase(it);
        }
        m_.emplace(s, e);
    }
    bool empty() const { return m_.empty(); }
    uint64_t min_start() const { return m_.begin()->first; }
    uint64_t max_end() const { return m_.rbegin()->second; }
    void clear() { m_.clear(); }

    // interval containing pos, if any
    std::optional<std::pair<uint64_t, uint64_t>> find(uint64_t pos) const {
        auto it = m_.upper_bound(pos);
        if (it == m_.begin()) return std::nullopt;
        auto prev = std::prev(it);
        if (prev->second > pos) return std::make_pair(prev->first, prev->second);
        return std::nullopt;
    }
    const std::map<uint64_t, uint64_t>& intervals() const { return m_; }

private:
    std::map<uint64_t, uint64_t> m_;
};

struct OutstandingSeg {
    uint64_t start, end;
    double sent_at;
    bool retransmitted;
};

// Mutable per-direction accumulator; "this side" is the sender of the
// direction, "peer" is the opposite endpoint.
struct DirAccum {
    // option negotiation (from this side's SYN)
    bool syn_seen = false;
    bool sack_permitted = false;
    bool ws_requested = false;
    uint8_t ws_shift = 0;
    bool ts_requested = false;
    double mss_requested = 0;
    uint64_t isn = 0;

    double total = 0, acks = 0, pure_acks = 0, data_pkts = 0, data_bytes = 0;
    double rexmt_pkts = 0, rexmt_bytes = 0, ooo = 0, psh_data = 0;
    double syn = 0, fin = 0, rst = 0;
    double zwp = 0, zwp_bytes = 0;
    double sack_blocks = 0, max_sack_in_pkt = 0, dsack = 0;
    double dup_acks = 0, triple_dup = 0;
    double zero_win = 0;

    uint32_t max_seg = 0, min_seg = 0;
    uint64_t max_win = 0, min_win = 0;
    double win_sum = 0, win_count = 0;
    uint64_t last_adv_window = std::numeric_limits<uint64_t>::max(); // unknown yet

    bool any_pkt = false;
    double first_t = 0, last_t = 0, max_idle_ms = 0;
    bool any_data = false;
    double first_data_t = 0, last_data_t = 0;

    IntervalSet seen;
    uint64_t highest_data_end = 0;
    uint64_t lowest_data_start = std::numeric_limits<uint64_t>::max();
    std::vector<std::pair<uint64_t, uint64_t>> all_data_ranges;

    std::vector<OutstandingSeg> outstanding;
    std::vector<double> rtt_ms;

    // dup-ack reference: last ACK-bearing packet's (ack, raw window, blocks)
    bool have_ack_ref = false;
    uint32_t ref_ack = 0;
    uint16_t ref_win = 0;
    std::vector<SackBlock> ref_sack;
    int dup_run = 0;

    // initial window: data before the peer's first ACK of data
    bool init_win_open = false; // requires a captured SYN from this side
    bool init_win_closed = false;
    double init_win_bytes = 0, init_win_pkts = 0;

    SeqUnwrapper seq_space; // this side's data space (seqs here, peer acks here)
};

inline double sample_stdev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / double(v.size() - 1));
}

} // namespace detail

// Computes the per-trace statistical feature vector for one connection.
// All counters are deterministic functions of the packet sequence.
inline TraceFeatures extract_trace_features(const FlowTrace& flow) {
    if (flow.total_packets() == 0) throw EmptyFlow("cannot extract features from an empty flow");

    detail::DirAccum acc[2]; // [a2b, b2a]

    auto packet_at = [&](std::size_t merged_idx) -> const PacketRecord& {
        const auto& [dir, idx] = flow.capture_order[merged_idx];
        return dir == Dir::a2b ? flow.packets_a2b[idx] : flow.packets_b2a[idx];
    };

    // scaling is active only when both captured SYNs carried the option
    auto scaling_active = [&] {
        return acc[0].syn_seen && acc[1].syn_seen && acc[0].ws_requested && acc[1].ws_requested;
    };

    for (std::size_t mi = 0; mi < flow.capture_order.size(); ++mi) {
        const auto dir_idx = flow.capture_order[mi].first == Dir::a2b ? 0 : 1;
        auto& d = acc[dir_idx];
        auto& peer = acc[1 - dir_idx];
        const PacketRecord& p = packet_at(mi);
        const double t = p.time_s();

        d.total += 1;
        if (d.any_pkt) d.max_idle_ms = std::max(d.max_idle_ms, (t - d.last_t) * 1e3);
        else { d.first_t = t; d.any_pkt = true; }
        d.last_t = t;

        const bool is_syn = p.has(tcpflag::SYN);
        const bool is_fin = p.has(tcpflag::FIN);
        const bool is_rst = p.has(tcpflag::RST);
        const bool is_ack = p.has(tcpflag::ACK);
        const bool is_data = p.payload_len > 0;

        if (is_syn) {
            d.syn += 1;
            if (!d.syn_seen) {
                d.syn_seen = true;
                d.isn = d.seq_space.unwrap(p.seq);
                d.sack_permitted = p.options.sack_permitted;
                d.ws_requested = p.options.window_scale.has_value();
                d.ws_shift = p.options.window_scale.value_or(0);
                d.ts_requested = p.options.timestamps.has_value();
                d.mss_requested = double(p.options.mss.value_or(0));
                d.init_win_open = true;
            }
        }
        if (is_fin) d.fin += 1;
        if (is_rst) d.rst += 1;
        if (is_ack) d.acks += 1;
        const bool pure_ack = is_ack && !is_data && !is_syn && !is_fin && !is_rst;
        if (pure_ack) d.pure_acks += 1;

        // advertised window (RSTs excluded from window statistics)
        if (!is_rst) {
            uint64_t w = p.window;
            if (!is_syn && scaling_active()) w <<= d.ws_shift;
            if (d.win_count == 0) { d.max_win = d.min_win = w; }
            else { d.max_win = std::max(d.max_win, w); d.min_win = std::min(d.min_win, w); }
            d.win_sum += double(w);
            d.win_count += 1;
            if (w == 0) d.zero_win += 1;
            d.last_adv_window = w;
        }

        // SACK block accounting (sent by this side, ranges in peer's space)
        if (!p.options.sack_blocks.empty()) {
            const auto& blocks = p.options.sack_blocks;
            d.sack_blocks += double(blocks.size());
            d.max_sack_in_pkt = std::max(d.max_sack_in_pkt, double(blocks.size()));
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                bool is_dsack = false;
                if (is_ack && seq_leq(blocks[b].right_edge, p.ack)) is_dsack = true;
                if (b == 0 && blocks.size() >= 2 && seq_geq(blocks[0].left_edge, blocks[1].left_edge) &&
                    seq_leq(blocks[0].right_edge, blocks[1].right_edge))
                    is_dsack = true;
                if (is_dsack) d.dsack += 1;
            }
        }

        // duplicate-ack detection: pure ACK repeating (ack, window, SACK set)
        if (is_ack) {
            if (d.have_ack_ref && p.ack == d.ref_ack && p.window == d.ref_win &&
                p.options.sack_blocks == d.ref_sack) {
                if (pure_ack) {
                    d.dup_acks += 1;
                    d.dup_run += 1;
                    if (d.dup_run == 3) d.triple_dup += 1;
                }
            } else {
                d.have_ack_ref = true;
                d.ref_ack = p.ack;
                d.ref_win = p.window;
                d.ref_sack = p.options.sack_blocks;
                d.dup_run = 0;
            }
        }

        // data-side sequence accounting
        const uint64_t seq64 = d.seq_space.unwrap(p.seq);
        if (is_data) {
            const uint64_t s = seq64 + (is_syn ? 1 : 0); // payload starts after SYN
            const uint64_t e = s + p.payload_len;
            d.data_pkts += 1;
            d.data_bytes += double(p.payload_len);
            if (p.has(tcpflag::PSH)) d.psh_data += 1;
            d.max_seg = std::max(d.max_seg, p.payload_len);
            d.min_seg = d.data_pkts == 1 ? p.payload_len : std::min(d.min_seg, p.payload_len);
            if (!d.any_data) { d.first_data_t = t; d.any_data = true; }
            d.last_data_t = t;

            const uint64_t ov = d.seen.overlap(s, e);
            if (ov > 0) {
                d.rexmt_pkts += 1;
                d.rexmt_bytes += double(ov);
                for (auto& seg : d.outstanding)
                    if (seg.start < e && s < seg.end) seg.retransmitted = true; // Karn
            } else if (d.highest_data_end > 0 && s < d.highest_data_end) {
                d.ooo += 1;
            }
            if (ov < e - s) d.outstanding.push_back({s, e, t, ov > 0});

            // zero-window probe: tiny data while the peer advertised zero
            if (p.payload_len <= 1 && peer.last_adv_window == 0) {
                d.zwp += 1;
                d.zwp_bytes += double(p.payload_len);
            }

            if (d.init_win_open && !d.init_win_closed) {
                d.init_win_bytes += double(p.payload_len);
                d.init_win_pkts += 1;
            }

            d.seen.insert(s, e);
            d.all_data_ranges.emplace_back(s, e);
            d.highest_data_end = std::max(d.highest_data_end, e);
            d.lowest_data_start = std::min(d.lowest_data_start, s);
        }

        // this packet acknowledges the peer's data
        if (is_ack) {
            const uint64_t ack64 = peer.seq_space.unwrap(p.ack);
            if (peer.init_win_open && !peer.init_win_closed && peer.syn_seen &&
                ack64 > peer.isn + 1)
                peer.init_win_closed = true;
            auto& outs = peer.outstanding;
            for (auto it = outs.begin(); it != outs.end();) {
                if (it->end <= ack64) {
                    if (!it->retransmitted) peer.rtt_ms.push_back((t - it->sent_at) * 1e3);
                    it = outs.erase(it);
                } else {
                    ++it;
                }
            }
        }
    }

    TraceFeatures out;
    out.values.assign(TRACE_FEATURE_COUNT, 0.0);
    for (int di = 0; di < 2; ++di) {
        auto& d = acc[di];
        const std::size_t base = std::size_t(di) * DIR_FEATURE_COUNT;
        auto set = [&](std::size_t off, double v) { out.values[base + off] = v; };

        double unique = double(d.seen.total());
        double rtt_min = 0, rtt_avg = 0, rtt_max = 0, rtt_sd = 0;
        if (!d.rtt_ms.empty()) {
            rtt_min = *std::min_element(d.rtt_ms.begin(), d.rtt_ms.end());
            rtt_max = *std::max_element(d.rtt_ms.begin(), d.rtt_ms.end());
            double s = 0;
            for (double x : d.rtt_ms) s += x;
            rtt_avg = s / double(d.rtt_ms.size());
            rtt_sd = detail::sample_stdev(d.rtt_ms);
        }
        double data_span_s = d.any_data ? (d.last_data_t - d.first_data_t) : 0.0;
        double throughput = data_span_s > 0 ? unique / data_span_s : 0.0;

        // per-byte transmit counts; max retransmissions of any one byte
        double max_rexmt = 0;
        if (!d.all_data_ranges.empty()) {
            std::map<uint64_t, int> delta;
            for (const auto& [s, e] : d.all_data_ranges) { delta[s] += 1; delta[e] -= 1; }
            int cover = 0, peak = 0;
            for (const auto& [pos, dl] : delta) { cover += dl; peak = std::max(peak, cover); }
            max_rexmt = double(peak - 1);
        }
        double missed = 0;
        if (!d.seen.empty()) missed = double((d.seen.max_end() - d.seen.min_start()) - d.seen.total());

        set(0, d.total);
        set(1, d.acks);
        set(2, d.pure_acks);
        set(3, unique);
        set(4, d.data_pkts);
        set(5, d.data_bytes);
        set(6, d.rexmt_pkts);
        set(7, d.rexmt_bytes);
        set(8, d.ooo);
        set(9, d.psh_data);
        set(10, d.syn);
        set(11, d.fin);
        set(12, d.rst);
        set(13, d.zwp);
        set(14, d.zwp_bytes);
        set(15, d.sack_permitted ? 1 : 0);
        set(16, d.sack_blocks);
        set(17, d.max_sack_in_pkt);
        set(18, d.dsack);
        set(19, d.ws_requested ? 1 : 0);
        set(20, double(d.ws_requested ? d.ws_shift : 0));
        set(21, d.ts_requested ? 1 : 0);
        set(22, d.mss_requested);
        set(23, double(d.max_seg));
        set(24, d.data_pkts > 0 ? double(d.min_seg) : 0);
        set(25, d.data_pkts > 0 ? d.data_bytes / d.data_pkts : 0);
        set(26, d.win_count > 0 ? double(d.max_win) : 0);
        set(27, d.win_count > 0 ? double(d.min_win) : 0);
        set(28, d.win_count > 0 ? d.win_sum / d.win_count : 0);
        set(29, d.zero_win);
        set(30, d.init_win_bytes);
        set(31, d.init_win_pkts);
        set(32, d.dup_acks);
        set(33, d.triple_dup);
        set(34, d.max_idle_ms);
        set(35, throughput);
        set(36, data_span_s * 1e3);
        set(37, double(d.rtt_ms.size()));
        set(38, rtt_min);
        set(39, rtt_avg);
        set(40, rtt_max);
        set(41, rtt_sd);
        set(42, max_rexmt);
        set(43, missed);
    }

    // connection-level features
    const std::size_t cbase = 2 * DIR_FEATURE_COUNT;
    double first_t = std::numeric_limits<double>::max(), last_t = 0;
    for (int di = 0; di < 2; ++di) {
        if (!acc[di].any_pkt) continue;
        first_t = std::min(first_t, acc[di].first_t);
        last_t = std::max(last_t, acc[di].last_t);
    }
    out.values[cbase + 0] = last_t - first_t;
    out.values[cbase + 1] = acc[0].total + acc[1].total;

    bool synack_seen = false;
    uint64_t b_isn = 0;
    if (acc[1].syn_seen) { synack_seen = true; b_isn = acc[1].isn; }
    bool hs_complete = false;
    if (acc[0].syn_seen && synack_seen) {
        // any initiator packet acking past the responder's ISN completes it
        for (const auto& p : flow.packets_a2b) {
            if (p.has(tcpflag::ACK) && seq_geq(p.ack, uint32_t(b_isn) + 1)) {
                hs_complete = true;
                break;
            }
        }
    }
    out.values[cbase + 2] = hs_complete ? 1 : 0;
    out.values[cbase + 3] = (acc[0].fin > 0 && acc[1].fin > 0 && acc[0].rst == 0 && acc[1].rst == 0)
                                ? 1 : 0;
    return out;
}

// Concatenates a client-vantage and a server-vantage feature vector into the
// combined signature vector (client first).
inline std::vector<double> build_signature(const TraceFeatures& client,
                                           const TraceFeatures& server) {
    if (client.catalog_version != server.catalog_version)
        throw CatalogMismatch("client/server feature catalogs differ");
    if (client.values.size() != TRACE_FEATURE_COUNT || server.values.size() != TRACE_FEATURE_COUNT)
        throw CatalogMismatch("feature vector length does not match the catalog");
    std::vector<double> x;
    x.reserve(SIGNATURE_DIM);
    x.insert(x.end(), client.values.begin(), client.values.end());
    x.insert(x.end(), server.values.begin(), server.values.end());
    return x;
}

} // namespace tracediag
