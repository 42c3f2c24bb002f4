#pragma once

// Deterministic discrete-event emulation of one bulk TCP transfer over a
// rate/delay/loss link, with injectable client faults, captured at both
// endpoints. Replaces a hardware testbed: the congestion-control variants are
// growth-law abstractions, not kernel-faithful stacks.
//
// Shape of a run: client connects, sends a small request, the server streams
// bytes_to_send back and closes; the client closes after it. Loss is Bernoulli
// per packet per direction, applied downstream of the sending vantage, plus
// drop-tail on a fixed-depth bottleneck FIFO. No reordering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "tracediag/errors.hpp"
#include "tracediag/features.hpp" // detail::IntervalSet
#include "tracediag/packet.hpp"
#include "tracediag/pcap.hpp"

namespace tracediag {

enum class TcpVariant { reno, cubic_like, bic_like };

inline std::string to_string(TcpVariant v) {
    switch (v) {
    case TcpVariant::reno: return "reno";
    case TcpVariant::cubic_like: return "cubic_like";
    case TcpVariant::bic_like: return "bic_like";
    }
    return "reno";
}

inline TcpVariant parse_variant(const std::string& s) {
    if (s == "reno") return TcpVariant::reno;
    if (s == "cubic_like") return TcpVariant::cubic_like;
    if (s == "bic_like") return TcpVariant::bic_like;
    throw ConfigInvalid("unknown tcp variant: " + s);
}

struct LinkConfig {
    double rate_Mbps = 80.0;
    double one_way_delay_ms = 10.0;
    double loss_pct = 0.0; // independent per packet, per direction
    uint64_t seed = 1;
};

struct FaultConfig {
    bool sack_disabled = false;
    bool dsack_disabled = false;
    std::optional<uint64_t> read_buffer_bytes;  // caps the bulk receiver's buffer
    std::optional<uint64_t> write_buffer_bytes; // caps the bulk sender's buffer
};

struct TransferConfig {
    uint64_t bytes_to_send = 200000; // bulk payload, server -> client
    uint32_t mss = 1460;
    TcpVariant tcp_variant = TcpVariant::reno;
    uint32_t initial_cwnd = 10; // segments
};

struct SimResult {
    std::vector<PacketRecord> client_vantage;
    std::vector<PacketRecord> server_vantage;
    bool stalled = false;
    double duration_s = 0.0; // simulated clock at the last event
};

namespace emu {

constexpr uint64_t REQUEST_BYTES = 256;
constexpr int QUEUE_DEPTH_PKTS = 100;
constexpr int64_t APP_DRAIN_PERIOD_NS = 5'000'000; // client app read tick
constexpr uint8_t WINDOW_SCALE_SHIFT = 7;
constexpr uint64_t DEFAULT_RCV_BUFFER = uint64_t(65535) << WINDOW_SCALE_SHIFT;
constexpr int64_t RTO_MIN_NS = 200'000'000;
constexpr int64_t RTO_MAX_NS = 60'000'000'000;
constexpr int64_t RTO_INITIAL_NS = 1'000'000'000;
constexpr int64_t SIM_TIME_CAP_NS = 600'000'000'000; // stall guard
constexpr std::size_t EVENT_CAP = 5'000'000;

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed)) {}
    uint64_t next() { return state_ = splitmix64(state_); }
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

private:
    uint64_t state_;
};

struct Link {
    double rate_bps;
    int64_t delay_ns;
    double loss_p;
    Rng rng;
    std::deque<int64_t> departures; // scheduled departure times (FIFO queue)

    Link(double rate_Mbps, double delay_ms, double loss_pct, uint64_t seed)
        : rate_bps(rate_Mbps * 1e6), delay_ns(int64_t(delay_ms * 1e6)),
          loss_p(loss_pct / 100.0), rng(seed) {}

    // arrival time at the far end, or nullopt when the packet is lost
    std::optional<int64_t> send(std::size_t frame_bytes, int64_t now) {
        if (loss_p > 0 && rng.uniform() < loss_p) return std::nullopt;
        while (!departures.empty() && departures.front() <= now) departures.pop_front();
        if (int(departures.size()) >= QUEUE_DEPTH_PKTS) return std::nullopt; // tail drop
        const int64_t start = departures.empty() ? now : std::max(now, departures.back());
        const int64_t ser = int64_t(double(frame_bytes) * 8.0 * 1e9 / rate_bps);
        const int64_t dep = start + ser;
        departures.push_back(dep);
        return dep + delay_ns;
    }
};

struct Sim;

struct SegTime {
    uint64_t start;
    int64_t sent_at;
    bool retransmitted;
};

struct Endpoint {
    Sim* sim = nullptr;
    int idx = 0; // 0 client, 1 server
    uint32_t ip = 0, peer_ip = 0;
    uint16_t port = 0, peer_port = 0;

    // configuration
    uint32_t mss = 1460;
    uint64_t snd_buf_cap = ~0ull >> 2;
    uint64_t rcv_buf_cap = DEFAULT_RCV_BUFFER;
    bool offer_sack = true;
    bool dsack_enabled = true;
    TcpVariant variant = TcpVariant::reno;
    uint32_t initial_cwnd_seg = 10;

    // negotiated
    bool syn_sent = false, established = false;
    bool sack_ok = false, ws_ok = false;
    uint8_t ws_local = WINDOW_SCALE_SHIFT, ws_peer = 0;
    uint32_t last_peer_tsval = 0;

    // send side (absolute 64-bit sequence space; wire carries the low 32 bits)
    uint64_t iss = 0;
    uint64_t snd_una = 0, snd_nxt = 0, snd_max = 0;
    uint64_t data_start = 0;    // iss + 1
    uint64_t app_total_end = 0; // exclusive end of all app data
    uint64_t app_end = 0;       // end of data admitted into the send buffer
    bool app_writing = false;
    bool fin_pending = false, fin_acked = false;
    uint64_t fin_seq = 0;

    uint64_t cwnd = 0, ssthresh = ~0ull >> 2;
    int dupacks = 0;
    bool in_recovery = false;
    uint64_t recover = 0;
    detail::IntervalSet sacked;
    detail::IntervalSet recovery_rtxed;
    struct { double w_max_seg = 0; int64_t epoch_start = -1; } cubic;
    struct { double w_max_seg = 0; } bic;

    std::map<uint64_t, SegTime> seg_times; // keyed by segment end
    int64_t srtt = -1, rttvar = 0, rto = RTO_INITIAL_NS;
    uint64_t rto_gen = 0;
    bool rto_armed = false;
    uint64_t tlp_gen = 0;
    bool tlp_armed = false, tlp_spent = false;
    uint64_t tlp_una_at_arm = 0;
    uint64_t persist_gen = 0;
    bool persist_armed = false;
    int64_t persist_interval = RTO_INITIAL_NS;

    uint64_t peer_rwnd = 65535; // usable bytes from snd_una

    // receive side (peer's absolute space via unwrapping)
    SeqUnwrapper peer_space;
    uint64_t irs = 0, rcv_nxt = 0, app_read = 0;
    bool peer_syn_seen = false, peer_fin_seen = false;
    uint64_t peer_fin_seq = 0;
    detail::IntervalSet received;
    std::vector<std::pair<uint64_t, uint64_t>> ooo_recency; // most recent first

    bool is_client() const { return idx == 0; }
    uint64_t inflight() const { return snd_max - snd_una; }

    uint64_t ooo_bytes() const {
        uint64_t t = 0;
        for (const auto& [s, e] : received.intervals())
            if (s >= rcv_nxt) t += e - s;
        return t;
    }
    uint64_t rcv_free() const {
        const uint64_t used = (rcv_nxt - app_read) + ooo_bytes();
        return used >= rcv_buf_cap ? 0 : rcv_buf_cap - used;
    }
    uint16_t window_field(bool on_syn) const {
        uint64_t free = rcv_free();
        // receiver-side SWS avoidance: hold the window at zero until a
        // sensible fraction of the buffer opens up (RFC 1122)
        if (!on_syn && free < std::min<uint64_t>(mss, rcv_buf_cap / 2)) free = 0;
        if (on_syn || !ws_ok) return uint16_t(std::min<uint64_t>(free, 65535));
        return uint16_t(std::min<uint64_t>(free >> ws_local, 65535));
    }
    uint64_t advertised_effective(bool on_syn) const {
        const uint16_t raw = window_field(on_syn);
        return (on_syn || !ws_ok) ? raw : (uint64_t(raw) << ws_local);
    }

    void start_connect(int64_t now);
    void app_write(uint64_t n, bool close_after, int64_t now);
    void on_packet(const PacketRecord& p, int64_t now);
    void try_send(int64_t now);
    void on_rto(int64_t now);
    void on_tlp(int64_t now);
    void on_persist(int64_t now);
    void on_drain(int64_t now);

    void arm_rto(int64_t now);
    void disarm_rto() { rto_armed = false; ++rto_gen; }
    void arm_tlp(int64_t now);
    void arm_persist(int64_t now);
    void variant_on_loss();
    void variant_on_ack(uint64_t acked_bytes, int64_t now);
    void enter_recovery(int64_t now);
    void send_segment(uint64_t start, uint64_t len, bool fin, int64_t now);
    void send_ack(int64_t now, std::optional<std::pair<uint64_t, uint64_t>> dsack,
                  std::optional<std::pair<uint64_t, uint64_t>> dsack_enclosing);
    std::optional<std::pair<uint64_t, uint64_t>> next_hole() const;
    uint64_t pipe_estimate() const;
};

struct Event {
    int64_t t;
    uint64_t order;
    enum Kind { deliver, rto, tlp, persist, drain } kind;
    int endpoint;
    uint64_t gen;
    PacketRecord packet;

    bool operator>(const Event& o) const {
        if (t != o.t) return t > o.t;
        return order > o.order;
    }
};

struct Sim {
    Endpoint ep[2];
    Link link_up;   // client -> server
    Link link_down; // server -> client
    std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events;
    uint64_t event_order = 0;
    int64_t now = 0;
    std::vector<PacketRecord> vantage[2];
    bool closed = false;
    bool stalled = false;
    int64_t close_time = 0;
    std::size_t processed = 0;
    Rng isn_rng;
    uint64_t transfer_bytes;

    Sim(const LinkConfig& link, uint64_t transfer)
        : link_up(link.rate_Mbps, link.one_way_delay_ms, link.loss_pct,
                  splitmix64(link.seed ^ 0x11)),
          link_down(link.rate_Mbps, link.one_way_delay_ms, link.loss_pct,
                    splitmix64(link.seed ^ 0x22)),
          isn_rng(splitmix64(link.seed ^ 0x33)), transfer_bytes(transfer) {}

    void schedule(int64_t t, Event::Kind kind, int endpoint, uint64_t gen = 0,
                  PacketRecord pkt = {}) {
        events.push(Event{t, event_order++, kind, endpoint, gen, std::move(pkt)});
    }

    static void stamp(PacketRecord& p, int64_t t) {
        p.ts_sec = uint32_t(t / 1'000'000'000);
        p.ts_usec = uint32_t((t % 1'000'000'000) / 1000);
    }

    // capture at the near vantage, then subject the frame to the path
    void transmit(int from, PacketRecord p) {
        stamp(p, now);
        p.captured_len = p.original_len = encoded_frame_len(p);
        vantage[from].push_back(p);
        Link& l = from == 0 ? link_up : link_down;
        if (auto arrival = l.send(p.captured_len, now))
            schedule(*arrival, Event::deliver, 1 - from, 0, std::move(p));
    }

    bool both_done() const {
        return ep[0].fin_acked && ep[1].fin_acked && ep[0].peer_fin_seen &&
               ep[1].peer_fin_seen;
    }

    void run() {
        while (!events.empty()) {
            Event ev = events.top();
            events.pop();
            ++processed;
            if (ev.t > SIM_TIME_CAP_NS || processed > EVENT_CAP) {
                stalled = true;
                break;
            }
            now = ev.t;
            Endpoint& e = ep[ev.endpoint];
            switch (ev.kind) {
            case Event::deliver: {
                PacketRecord p = ev.packet;
                stamp(p, now);
                vantage[ev.endpoint].push_back(p);
                e.on_packet(p, now);
                break;
            }
            case Event::rto:
                if (e.rto_armed && ev.gen == e.rto_gen) { e.rto_armed = false; e.on_rto(now); }
                break;
            case Event::tlp:
                if (e.tlp_armed && ev.gen == e.tlp_gen) { e.tlp_armed = false; e.on_tlp(now); }
                break;
            case Event::persist:
                if (e.persist_armed && ev.gen == e.persist_gen) {
                    e.persist_armed = false;
                    e.on_persist(now);
                }
                break;
            case Event::drain:
                if (!closed) {
                    e.on_drain(now);
                    schedule(now + APP_DRAIN_PERIOD_NS, Event::drain, ev.endpoint);
                }
                break;
            }
            if (!closed && both_done()) {
                closed = true;
                close_time = now;
                for (auto& endpoint : ep) {
                    endpoint.disarm_rto();
                    endpoint.persist_armed = false;
                    endpoint.tlp_armed = false;
                }
            }
        }
        if (!closed) stalled = true;
    }
};

// ---- Endpoint implementation ----

inline void Endpoint::arm_rto(int64_t now) {
    rto_armed = true;
    ++rto_gen;
    sim->schedule(now + rto, Event::rto, idx, rto_gen);
}

inline void Endpoint::arm_tlp(int64_t now) {
    if (srtt < 0 || tlp_spent || in_recovery) return;
    tlp_armed = true;
    ++tlp_gen;
    tlp_una_at_arm = snd_una;
    const int64_t pto = std::max<int64_t>(2 * srtt, 10'000'000);
    sim->schedule(now + pto, Event::tlp, idx, tlp_gen);
}

inline void Endpoint::arm_persist(int64_t now) {
    persist_armed = true;
    ++persist_gen;
    sim->schedule(now + persist_interval, Event::persist, idx, persist_gen);
}

inline void Endpoint::variant_on_loss() {
    const double cwnd_seg = double(cwnd) / double(mss);
    switch (variant) {
    case TcpVariant::reno:
        break;
    case TcpVariant::cubic_like:
        cubic.w_max_seg = cwnd_seg;
        cubic.epoch_start = -1;
        break;
    case TcpVariant::bic_like:
        bic.w_max_seg = cwnd_seg;
        break;
    }
}

inline double variant_decrease(TcpVariant v) {
    switch (v) {
    case TcpVariant::reno: return 0.5;
    case TcpVariant::cubic_like: return 0.7;
    case TcpVariant::bic_like: return 0.8;
    }
    return 0.5;
}

inline void Endpoint::variant_on_ack(uint64_t acked_bytes, int64_t now) {
    if (cwnd < ssthresh) { // slow start, all variants
        cwnd += std::min<uint64_t>(acked_bytes, mss);
        return;
    }
    switch (variant) {
    case TcpVariant::reno:
        cwnd += std::max<uint64_t>(1, uint64_t(mss) * mss / cwnd);
        break;
    case TcpVariant::cubic_like: {
        if (cubic.epoch_start < 0) {
            cubic.epoch_start = now;
            cubic.w_max_seg = std::max(cubic.w_max_seg, double(cwnd) / mss);
        }
        const double t = double(now - cubic.epoch_start) * 1e-9;
        const double c = 0.4, beta = 0.7;
        const double k = std::cbrt(cubic.w_max_seg * (1.0 - beta) / c);
        const double target_seg = c * (t - k) * (t - k) * (t - k) + cubic.w_max_seg;
        const double target = target_seg * double(mss);
        if (target > double(cwnd))
            cwnd += std::max<uint64_t>(
                1, uint64_t((target - double(cwnd)) / double(cwnd) * double(mss)));
        else
            cwnd += std::max<uint64_t>(1, uint64_t(mss) * mss / (100 * cwnd));
        break;
    }
    case TcpVariant::bic_like: {
        const double cwnd_seg = double(cwnd) / mss;
        double inc_seg;
        if (cwnd_seg < bic.w_max_seg)
            inc_seg = std::clamp((bic.w_max_seg - cwnd_seg) / 2.0, 1.0, 32.0);
        else
            inc_seg = std::clamp(cwnd_seg - bic.w_max_seg + 1.0, 1.0, 32.0);
        cwnd += std::max<uint64_t>(1, uint64_t(inc_seg * double(mss) * double(mss) / double(cwnd)));
        break;
    }
    }
}

inline void Endpoint::start_connect(int64_t now) {
    iss = (uint64_t(1) << 32) | (sim->isn_rng.next() & 0xffffffffull);
    snd_una = snd_nxt = snd_max = iss;
    data_start = app_end = app_total_end = iss + 1;
    cwnd = uint64_t(initial_cwnd_seg) * mss;
    syn_sent = true;
    PacketRecord p;
    p.src_ip = ip;
    p.dst_ip = peer_ip;
    p.src_port = port;
    p.dst_port = peer_port;
    p.seq = uint32_t(iss);
    p.flags = tcpflag::SYN;
    p.window = window_field(true);
    p.options.mss = uint16_t(mss);
    p.options.window_scale = ws_local;
    if (offer_sack) p.options.sack_permitted = true;
    p.options.timestamps = {uint32_t(now / 1'000'000), 0};
    snd_max = snd_nxt = iss + 1; // SYN consumes one sequence unit
    seg_times[iss + 1] = {iss, now, false};
    sim->transmit(idx, p);
    arm_rto(now);
}

inline void Endpoint::app_write(uint64_t n, bool close_after, int64_t now) {
    app_writing = true;
    app_total_end = data_start + n;
    app_end = std::min(app_total_end, snd_una + snd_buf_cap);
    if (close_after) {
        fin_pending = true;
        fin_seq = app_total_end;
    }
    try_send(now);
}

inline uint64_t Endpoint::pipe_estimate() const {
    uint64_t sacked_above = 0;
    for (const auto& [s, e] : sacked.intervals()) {
        if (e <= snd_una) continue;
        sacked_above += e - std::max(s, snd_una);
    }
    const uint64_t base = snd_max - snd_una;
    const uint64_t rtx = recovery_rtxed.total();
    return base > sacked_above ? base - sacked_above + rtx : rtx;
}

inline std::optional<std::pair<uint64_t, uint64_t>> Endpoint::next_hole() const {
    const uint64_t data_end = std::min(snd_max, fin_seq ? fin_seq : snd_max);
    uint64_t pos = snd_una;
    while (pos < data_end) {
        if (auto blk = sacked.find(pos)) { pos = blk->second; continue; }
        if (auto rtx = recovery_rtxed.find(pos)) { pos = rtx->second; continue; }
        uint64_t end = data_end;
        for (const auto& [s, e] : sacked.intervals())
            if (s > pos) { end = std::min(end, s); break; }
        for (const auto& [s, e] : recovery_rtxed.intervals())
            if (s > pos) { end = std::min(end, s); break; }
        return std::make_pair(pos, end);
    }
    return std::nullopt;
}

inline void Endpoint::send_segment(uint64_t start, uint64_t len, bool fin, int64_t now) {
    PacketRecord p;
    p.src_ip = ip;
    p.dst_ip = peer_ip;
    p.src_port = port;
    p.dst_port = peer_port;
    p.seq = uint32_t(start);
    p.ack = uint32_t(rcv_nxt);
    p.flags = uint8_t(tcpflag::ACK | (fin ? tcpflag::FIN : 0));
    p.payload_len = uint32_t(len);
    p.window = window_field(false);
    p.options.timestamps = {uint32_t(now / 1'000'000), last_peer_tsval};
    const uint64_t end = start + len + (fin ? 1 : 0);
    if (len > 0 && start + len == app_end) p.flags |= tcpflag::PSH; // buffer drained

    if (start < snd_max) { // Karn: resends poison overlapped timing entries
        for (auto& [seg_end, t] : seg_times)
            if (t.start < end && start < seg_end) t.retransmitted = true;
    }
    if (end > snd_max)
        seg_times[end] = {start, now, start < snd_max};
    else if (!seg_times.count(end))
        seg_times[end] = {start, now, true};

    snd_max = std::max(snd_max, end);
    snd_nxt = std::max(snd_nxt, end);
    sim->transmit(idx, p);
    if (!rto_armed) arm_rto(now);
}

inline void Endpoint::send_ack(int64_t now, std::optional<std::pair<uint64_t, uint64_t>> dsack,
                               std::optional<std::pair<uint64_t, uint64_t>> dsack_enclosing) {
    PacketRecord p;
    p.src_ip = ip;
    p.dst_ip = peer_ip;
    p.src_port = port;
    p.dst_port = peer_port;
    p.seq = uint32_t(snd_nxt);
    p.ack = uint32_t(rcv_nxt);
    p.flags = tcpflag::ACK;
    p.window = window_field(false);
    p.options.timestamps = {uint32_t(now / 1'000'000), last_peer_tsval};
    if (sack_ok) {
        std::size_t room = 3; // TS plus three blocks fill the 40-byte option space
        if (dsack && dsack_enabled) {
            p.options.sack_blocks.push_back({uint32_t(dsack->first), uint32_t(dsack->second)});
            --room;
            if (dsack_enclosing && room > 0) {
                p.options.sack_blocks.push_back(
                    {uint32_t(dsack_enclosing->first), uint32_t(dsack_enclosing->second)});
                --room;
            }
        }
        for (const auto& [s, e] : ooo_recency) {
            if (room == 0) break;
            if (dsack_enclosing && s == dsack_enclosing->first && e == dsack_enclosing->second)
                continue;
            p.options.sack_blocks.push_back({uint32_t(s), uint32_t(e)});
            --room;
        }
    }
    sim->transmit(idx, p);
}

inline void Endpoint::enter_recovery(int64_t now) {
    variant_on_loss();
    ssthresh = std::max<uint64_t>(uint64_t(double(inflight()) * variant_decrease(variant)),
                                  2 * uint64_t(mss));
    cwnd = ssthresh;
    in_recovery = true;
    recover = snd_max;
    recovery_rtxed.clear();
    uint64_t start = snd_una;
    uint64_t end = std::min(snd_una + mss, fin_seq ? fin_seq : snd_max);
    if (sack_ok) {
        if (auto hole = next_hole()) {
            start = hole->first;
            end = std::min(hole->first + mss, hole->second);
        }
    }
    if (end > start) {
        send_segment(start, end - start, false, now);
        recovery_rtxed.insert(start, end);
    } else if (fin_pending && !fin_acked && snd_una == fin_seq) {
        send_segment(fin_seq, 0, true, now);
    }
}

inline void Endpoint::on_packet(const PacketRecord& p, int64_t now) {
    if (p.options.timestamps) last_peer_tsval = p.options.timestamps->first;
    const bool is_syn = p.has(tcpflag::SYN);
    const bool is_ack = p.has(tcpflag::ACK);
    const bool is_fin = p.has(tcpflag::FIN);

    if (is_syn) {
        const uint64_t seq_abs = peer_space.unwrap(p.seq);
        if (!peer_syn_seen) {
            peer_syn_seen = true;
            irs = seq_abs;
            rcv_nxt = app_read = irs + 1;
            if (p.options.mss) mss = std::min(mss, uint32_t(*p.options.mss));
            ws_ok = p.options.window_scale.has_value(); // this side always offers
            ws_peer = p.options.window_scale.value_or(0);
            sack_ok = offer_sack && p.options.sack_permitted;
        }
        if (!is_ack) {
            // passive open (server): reply SYN|ACK; duplicates get a resend
            if (!syn_sent) {
                iss = (uint64_t(1) << 32) | (sim->isn_rng.next() & 0xffffffffull);
                snd_una = snd_nxt = snd_max = iss;
                data_start = app_end = app_total_end = iss + 1;
                cwnd = uint64_t(initial_cwnd_seg) * mss;
                syn_sent = true;
            }
            PacketRecord r;
            r.src_ip = ip;
            r.dst_ip = peer_ip;
            r.src_port = port;
            r.dst_port = peer_port;
            r.seq = uint32_t(iss);
            r.ack = uint32_t(rcv_nxt);
            r.flags = tcpflag::SYN | tcpflag::ACK;
            r.window = window_field(true);
            r.options.mss = uint16_t(mss);
            r.options.window_scale = ws_local;
            if (sack_ok) r.options.sack_permitted = true;
            r.options.timestamps = {uint32_t(now / 1'000'000), last_peer_tsval};
            snd_nxt = snd_max = iss + 1;
            if (!seg_times.count(iss + 1)) seg_times[iss + 1] = {iss, now, false};
            sim->transmit(idx, r);
            if (!rto_armed) arm_rto(now);
            return;
        }
    }

    if (is_ack && syn_sent) {
        const int64_t diff = int32_t(p.ack - uint32_t(snd_una));
        const uint64_t ack_abs = uint64_t(int64_t(snd_una) + diff);
        peer_rwnd = (is_syn || !ws_ok) ? uint64_t(p.window)
                                       : uint64_t(p.window) << ws_peer;

        if (ack_abs > snd_una && ack_abs <= snd_max) {
            int64_t sample = -1;
            for (auto it = seg_times.begin(); it != seg_times.end();) {
                if (it->first <= ack_abs) {
                    if (!it->second.retransmitted) sample = now - it->second.sent_at;
                    it = seg_times.erase(it);
                } else {
                    ++it;
                }
            }
            if (sample >= 0) { // RFC 6298 estimator
                if (srtt < 0) {
                    srtt = sample;
                    rttvar = sample / 2;
                } else {
                    const int64_t err = std::abs(srtt - sample);
                    rttvar = (3 * rttvar + err) / 4;
                    srtt = (7 * srtt + sample) / 8;
                }
                rto = std::clamp(srtt + std::max<int64_t>(4 * rttvar, 1'000'000),
                                 RTO_MIN_NS, RTO_MAX_NS);
            }
            const uint64_t acked_bytes = ack_abs - snd_una;
            snd_una = ack_abs;
            snd_nxt = std::max(snd_nxt, snd_una);
            dupacks = 0;
            tlp_spent = false;
            tlp_armed = false;
            if (!established) {
                established = true;
                if (is_client()) {
                    send_ack(now, std::nullopt, std::nullopt); // handshake ack
                    // bidirectional bulk: the client uploads while downloading
                    app_write(sim->transfer_bytes, false, now);
                }
            }
            if (fin_pending && ack_abs > fin_seq) fin_acked = true;
            if (app_writing) app_end = std::min(app_total_end, snd_una + snd_buf_cap);
            for (const auto& b : p.options.sack_blocks) {
                const int64_t ds = int32_t(b.left_edge - uint32_t(snd_una));
                const int64_t de = int32_t(b.right_edge - uint32_t(snd_una));
                if (ds >= 0 && de > ds)
                    sacked.insert(snd_una + uint64_t(ds), snd_una + uint64_t(de));
            }
            if (in_recovery) {
                if (ack_abs >= recover) {
                    in_recovery = false;
                    cwnd = ssthresh;
                    recovery_rtxed.clear();
                } else if (!sack_ok) {
                    // NewReno partial ack: retransmit the next in-sequence hole
                    const uint64_t end = std::min(snd_una + mss, fin_seq ? fin_seq : snd_max);
                    if (end > snd_una) send_segment(snd_una, end - snd_una, false, now);
                    else if (fin_pending && !fin_acked && snd_una == fin_seq)
                        send_segment(fin_seq, 0, true, now);
                }
            } else {
                variant_on_ack(acked_bytes, now);
            }
            if (inflight() > 0) arm_rto(now);
            else disarm_rto();
        } else if (ack_abs == snd_una && inflight() > 0 && p.payload_len == 0 && !is_syn &&
                   !is_fin && (sack_ok ? !p.options.sack_blocks.empty() : true)) {
            // loss signal: with SACK enabled only SACK-bearing acks count, so
            // plain window updates never trip fast retransmit
            for (const auto& b : p.options.sack_blocks) {
                const int64_t ds = int32_t(b.left_edge - uint32_t(snd_una));
                const int64_t de = int32_t(b.right_edge - uint32_t(snd_una));
                if (ds >= 0 && de > ds)
                    sacked.insert(snd_una + uint64_t(ds), snd_una + uint64_t(de));
            }
            ++dupacks;
            if (!in_recovery && dupacks == 3) enter_recovery(now);
            else if (in_recovery && !sack_ok) cwnd += mss; // classic inflation
        }
        if (persist_armed && peer_rwnd > 0) { persist_armed = false; ++persist_gen; }
    }

    // inbound data / fin
    if (p.payload_len > 0 || is_fin) {
        if (!peer_syn_seen) { // partial capture: prime from the first segment
            peer_syn_seen = true;
            irs = peer_space.unwrap(p.seq);
            rcv_nxt = app_read = irs;
        }
        const uint64_t s = is_syn ? peer_space.unwrap(p.seq) + 1 : peer_space.unwrap(p.seq);
        const uint64_t e = s + p.payload_len;
        std::optional<std::pair<uint64_t, uint64_t>> dsack, dsack_enclosing;

        if (p.payload_len > 0) {
            const bool below = e <= rcv_nxt;
            const uint64_t dup = below ? p.payload_len : received.overlap(s, e);
            if (below || dup == p.payload_len) {
                dsack = std::make_pair(s, e); // full duplicate arrival
                if (s > rcv_nxt) {
                    if (auto blk = received.find(s)) dsack_enclosing = blk;
                }
            } else {
                const uint64_t new_bytes = p.payload_len - dup;
                if (rcv_free() >= new_bytes) {
                    received.insert(std::max(s, rcv_nxt), e);
                    if (s > rcv_nxt) {
                        auto merged = received.find(s);
                        std::vector<std::pair<uint64_t, uint64_t>> next;
                        next.push_back(*merged);
                        for (const auto& b : ooo_recency)
                            if (!(b.first >= merged->first && b.second <= merged->second))
                                next.push_back(b);
                        ooo_recency = std::move(next);
                    } else if (e > rcv_nxt) {
                        if (auto blk = received.find(rcv_nxt))
                            rcv_nxt = blk->second;
                        else
                            rcv_nxt = e;
                        if (!is_client()) app_read = rcv_nxt; // server app drains inline
                        for (auto it = ooo_recency.begin(); it != ooo_recency.end();)
                            it = it->second <= rcv_nxt ? ooo_recency.erase(it) : ++it;
                    }
                }
                // else: no buffer space (window probe or overshoot), payload dropped
            }
        }
        if (is_fin && !peer_fin_seen) {
            peer_fin_seq = e;
            if (rcv_nxt == peer_fin_seq) {
                rcv_nxt = peer_fin_seq + 1;
                if (!is_client()) app_read = rcv_nxt;
                peer_fin_seen = true;
            }
        }
        send_ack(now, dsack, dsack_enclosing);

        // the server streams its response once the upload's leading bytes
        // (the request) have arrived
        if (!is_client() && !app_writing && established &&
            rcv_nxt - irs - 1 >= REQUEST_BYTES)
            app_write(sim->transfer_bytes, true, now);
        // the client closes after the server's fin
        if (is_client() && peer_fin_seen && app_writing && !fin_pending) {
            fin_pending = true;
            fin_seq = app_total_end;
        }
    }

    try_send(now);
}

inline void Endpoint::try_send(int64_t now) {
    if (!established) return;
    while (true) {
        const uint64_t wnd = std::min<uint64_t>(cwnd, peer_rwnd);
        uint64_t start = 0, len = 0;
        if (in_recovery && sack_ok) {
            if (pipe_estimate() >= wnd) break;
            if (auto hole = next_hole()) {
                start = hole->first;
                len = std::min<uint64_t>(mss, hole->second - hole->first);
            } else if (snd_nxt < app_end && snd_nxt - snd_una < wnd) {
                start = snd_nxt;
                len = std::min<uint64_t>({uint64_t(mss), app_end - snd_nxt,
                                          wnd - (snd_nxt - snd_una)});
            } else {
                break;
            }
        } else {
            if (snd_nxt >= app_end || snd_nxt - snd_una >= wnd) break;
            start = snd_nxt;
            len = std::min<uint64_t>({uint64_t(mss), app_end - snd_nxt,
                                      wnd - (snd_nxt - snd_una)});
        }
        if (len == 0) break;
        const bool was_rtx = start < snd_nxt;
        send_segment(start, len, false, now);
        if (in_recovery && sack_ok && was_rtx) recovery_rtxed.insert(start, start + len);
        arm_tlp(now);
    }
    // FIN rides once every buffered byte is out (covers retransmission after
    // an RTO rewind of snd_nxt)
    if (fin_pending && !fin_acked && snd_nxt == fin_seq && app_end == app_total_end) {
        send_segment(fin_seq, 0, true, now);
        arm_tlp(now);
    }
    // window closed with data pending and nothing in flight: persist probing
    if (peer_rwnd == 0 && inflight() == 0 && !persist_armed &&
        ((app_writing && snd_nxt < app_total_end) || (fin_pending && !fin_acked))) {
        persist_interval = rto;
        arm_persist(now);
    }
}

inline void Endpoint::on_rto(int64_t now) {
    if (inflight() == 0) return;
    rto = std::min(rto * 2, RTO_MAX_NS);
    if (!established) { // retransmit SYN (client) or SYN|ACK (server)
        PacketRecord p;
        p.src_ip = ip;
        p.dst_ip = peer_ip;
        p.src_port = port;
        p.dst_port = peer_port;
        p.seq = uint32_t(iss);
        p.window = window_field(true);
        p.options.mss = uint16_t(mss);
        p.options.window_scale = ws_local;
        p.options.timestamps = {uint32_t(now / 1'000'000), last_peer_tsval};
        if (peer_syn_seen) {
            p.flags = tcpflag::SYN | tcpflag::ACK;
            p.ack = uint32_t(rcv_nxt);
            if (sack_ok) p.options.sack_permitted = true;
        } else {
            p.flags = tcpflag::SYN;
            if (offer_sack) p.options.sack_permitted = true;
        }
        if (auto it = seg_times.find(iss + 1); it != seg_times.end())
            it->second.retransmitted = true;
        sim->transmit(idx, p);
        arm_rto(now);
        return;
    }
    // Timeout: collapse to one segment and go back to snd_una. The SACK
    // scoreboard is discarded (the receiver may renege, RFC 2018), so
    // delivered-but-unacked data is resent and duly reported as duplicate.
    variant_on_loss();
    ssthresh = std::max<uint64_t>(uint64_t(double(inflight()) * 0.5), 2 * uint64_t(mss));
    cwnd = mss;
    in_recovery = false;
    dupacks = 0;
    sacked.clear();
    recovery_rtxed.clear();
    snd_nxt = snd_una;
    for (auto& [end, t] : seg_times) t.retransmitted = true; // Karn
    try_send(now);
    if (inflight() > 0 && !rto_armed) arm_rto(now);
}

inline void Endpoint::on_tlp(int64_t now) {
    if (in_recovery || inflight() == 0 || snd_una != tlp_una_at_arm) return;
    // probe the tail: resend the highest outstanding segment once
    if (fin_pending && snd_max > fin_seq) {
        send_segment(fin_seq, 0, true, now);
    } else {
        const uint64_t end = snd_max;
        const uint64_t len = std::min<uint64_t>(mss, end - snd_una);
        send_segment(end - len, len, false, now);
    }
    tlp_spent = true;
    if (!rto_armed) arm_rto(now);
}

inline void Endpoint::on_persist(int64_t now) {
    if (peer_rwnd > 0 || fin_acked) return;
    if (snd_nxt < app_total_end) {
        send_segment(snd_nxt, 1, false, now); // 1-byte window probe
        snd_nxt -= 1; // probe byte stays outside normal transmission order
    }
    persist_interval = std::min(persist_interval * 2, RTO_MAX_NS);
    arm_persist(now);
}

inline void Endpoint::on_drain(int64_t now) {
    if (!is_client()) return;
    const uint64_t before = advertised_effective(false);
    app_read = rcv_nxt;
    const uint64_t after = advertised_effective(false);
    if (established && peer_syn_seen && before < mss && after >= mss)
        send_ack(now, std::nullopt, std::nullopt); // window update
}

} // namespace emu

// Runs one emulated transfer and returns both vantage captures. Deterministic
// for a fixed (link.seed, configs) tuple, bit-for-bit.
inline SimResult simulate_transfer(const LinkConfig& link, const FaultConfig& fault,
                                   const TransferConfig& transfer) {
    if (link.rate_Mbps <= 0 || link.one_way_delay_ms <= 0)
        throw ConfigInvalid("link rate and delay must be positive");
    if (link.loss_pct < 0 || link.loss_pct > 100)
        throw ConfigInvalid("loss percentage out of range");
    if (transfer.bytes_to_send < 1) throw ConfigInvalid("bytes_to_send must be >= 1");
    if (transfer.mss < 64 || transfer.mss > 9000) throw ConfigInvalid("mss out of range");
    if (transfer.initial_cwnd < 1) throw ConfigInvalid("initial_cwnd must be >= 1");
    const uint64_t min_buf = transfer.mss;
    if (fault.read_buffer_bytes && *fault.read_buffer_bytes < min_buf)
        throw ConfigInvalid("read buffer cap must be at least one MSS");
    if (fault.write_buffer_bytes && *fault.write_buffer_bytes < min_buf)
        throw ConfigInvalid("write buffer cap must be at least one MSS");

    emu::Sim sim(link, transfer.bytes_to_send);
    emu::Rng port_rng(emu::splitmix64(link.seed ^ 0x44));

    auto& client = sim.ep[0];
    auto& server = sim.ep[1];
    client.sim = server.sim = &sim;
    client.idx = 0;
    server.idx = 1;
    client.ip = 0x0a000002; // 10.0.0.2
    server.ip = 0x0a000101; // 10.0.1.1
    client.peer_ip = server.ip;
    server.peer_ip = client.ip;
    client.port = uint16_t(40000 + port_rng.next() % 20000);
    server.port = 80;
    client.peer_port = server.port;
    server.peer_port = client.port;

    for (auto* e : {&client, &server}) {
        e->mss = transfer.mss;
        e->variant = transfer.tcp_variant;
        e->initial_cwnd_seg = transfer.initial_cwnd;
    }
    // every fault lives at the client: option behavior, the receive buffer
    // throttling its download, and the send buffer throttling its upload
    client.offer_sack = !fault.sack_disabled;
    client.dsack_enabled = !fault.dsack_disabled;
    if (fault.read_buffer_bytes) client.rcv_buf_cap = *fault.read_buffer_bytes;
    if (fault.write_buffer_bytes) client.snd_buf_cap = *fault.write_buffer_bytes;
    server.offer_sack = true;
    server.dsack_enabled = true;

    client.start_connect(0);
    sim.schedule(emu::APP_DRAIN_PERIOD_NS, emu::Event::drain, 0);
    sim.run();

    SimResult res;
    res.client_vantage = std::move(sim.vantage[0]);
    res.server_vantage = std::move(sim.vantage[1]);
    res.stalled = sim.stalled;
    res.duration_s = double(sim.now) * 1e-9;
    return res;
}

} // namespace tracediag
