#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tracediag {

// TCP flag bits, wire layout (low byte of the flags field).
namespace tcpflag {
constexpr uint8_t FIN = 0x01;
constexpr uint8_t SYN = 0x02;
constexpr uint8_t RST = 0x04;
constexpr uint8_t PSH = 0x08;
constexpr uint8_t ACK = 0x10;
constexpr uint8_t URG = 0x20;
} // namespace tcpflag

// RFC 793 modular sequence comparison (wraparound-safe).
inline bool seq_lt(uint32_t a, uint32_t b)  { return static_cast<int32_t>(a - b) < 0; }
inline bool seq_leq(uint32_t a, uint32_t b) { return static_cast<int32_t>(a - b) <= 0; }
inline bool seq_gt(uint32_t a, uint32_t b)  { return static_cast<int32_t>(a - b) > 0; }
inline bool seq_geq(uint32_t a, uint32_t b) { return static_cast<int32_t>(a - b) >= 0; }

// Maps 32-bit sequence numbers onto a monotone 64-bit axis, choosing the
// unwrapping closest to the previously seen value.
class SeqUnwrapper {
public:
    uint64_t unwrap(uint32_t seq) {
        if (!primed_) {
            primed_ = true;
            last_ = (1ull << 32) | seq; // headroom for small backward steps
            return last_;
        }
        const uint64_t base = last_ & ~0xffffffffull;
        uint64_t best = base | seq;
        // candidates one epoch down/up; pick the closest to last_
        const uint64_t candidates[3] = {best - (1ull << 32), best, best + (1ull << 32)};
        uint64_t chosen = candidates[0];
        uint64_t chosen_dist = dist(candidates[0]);
        for (int i = 1; i < 3; ++i) {
            const uint64_t d = dist(candidates[i]);
            if (d < chosen_dist) { chosen = candidates[i]; chosen_dist = d; }
        }
        last_ = chosen;
        return chosen;
    }

private:
    uint64_t dist(uint64_t v) const { return v > last_ ? v - last_ : last_ - v; }
    bool primed_ = false;
    uint64_t last_ = 0;
};

struct SackBlock {
    uint32_t left_edge = 0;  // first sequence number of the block
    uint32_t right_edge = 0; // one past the last sequence number

    bool operator==(const SackBlock&) const = default;
};

// Decoded TCP options relevant to fault artifacts; unknown kinds are skipped.
struct TcpOptions {
    std::optional<uint16_t> mss;
    std::optional<uint8_t> window_scale; // shift count 0..14
    bool sack_permitted = false;
    std::vector<SackBlock> sack_blocks;  // at most 4
    std::optional<std::pair<uint32_t, uint32_t>> timestamps; // (tsval, tsecr)

    bool operator==(const TcpOptions&) const = default;
};

// One captured frame after Ethernet/IPv4/TCP decoding.
struct PacketRecord {
    uint32_t ts_sec = 0;
    uint32_t ts_usec = 0;
    uint32_t captured_len = 0;
    uint32_t original_len = 0;
    uint32_t src_ip = 0; // host byte order
    uint32_t dst_ip = 0;
    uint16_t src_port = 0;
    uint16_t dst_port = 0;
    uint32_t seq = 0;
    uint32_t ack = 0;
    uint8_t flags = 0;    // tcpflag:: bits
    uint16_t window = 0;  // raw advertised window, pre-scaling
    uint32_t payload_len = 0;
    TcpOptions options;

    bool operator==(const PacketRecord&) const = default;

    bool has(uint8_t flag) const { return (flags & flag) != 0; }
    double time_s() const { return double(ts_sec) + double(ts_usec) * 1e-6; }
};

inline std::string ipv4_to_string(uint32_t ip) {
    return std::to_string((ip >> 24) & 0xff) + "." + std::to_string((ip >> 16) & 0xff) + "." +
           std::to_string((ip >> 8) & 0xff) + "." + std::to_string(ip & 0xff);
}

} // namespace tracediag
