#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tracediag/errors.hpp"
#include "tracediag/packet.hpp"

// Classic pcap only: 24-byte global header, microsecond timestamps,
// 16-byte record headers. Link types: 1 (Ethernet II) and 101 (raw IPv4).

namespace tracediag {

constexpr uint32_t PCAP_MAGIC = 0xa1b2c3d4u;
constexpr uint32_t PCAP_MAGIC_SWAPPED = 0xd4c3b2a1u;
constexpr uint32_t LINKTYPE_ETHERNET = 1;
constexpr uint32_t LINKTYPE_RAW_IP = 101;

struct PcapReadResult {
    std::vector<PacketRecord> packets;
    std::size_t skipped = 0; // non-IPv4, non-TCP, fragmented, or undecodable frames
    uint32_t link_type = LINKTYPE_ETHERNET;
};

namespace detail {

inline uint16_t get_u16be(const uint8_t* p) { return uint16_t(p[0]) << 8 | p[1]; }
inline uint32_t get_u32be(const uint8_t* p) {
    return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 | p[3];
}

inline void put_u16be(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}
inline void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}
inline void put_u16le(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
}
inline void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 24));
}

// Reads pcap header fields honoring the file's byte order.
class FileReader {
public:
    FileReader(std::span<const uint8_t> data) : data_(data) {}

    bool exhausted() const { return pos_ >= data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }

    uint32_t u32() {
        need(4);
        const uint8_t* p = data_.data() + pos_;
        pos_ += 4;
        uint32_t v = uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
        return swapped_ ? byteswap32(v) : v;
    }
    uint16_t u16() {
        need(2);
        const uint8_t* p = data_.data() + pos_;
        pos_ += 2;
        uint16_t v = uint16_t(p[0]) | uint16_t(p[1]) << 8;
        return swapped_ ? uint16_t(v >> 8 | v << 8) : v;
    }
    std::span<const uint8_t> bytes(std::size_t n) {
        need(n);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    void set_swapped(bool s) { swapped_ = s; }

private:
    static uint32_t byteswap32(uint32_t v) {
        return v >> 24 | (v >> 8 & 0xff00) | (v << 8 & 0xff0000) | v << 24;
    }
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw Truncated("pcap: record exceeds remaining bytes");
    }
    std::span<const uint8_t> data_;
    std::size_t pos_ = 0;
    bool swapped_ = false;
};

// IP/TCP one's-complement sum over a byte range plus carried seed words.
inline uint16_t inet_checksum(std::span<const uint8_t> bytes, uint32_t seed = 0) {
    uint32_t sum = seed;
    std::size_t i = 0;
    for (; i + 1 < bytes.size(); i += 2) sum += uint32_t(bytes[i]) << 8 | bytes[i + 1];
    if (i < bytes.size()) sum += uint32_t(bytes[i]) << 8;
    while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
    return uint16_t(~sum & 0xffff);
}

} // namespace detail

// Decodes the TCP option region. Recognizes MSS(2), window scale(3),
// SACK-permitted(4), SACK blocks(5), timestamps(8); skips unknown kinds via
// their length octet. Never reads past the region.
inline TcpOptions decode_options(std::span<const uint8_t> region) {
    TcpOptions opts;
    std::size_t i = 0;
    while (i < region.size()) {
        const uint8_t kind = region[i];
        if (kind == 0) break; // EOL
        if (kind == 1) { ++i; continue; } // NOP
        if (i + 1 >= region.size())
            throw MalformedOption("tcp option kind " + std::to_string(kind) + " missing length");
        const uint8_t len = region[i + 1];
        if (len < 2 || i + len > region.size())
            throw MalformedOption("tcp option kind " + std::to_string(kind) + " bad length " +
                                  std::to_string(len));
        const uint8_t* body = region.data() + i + 2;
        switch (kind) {
        case 2:
            if (len != 4) throw MalformedOption("mss option length != 4");
            opts.mss = detail::get_u16be(body);
            break;
        case 3:
            if (len != 3) throw MalformedOption("window scale option length != 3");
            opts.window_scale = body[0];
            break;
        case 4:
            if (len != 2) throw MalformedOption("sack-permitted option length != 2");
            opts.sack_permitted = true;
            break;
        case 5: {
            if (len < 10 || (len - 2) % 8 != 0) throw MalformedOption("sack option bad length");
            const int nblocks = (len - 2) / 8;
            if (nblocks > 4) throw MalformedOption("sack option with more than 4 blocks");
            for (int b = 0; b < nblocks; ++b) {
                SackBlock blk;
                blk.left_edge = detail::get_u32be(body + 8 * b);
                blk.right_edge = detail::get_u32be(body + 8 * b + 4);
                opts.sack_blocks.push_back(blk);
            }
            break;
        }
        case 8:
            if (len != 10) throw MalformedOption("timestamps option length != 10");
            opts.timestamps = {detail::get_u32be(body), detail::get_u32be(body + 4)};
            break;
        default:
            break; // unknown kind, skipped by its length
        }
        i += len;
    }
    return opts;
}

namespace detail {

inline void encode_options(std::vector<uint8_t>& out, const TcpOptions& o) {
    const std::size_t start = out.size();
    if (o.mss) {
        out.push_back(2); out.push_back(4);
        put_u16be(out, *o.mss);
    }
    if (o.sack_permitted) { out.push_back(4); out.push_back(2); }
    if (o.window_scale) {
        out.push_back(3); out.push_back(3); out.push_back(*o.window_scale);
    }
    if (o.timestamps) {
        out.push_back(8); out.push_back(10);
        put_u32be(out, o.timestamps->first);
        put_u32be(out, o.timestamps->second);
    }
    if (!o.sack_blocks.empty()) {
        out.push_back(5);
        out.push_back(uint8_t(2 + 8 * o.sack_blocks.size()));
        for (const auto& b : o.sack_blocks) {
            put_u32be(out, b.left_edge);
            put_u32be(out, b.right_edge);
        }
    }
    while ((out.size() - start) % 4 != 0) out.push_back(1); // NOP pad
    if (out.size() - start > 40)
        throw MalformedOption("tcp options exceed the 40-byte header limit");
}

// Ethernet II + IPv4 + TCP frame for one record; payload is zero-filled.
inline std::vector<uint8_t> build_frame(const PacketRecord& r) {
    std::vector<uint8_t> opts;
    encode_options(opts, r.options);
    const uint8_t doff_words = uint8_t(5 + opts.size() / 4);
    const uint16_t ip_total = uint16_t(20 + doff_words * 4 + r.payload_len);

    std::vector<uint8_t> f;
    f.reserve(14 + ip_total);
    // MACs derived from the IPs: locally administered, deterministic.
    f.push_back(0x02); f.push_back(0x00);
    put_u32be(f, r.dst_ip);
    f.push_back(0x02); f.push_back(0x00);
    put_u32be(f, r.src_ip);
    put_u16be(f, 0x0800);

    // IPv4 header, no options
    const std::size_t ip_off = f.size();
    f.push_back(0x45); // version 4, IHL 5
    f.push_back(0);    // TOS
    put_u16be(f, ip_total);
    put_u16be(f, 0);      // identification
    put_u16be(f, 0x4000); // DF
    f.push_back(64);      // TTL
    f.push_back(6);       // TCP
    put_u16be(f, 0);      // checksum placeholder
    put_u32be(f, r.src_ip);
    put_u32be(f, r.dst_ip);
    const uint16_t ip_csum =
        inet_checksum(std::span<const uint8_t>(f.data() + ip_off, 20));
    f[ip_off + 10] = uint8_t(ip_csum >> 8);
    f[ip_off + 11] = uint8_t(ip_csum);

    // TCP header
    const std::size_t tcp_off = f.size();
    put_u16be(f, r.src_port);
    put_u16be(f, r.dst_port);
    put_u32be(f, r.seq);
    put_u32be(f, r.ack);
    f.push_back(uint8_t(doff_words << 4));
    f.push_back(r.flags);
    put_u16be(f, r.window);
    put_u16be(f, 0); // checksum placeholder
    put_u16be(f, 0); // urgent pointer
    f.insert(f.end(), opts.begin(), opts.end());
    f.insert(f.end(), r.payload_len, 0); // payload content is not modeled

    // TCP checksum over pseudo-header + segment
    const uint32_t tcp_len = uint32_t(doff_words * 4 + r.payload_len);
    uint32_t seed = (r.src_ip >> 16) + (r.src_ip & 0xffff) + (r.dst_ip >> 16) +
                    (r.dst_ip & 0xffff) + 6 + tcp_len;
    const uint16_t tcp_csum = inet_checksum(
        std::span<const uint8_t>(f.data() + tcp_off, tcp_len), seed);
    f[tcp_off + 16] = uint8_t(tcp_csum >> 8);
    f[tcp_off + 17] = uint8_t(tcp_csum);
    return f;
}

} // namespace detail

// Parses a classic pcap byte stream. Non-IPv4 and non-TCP frames (including
// IPv6, fragments, and frames too short to carry their headers) are skipped
// and counted; timestamps are preserved exactly.
inline PcapReadResult read_pcap(std::span<const uint8_t> data) {
    detail::FileReader rd(data);
    if (rd.remaining() < 24) throw BadMagic("pcap: file shorter than global header");
    const uint32_t magic = rd.u32();
    if (magic == PCAP_MAGIC_SWAPPED) {
        rd.set_swapped(true);
    } else if (magic != PCAP_MAGIC) {
        throw BadMagic("pcap: unrecognized magic number");
    }
    rd.u16(); // version major
    rd.u16(); // version minor
    rd.u32(); // thiszone
    rd.u32(); // sigfigs
    rd.u32(); // snaplen
    const uint32_t link_type = rd.u32();
    if (link_type != LINKTYPE_ETHERNET && link_type != LINKTYPE_RAW_IP)
        throw UnsupportedLinkType("pcap: link type " + std::to_string(link_type));

    PcapReadResult res;
    res.link_type = link_type;
    while (!rd.exhausted()) {
        if (rd.remaining() < 16) throw Truncated("pcap: partial record header");
        const uint32_t ts_sec = rd.u32();
        const uint32_t ts_usec = rd.u32();
        const uint32_t incl_len = rd.u32();
        const uint32_t orig_len = rd.u32();
        const auto frame = rd.bytes(incl_len); // throws Truncated if short

        PacketRecord r;
        r.ts_sec = ts_sec;
        r.ts_usec = ts_usec;
        r.captured_len = incl_len;
        r.original_len = orig_len;

        std::span<const uint8_t> ip = frame;
        if (link_type == LINKTYPE_ETHERNET) {
            if (frame.size() < 14 || detail::get_u16be(frame.data() + 12) != 0x0800) {
                ++res.skipped;
                continue;
            }
            ip = frame.subspan(14);
        }
        if (ip.size() < 20 || (ip[0] >> 4) != 4) { ++res.skipped; continue; }
        const std::size_t ihl = std::size_t(ip[0] & 0x0f) * 4;
        if (ihl < 20 || ip.size() < ihl) { ++res.skipped; continue; }
        const uint16_t frag = detail::get_u16be(ip.data() + 6);
        if ((frag & 0x2000) != 0 || (frag & 0x1fff) != 0) { ++res.skipped; continue; } // fragment
        if (ip[9] != 6) { ++res.skipped; continue; } // not TCP
        const uint16_t ip_total = detail::get_u16be(ip.data() + 2);
        r.src_ip = detail::get_u32be(ip.data() + 12);
        r.dst_ip = detail::get_u32be(ip.data() + 16);

        std::span<const uint8_t> tcp = ip.subspan(ihl);
        if (tcp.size() < 20) { ++res.skipped; continue; }
        const std::size_t doff = std::size_t(tcp[12] >> 4) * 4;
        if (doff < 20 || tcp.size() < doff) { ++res.skipped; continue; }
        r.src_port = detail::get_u16be(tcp.data());
        r.dst_port = detail::get_u16be(tcp.data() + 2);
        r.seq = detail::get_u32be(tcp.data() + 4);
        r.ack = detail::get_u32be(tcp.data() + 8);
        r.flags = tcp[13] & 0x3f;
        r.window = detail::get_u16be(tcp.data() + 14);
        if (ip_total < ihl + doff) { ++res.skipped; continue; }
        r.payload_len = uint32_t(ip_total - ihl - doff);
        try {
            r.options = decode_options(tcp.subspan(20, doff - 20));
        } catch (const MalformedOption&) {
            ++res.skipped;
            continue;
        }
        res.packets.push_back(std::move(r));
    }
    return res;
}

// Serializes records as a classic little-endian pcap (Ethernet link type).
// read_pcap(write_pcap(P)) reproduces P field-for-field for records whose
// captured_len equals the encoded frame length.
inline std::vector<uint8_t> write_pcap(const std::vector<PacketRecord>& packets) {
    std::vector<uint8_t> out;
    detail::put_u32le(out, PCAP_MAGIC);
    detail::put_u16le(out, 2);  // version 2.4
    detail::put_u16le(out, 4);
    detail::put_u32le(out, 0);  // thiszone
    detail::put_u32le(out, 0);  // sigfigs
    detail::put_u32le(out, 65535);
    detail::put_u32le(out, LINKTYPE_ETHERNET);
    for (const auto& r : packets) {
        const auto frame = detail::build_frame(r);
        detail::put_u32le(out, r.ts_sec);
        detail::put_u32le(out, r.ts_usec);
        detail::put_u32le(out, uint32_t(frame.size()));
        detail::put_u32le(out, r.original_len >= frame.size() ? r.original_len
                                                              : uint32_t(frame.size()));
        out.insert(out.end(), frame.begin(), frame.end());
    }
    return out;
}

// Frame length a record will occupy on the wire; write_pcap emits exactly this.
inline uint32_t encoded_frame_len(const PacketRecord& r) {
    std::vector<uint8_t> opts;
    detail::encode_options(opts, r.options);
    return uint32_t(14 + 20 + 20 + opts.size() + r.payload_len);
}

} // namespace tracediag
