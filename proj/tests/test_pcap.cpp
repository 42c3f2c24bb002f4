#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <fstream>
#include <random>
#include <vector>

#include "tracediag/pcap.hpp"

using namespace tracediag;

namespace {

std::vector<uint8_t> global_header(uint32_t magic_le_or_be, bool swapped) {
    std::vector<uint8_t> h;
    auto u32 = [&](uint32_t v) {
        if (swapped)
            for (int i = 3; i >= 0; --i) h.push_back(uint8_t(v >> (8 * i)));
        else
            for (int i = 0; i < 4; ++i) h.push_back(uint8_t(v >> (8 * i)));
    };
    auto u16 = [&](uint16_t v) {
        if (swapped) {
            h.push_back(uint8_t(v >> 8));
            h.push_back(uint8_t(v));
        } else {
            h.push_back(uint8_t(v));
            h.push_back(uint8_t(v >> 8));
        }
    };
    // magic written raw: caller passes the on-disk byte sequence meaning
    for (int i = 0; i < 4; ++i) h.push_back(uint8_t(magic_le_or_be >> (8 * i)));
    u16(2);
    u16(4);
    u32(0);
    u32(0);
    u32(65535);
    u32(LINKTYPE_ETHERNET);
    return h;
}

PacketRecord make_packet(std::mt19937_64& rng) {
    PacketRecord r;
    r.ts_sec = uint32_t(rng() % 2000000000);
    r.ts_usec = uint32_t(rng() % 1000000);
    r.src_ip = uint32_t(rng());
    r.dst_ip = uint32_t(rng());
    r.src_port = uint16_t(1 + rng() % 65535);
    r.dst_port = uint16_t(1 + rng() % 65535);
    r.seq = uint32_t(rng());
    r.ack = uint32_t(rng());
    r.flags = uint8_t(rng() % 64);
    r.window = uint16_t(rng());
    r.payload_len = uint32_t(rng() % 1461);
    if (rng() % 2) {
        // handshake-style options: MSS/WS/SACK-permitted/TS, no blocks
        if (rng() % 2) r.options.mss = uint16_t(536 + rng() % 1000);
        if (rng() % 2) r.options.window_scale = uint8_t(rng() % 15);
        if (rng() % 2) r.options.sack_permitted = true;
        if (rng() % 2) r.options.timestamps = {uint32_t(rng()), uint32_t(rng())};
    } else {
        // established-style options: TS plus up to 3 SACK blocks (40-byte cap)
        if (rng() % 2) r.options.timestamps = {uint32_t(rng()), uint32_t(rng())};
        const int nblocks = int(rng() % 4);
        for (int b = 0; b < nblocks; ++b) {
            uint32_t left = uint32_t(rng());
            r.options.sack_blocks.push_back({left, left + 1 + uint32_t(rng() % 3000)});
        }
    }
    r.captured_len = encoded_frame_len(r);
    r.original_len = r.captured_len;
    return r;
}

std::vector<PacketRecord> golden_fixture_packets() {
    std::vector<PacketRecord> pkts;
    PacketRecord syn;
    syn.ts_sec = 1700000000;
    syn.ts_usec = 250000;
    syn.src_ip = 0x0a000001; // 10.0.0.1
    syn.dst_ip = 0x0a000002;
    syn.src_port = 40000;
    syn.dst_port = 80;
    syn.seq = 1000;
    syn.flags = tcpflag::SYN;
    syn.window = 65535;
    syn.options.mss = 1460;
    syn.options.sack_permitted = true;
    syn.options.window_scale = 7;
    syn.options.timestamps = {{1, 0}};
    syn.captured_len = encoded_frame_len(syn);
    syn.original_len = syn.captured_len;
    pkts.push_back(syn);

    PacketRecord synack = syn;
    synack.ts_usec = 270000;
    std::swap(synack.src_ip, synack.dst_ip);
    std::swap(synack.src_port, synack.dst_port);
    synack.seq = 5000;
    synack.ack = 1001;
    synack.flags = tcpflag::SYN | tcpflag::ACK;
    synack.options.timestamps = {{900, 1}};
    synack.captured_len = encoded_frame_len(synack);
    synack.original_len = synack.captured_len;
    pkts.push_back(synack);

    PacketRecord data;
    data.ts_sec = 1700000000;
    data.ts_usec = 300123;
    data.src_ip = 0x0a000002;
    data.dst_ip = 0x0a000001;
    data.src_port = 80;
    data.dst_port = 40000;
    data.seq = 5001;
    data.ack = 1001;
    data.flags = tcpflag::ACK | tcpflag::PSH;
    data.window = 512;
    data.payload_len = 1460;
    data.options.timestamps = {{901, 1}};
    data.captured_len = encoded_frame_len(data);
    data.original_len = data.captured_len;
    pkts.push_back(data);

    PacketRecord ackpkt;
    ackpkt.ts_sec = 1700000000;
    ackpkt.ts_usec = 310500;
    ackpkt.src_ip = 0x0a000001;
    ackpkt.dst_ip = 0x0a000002;
    ackpkt.src_port = 40000;
    ackpkt.dst_port = 80;
    ackpkt.seq = 1001;
    ackpkt.ack = 6461;
    ackpkt.flags = tcpflag::ACK;
    ackpkt.window = 501;
    ackpkt.options.timestamps = {{2, 901}};
    ackpkt.options.sack_blocks.push_back({7000, 8460});
    ackpkt.captured_len = encoded_frame_len(ackpkt);
    ackpkt.original_len = ackpkt.captured_len;
    pkts.push_back(ackpkt);
    return pkts;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("empty capture parses to empty list") {
    auto h = global_header(PCAP_MAGIC, false);
    auto res = read_pcap(h);
    CHECK(res.packets.empty());
    CHECK(res.skipped == 0);
}

TEST_CASE("byte-swapped capture parses identically") {
    std::mt19937_64 rng(11);
    std::vector<PacketRecord> pkts{make_packet(rng), make_packet(rng)};
    auto le = write_pcap(pkts);

    // rewrite the same file big-endian: swap global header and record headers
    std::vector<uint8_t> be = global_header(PCAP_MAGIC_SWAPPED, true);
    std::size_t pos = 24;
    while (pos < le.size()) {
        for (int field = 0; field < 4; ++field) {
            for (int i = 3; i >= 0; --i) be.push_back(le[pos + 4 * field + i]);
        }
        uint32_t incl = uint32_t(le[pos + 8]) | uint32_t(le[pos + 9]) << 8 |
                        uint32_t(le[pos + 10]) << 16 | uint32_t(le[pos + 11]) << 24;
        pos += 16;
        be.insert(be.end(), le.begin() + pos, le.begin() + pos + incl);
        pos += incl;
    }

    auto a = read_pcap(le);
    auto b = read_pcap(be);
    REQUIRE(a.packets.size() == b.packets.size());
    CHECK(a.packets == b.packets);
}

TEST_CASE("write of empty list is the 24-byte global header") {
    CHECK(write_pcap({}).size() == 24);
}

TEST_CASE("one SYN packet stream length is hand-computed") {
    auto pkts = golden_fixture_packets();
    std::vector<PacketRecord> one{pkts[0]};
    // options: MSS(4) + SACKPERM(2) + WS(3) + TS(10) = 19, padded to 20
    // frame: 14 eth + 20 ip + 20 tcp + 20 options = 74
    CHECK(encoded_frame_len(pkts[0]) == 74);
    CHECK(write_pcap(one).size() == 24 + 16 + 74);
}

TEST_CASE("round-trip identity on randomized packet lists") {
    std::mt19937_64 rng(20260810);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<PacketRecord> pkts;
        const int n = int(rng() % 6);
        for (int i = 0; i < n; ++i) pkts.push_back(make_packet(rng));
        auto bytes = write_pcap(pkts);
        auto res = read_pcap(bytes);
        REQUIRE(res.skipped == 0);
        REQUIRE(res.packets.size() == pkts.size());
        CHECK(res.packets == pkts);
    }
}

TEST_CASE("write-read-write is byte identical") {
    std::mt19937_64 rng(7);
    std::vector<PacketRecord> pkts;
    for (int i = 0; i < 20; ++i) pkts.push_back(make_packet(rng));
    auto first = write_pcap(pkts);
    auto second = write_pcap(read_pcap(first).packets);
    CHECK(first == second);
}

TEST_CASE("golden fixture bytes are stable") {
    const std::string path = std::string(TRACEDIAG_TEST_DATA) + "/golden.pcap";
    auto want = read_file(path);
    auto got = write_pcap(golden_fixture_packets());
    REQUIRE(got.size() == want.size());
    CHECK(got == want);
    auto back = read_pcap(want);
    CHECK(back.packets == golden_fixture_packets());
}

TEST_CASE("bad magic and truncation are reported") {
    std::vector<uint8_t> junk(24, 0xab);
    CHECK_THROWS_AS(read_pcap(junk), BadMagic);

    auto h = global_header(PCAP_MAGIC, false);
    h.resize(20);
    CHECK_THROWS_AS(read_pcap(h), BadMagic);

    std::mt19937_64 rng(3);
    auto bytes = write_pcap({make_packet(rng)});
    bytes.resize(24 + 8); // partial record header
    CHECK_THROWS_AS(read_pcap(bytes), Truncated);

    bytes = write_pcap({make_packet(rng)});
    bytes.pop_back(); // record body shorter than incl_len
    CHECK_THROWS_AS(read_pcap(bytes), Truncated);
}

TEST_CASE("unsupported link type is rejected") {
    auto h = global_header(PCAP_MAGIC, false);
    h[20] = 105; // 802.11
    CHECK_THROWS_AS(read_pcap(h), UnsupportedLinkType);
}

TEST_CASE("non-TCP frames are skipped and counted") {
    std::mt19937_64 rng(5);
    auto tcp_pkt = make_packet(rng);
    auto bytes = write_pcap({tcp_pkt});

    auto append_record = [&](const std::vector<uint8_t>& frame) {
        detail::put_u32le(bytes, 1);
        detail::put_u32le(bytes, 0);
        detail::put_u32le(bytes, uint32_t(frame.size()));
        detail::put_u32le(bytes, uint32_t(frame.size()));
        bytes.insert(bytes.end(), frame.begin(), frame.end());
    };

    // ARP ethertype
    std::vector<uint8_t> arp(14, 0);
    arp[12] = 0x08;
    arp[13] = 0x06;
    append_record(arp);

    // IPv6 ethertype
    std::vector<uint8_t> v6(54, 0);
    v6[12] = 0x86;
    v6[13] = 0xdd;
    append_record(v6);

    // IPv4 UDP
    auto udp_frame = detail::build_frame(tcp_pkt);
    udp_frame[14 + 9] = 17;
    append_record(udp_frame);

    // IPv4 TCP fragment (more-fragments bit)
    auto frag_frame = detail::build_frame(tcp_pkt);
    frag_frame[14 + 6] = 0x20;
    append_record(frag_frame);

    auto res = read_pcap(bytes);
    CHECK(res.packets.size() == 1);
    CHECK(res.skipped == 4);
}

TEST_CASE("option decoding") {
    SECTION("empty region decodes to all-absent options") {
        auto o = decode_options({});
        CHECK(o == TcpOptions{});
    }
    SECTION("sack-permitted kind 4") {
        const uint8_t bytes[] = {4, 2, 1, 1};
        auto o = decode_options(bytes);
        CHECK(o.sack_permitted);
        CHECK_FALSE(o.mss.has_value());
    }
    SECTION("sack block covering an already-acked range decodes verbatim") {
        // kind 5, one block [501, 1001): interpretation is the extractor's job
        const uint8_t bytes[] = {5, 10, 0, 0, 0x01, 0xf5, 0, 0, 0x03, 0xe9, 1, 1};
        auto o = decode_options(bytes);
        REQUIRE(o.sack_blocks.size() == 1);
        CHECK(o.sack_blocks[0].left_edge == 501);
        CHECK(o.sack_blocks[0].right_edge == 1001);
    }
    SECTION("unknown kinds are skipped by length") {
        const uint8_t bytes[] = {254, 4, 0xde, 0xad, 4, 2, 1, 1};
        auto o = decode_options(bytes);
        CHECK(o.sack_permitted);
    }
    SECTION("nop and eol terminate cleanly") {
        const uint8_t bytes[] = {1, 1, 0, 4, 2}; // EOL stops before the kind-4
        auto o = decode_options(bytes);
        CHECK_FALSE(o.sack_permitted);
    }
    SECTION("zero or overrunning lengths are malformed") {
        const uint8_t zero_len[] = {2, 0, 0, 0};
        CHECK_THROWS_AS(decode_options(zero_len), MalformedOption);
        const uint8_t overrun[] = {8, 10, 0, 0};
        CHECK_THROWS_AS(decode_options(overrun), MalformedOption);
        const uint8_t no_len[] = {2};
        CHECK_THROWS_AS(decode_options(no_len), MalformedOption);
    }
}

TEST_CASE("malformed options inside a capture are skip-counted") {
    std::mt19937_64 rng(9);
    auto good = make_packet(rng);
    auto bytes = write_pcap({good});

    PacketRecord bad = good;
    bad.options = TcpOptions{};
    bad.options.mss = 1460;
    bad.captured_len = encoded_frame_len(bad);
    auto frame = detail::build_frame(bad);
    frame[14 + 20 + 21] = 0; // MSS option length byte -> 0
    detail::put_u32le(bytes, 2);
    detail::put_u32le(bytes, 0);
    detail::put_u32le(bytes, uint32_t(frame.size()));
    detail::put_u32le(bytes, uint32_t(frame.size()));
    bytes.insert(bytes.end(), frame.begin(), frame.end());

    auto res = read_pcap(bytes);
    CHECK(res.packets.size() == 1);
    CHECK(res.skipped == 1);
}
