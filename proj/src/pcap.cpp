#include "dnsguard/pcap.hpp"

#include <array>
#include <fstream>
#include <istream>
#include <ostream>

namespace dnsguard {

namespace {

constexpr std::uint32_t kMagicUsec = 0xA1B2C3D4;
constexpr std::uint32_t kMagicUsecSwapped = 0xD4C3B2A1;
constexpr std::uint32_t kMaxFrame = 65535;

std::uint32_t read_u32(const std::uint8_t* p, bool swap) {
    const std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                            (static_cast<std::uint32_t>(p[1]) << 8) |
                            (static_cast<std::uint32_t>(p[2]) << 16) |
                            (static_cast<std::uint32_t>(p[3]) << 24);
    if (!swap) return v;
    return ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
}

void put_u32le(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                   static_cast<char>((v >> 16) & 0xFF),
                                   static_cast<char>((v >> 24) & 0xFF)};
    out.write(b.data(), 4);
}

void put_u16le(std::ostream& out, std::uint16_t v) {
    const std::array<char, 2> b = {static_cast<char>(v & 0xFF),
                                   static_cast<char>((v >> 8) & 0xFF)};
    out.write(b.data(), 2);
}

}  // namespace

std::vector<CapturedPacket> read_pcap(std::istream& in) {
    std::array<std::uint8_t, 24> gh{};
    in.read(reinterpret_cast<char*>(gh.data()), gh.size());
    if (in.gcount() != static_cast<std::streamsize>(gh.size()))
        throw BadMagic("stream shorter than the pcap global header");

    // Magic is stored in writer byte order; detect which one.
    const std::uint32_t magic_le = read_u32(gh.data(), false);
    bool swap;
    if (magic_le == kMagicUsec)
        swap = false;
    else if (magic_le == kMagicUsecSwapped)
        swap = true;
    else
        throw BadMagic("unrecognized pcap magic");

    const std::uint32_t linktype = read_u32(gh.data() + 20, swap);
    if (linktype != 1)
        throw UnsupportedLinkType("linktype " + std::to_string(linktype) +
                                  " (only Ethernet is supported)");

    std::vector<CapturedPacket> packets;
    std::array<std::uint8_t, 16> rh{};
    for (;;) {
        in.read(reinterpret_cast<char*>(rh.data()), rh.size());
        if (in.gcount() == 0) break;
        if (in.gcount() != static_cast<std::streamsize>(rh.size()))
            throw TruncatedRecord("partial record header");
        CapturedPacket pkt;
        pkt.ts.sec = read_u32(rh.data(), swap);
        pkt.ts.usec = read_u32(rh.data() + 4, swap);
        const std::uint32_t incl_len = read_u32(rh.data() + 8, swap);
        if (incl_len > kMaxFrame)
            throw TruncatedRecord("record claims " + std::to_string(incl_len) + " bytes");
        pkt.frame.resize(incl_len);
        in.read(reinterpret_cast<char*>(pkt.frame.data()), incl_len);
        if (in.gcount() != static_cast<std::streamsize>(incl_len))
            throw TruncatedRecord("record data shorter than incl_len");
        packets.push_back(std::move(pkt));
    }
    return packets;
}

std::size_t write_pcap(std::span<const CapturedPacket> packets, std::ostream& out) {
    put_u32le(out, kMagicUsec);
    put_u16le(out, 2);   // version major
    put_u16le(out, 4);   // version minor
    put_u32le(out, 0);   // thiszone
    put_u32le(out, 0);   // sigfigs
    put_u32le(out, kMaxFrame);
    put_u32le(out, 1);   // Ethernet
    std::size_t bytes = 24;
    for (const auto& pkt : packets) {
        put_u32le(out, pkt.ts.sec);
        put_u32le(out, pkt.ts.usec);
        put_u32le(out, static_cast<std::uint32_t>(pkt.frame.size()));
        put_u32le(out, static_cast<std::uint32_t>(pkt.frame.size()));
        out.write(reinterpret_cast<const char*>(pkt.frame.data()),
                  static_cast<std::streamsize>(pkt.frame.size()));
        bytes += 16 + pkt.frame.size();
    }
    if (!out) throw IoFailure("pcap write failed");
    return bytes;
}

std::vector<CapturedPacket> read_pcap_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);
    return read_pcap(in);
}

std::size_t write_pcap_file(std::span<const CapturedPacket> packets, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path + " for writing");
    return write_pcap(packets, out);
}

}  // namespace dnsguard
