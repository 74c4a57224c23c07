#include "dnsguard/dns_wire.hpp"

#include <cmath>
#include <cstdio>

namespace dnsguard {

namespace {

constexpr std::size_t kDnsHeaderSize = 12;
constexpr std::size_t kMaxWireName = 255;
constexpr std::size_t kMaxLabel = 63;

std::uint16_t read_u16be(std::span<const std::uint8_t> buf, std::size_t off) {
    return static_cast<std::uint16_t>((buf[off] << 8) | buf[off + 1]);
}

void put_u16be(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

}  // namespace

std::vector<std::string> split_labels(const std::string& qname) {
    std::vector<std::string> labels;
    std::size_t start = 0;
    while (start <= qname.size()) {
        const std::size_t dot = qname.find('.', start);
        if (dot == std::string::npos) {
            labels.push_back(qname.substr(start));
            break;
        }
        labels.push_back(qname.substr(start, dot - start));
        start = dot + 1;
    }
    return labels;
}

std::string join_labels(const std::vector<std::string>& labels) {
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) out.push_back('.');
        out += labels[i];
    }
    return out;
}

std::size_t wire_name_length(const std::vector<std::string>& labels) {
    std::size_t n = 1;  // root byte
    for (const auto& l : labels) n += 1 + l.size();
    return n;
}

DnsQuery DnsQuery::from_name(std::string name, std::uint16_t qtype, std::uint16_t qclass,
                             std::uint16_t txn_id) {
    DnsQuery q;
    q.labels = split_labels(name);
    q.qname = std::move(name);
    q.qtype = qtype;
    q.qclass = qclass;
    q.txn_id = txn_id;
    return q;
}

DnsQuery decode_dns_query(std::span<const std::uint8_t> payload) {
    if (payload.size() < kDnsHeaderSize)
        throw TruncatedMessage("DNS payload shorter than header: " +
                               std::to_string(payload.size()) + " bytes");

    const std::uint16_t txn_id = read_u16be(payload, 0);
    const std::uint16_t flags = read_u16be(payload, 2);
    if (flags & 0x8000) throw NotAQuery("QR flag set: message is a response");
    const std::uint16_t qdcount = read_u16be(payload, 4);
    if (qdcount == 0) throw NoQuestion("QDCOUNT is zero");

    DnsQuery q;
    q.txn_id = txn_id;

    std::size_t off = kDnsHeaderSize;
    std::size_t wire_len = 0;
    for (;;) {
        if (off >= payload.size()) throw TruncatedMessage("name runs past payload end");
        const std::uint8_t len = payload[off];
        if (len == 0) {
            ++off;
            ++wire_len;
            break;
        }
        if ((len & 0xC0) == 0xC0)
            throw MalformedName("compression pointer in a query name");
        if (len & 0xC0) throw MalformedName("reserved label type bits set");
        if (off + 1 + len > payload.size())
            throw MalformedName("label length " + std::to_string(len) +
                                " exceeds remaining bytes");
        wire_len += 1 + len;
        if (wire_len + 1 > kMaxWireName) throw MalformedName("name exceeds 255 wire bytes");
        q.labels.emplace_back(reinterpret_cast<const char*>(payload.data() + off + 1), len);
        off += 1 + len;
    }
    if (q.labels.empty()) throw MalformedName("empty (root) query name");
    if (off + 4 > payload.size()) throw TruncatedMessage("question missing type/class");
    q.qtype = read_u16be(payload, off);
    q.qclass = read_u16be(payload, off + 2);
    q.qname = join_labels(q.labels);
    return q;
}

std::vector<std::uint8_t> encode_dns_query(const DnsQuery& q, std::uint16_t txn_id) {
    if (q.labels.empty()) throw MalformedName("query has no labels");
    std::size_t wire_len = 1;
    for (const auto& label : q.labels) {
        if (label.empty()) throw MalformedName("empty label");
        if (label.size() > kMaxLabel)
            throw LabelTooLong("label of " + std::to_string(label.size()) + " bytes");
        wire_len += 1 + label.size();
    }
    if (wire_len > kMaxWireName)
        throw NameTooLong("encoded name is " + std::to_string(wire_len) + " wire bytes");

    std::vector<std::uint8_t> out;
    out.reserve(kDnsHeaderSize + wire_len + 4);
    put_u16be(out, txn_id);
    put_u16be(out, 0x0100);  // QR=0, opcode QUERY, RD=1
    put_u16be(out, 1);       // QDCOUNT
    put_u16be(out, 0);       // ANCOUNT
    put_u16be(out, 0);       // NSCOUNT
    put_u16be(out, 0);       // ARCOUNT
    for (const auto& label : q.labels) {
        out.push_back(static_cast<std::uint8_t>(label.size()));
        out.insert(out.end(), label.begin(), label.end());
    }
    out.push_back(0);
    put_u16be(out, q.qtype);
    put_u16be(out, q.qclass);
    return out;
}

Timestamp Timestamp::from_double(double t) {
    Timestamp ts;
    ts.sec = static_cast<std::uint32_t>(t);
    ts.usec = static_cast<std::uint32_t>(std::lround((t - ts.sec) * 1e6));
    if (ts.usec >= 1000000) {
        ts.sec += ts.usec / 1000000;
        ts.usec %= 1000000;
    }
    return ts;
}

std::string Timestamp::to_string() const {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%u.%06u", sec, usec);
    return buf;
}

Timestamp Timestamp::from_string(const std::string& s) {
    const auto dot = s.find('.');
    unsigned sec = 0, usec = 0;
    char tail = 0;
    if (dot == std::string::npos || s.size() - dot != 7 ||
        std::sscanf(s.c_str(), "%u.%6u%c", &sec, &usec, &tail) != 2 || usec >= 1000000)
        throw std::invalid_argument("bad timestamp: " + s);
    return Timestamp{sec, usec};
}

std::string ipv4_to_string(std::uint32_t ip) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", (ip >> 24) & 0xFF, (ip >> 16) & 0xFF,
                  (ip >> 8) & 0xFF, ip & 0xFF);
    return buf;
}

std::uint32_t ipv4_from_string(const std::string& s) {
    unsigned a = 0, b = 0, c = 0, d = 0;
    char tail = 0;
    if (std::sscanf(s.c_str(), "%u.%u.%u.%u%c", &a, &b, &c, &d, &tail) != 4 || a > 255 ||
        b > 255 || c > 255 || d > 255)
        throw std::invalid_argument("bad IPv4 address: " + s);
    return (a << 24) | (b << 16) | (c << 8) | d;
}

bool try_parse_dns(const CapturedPacket& pkt, std::size_t packet_index, DnsPacketRecord& out) {
    const auto& f = pkt.frame;
    if (f.size() < 14 + 20 + 8) return false;
    // Ethernet II, IPv4 only.
    if (f[12] != 0x08 || f[13] != 0x00) return false;
    const std::size_t ip_off = 14;
    const std::uint8_t ver_ihl = f[ip_off];
    if ((ver_ihl >> 4) != 4) return false;
    const std::size_t ihl = static_cast<std::size_t>(ver_ihl & 0x0F) * 4;
    if (ihl < 20 || f.size() < ip_off + ihl + 8) return false;
    const std::uint16_t total_len =
        static_cast<std::uint16_t>((f[ip_off + 2] << 8) | f[ip_off + 3]);
    if (total_len < ihl + 8 || ip_off + total_len > f.size()) return false;
    const std::uint16_t frag = static_cast<std::uint16_t>((f[ip_off + 6] << 8) | f[ip_off + 7]);
    if (frag & 0x3FFF) return false;  // fragments: MF set or nonzero offset
    if (f[ip_off + 9] != 17) return false;  // UDP

    const std::size_t udp_off = ip_off + ihl;
    const std::uint16_t src_port =
        static_cast<std::uint16_t>((f[udp_off] << 8) | f[udp_off + 1]);
    const std::uint16_t dst_port =
        static_cast<std::uint16_t>((f[udp_off + 2] << 8) | f[udp_off + 3]);
    if (dst_port != 53) return false;
    const std::uint16_t udp_len =
        static_cast<std::uint16_t>((f[udp_off + 4] << 8) | f[udp_off + 5]);
    if (udp_len < 8 || udp_off + udp_len > f.size() || ihl + udp_len > total_len) return false;

    const std::span<const std::uint8_t> payload(f.data() + udp_off + 8, udp_len - 8);
    DnsQuery q;
    try {
        q = decode_dns_query(payload);
    } catch (const DnsWireError&) {
        return false;
    }

    out.packet_index = packet_index;
    out.meta.ts = pkt.ts;
    out.meta.src_ip = (static_cast<std::uint32_t>(f[ip_off + 12]) << 24) |
                      (static_cast<std::uint32_t>(f[ip_off + 13]) << 16) |
                      (static_cast<std::uint32_t>(f[ip_off + 14]) << 8) | f[ip_off + 15];
    out.meta.dst_ip = (static_cast<std::uint32_t>(f[ip_off + 16]) << 24) |
                      (static_cast<std::uint32_t>(f[ip_off + 17]) << 16) |
                      (static_cast<std::uint32_t>(f[ip_off + 18]) << 8) | f[ip_off + 19];
    out.meta.src_port = src_port;
    out.meta.dst_port = dst_port;
    out.meta.ip_total_length = total_len;
    out.query = std::move(q);
    return true;
}

std::vector<DnsPacketRecord> extract_dns_packets(std::span<const CapturedPacket> packets) {
    std::vector<DnsPacketRecord> out;
    DnsPacketRecord rec;
    for (std::size_t i = 0; i < packets.size(); ++i) {
        if (try_parse_dns(packets[i], i, rec)) out.push_back(std::move(rec));
    }
    return out;
}

std::vector<std::uint8_t> build_udp_frame(std::uint32_t src_ip, std::uint32_t dst_ip,
                                          std::uint16_t src_port, std::uint16_t dst_port,
                                          std::span<const std::uint8_t> payload) {
    const std::size_t udp_len = 8 + payload.size();
    const std::size_t ip_len = 20 + udp_len;
    std::vector<std::uint8_t> f;
    f.reserve(14 + ip_len);

    // MACs derived from the IPs so frames are stable per host.
    auto push_mac = [&f](std::uint32_t ip) {
        f.push_back(0x02);
        f.push_back(0x1D);
        f.push_back(static_cast<std::uint8_t>(ip >> 24));
        f.push_back(static_cast<std::uint8_t>(ip >> 16));
        f.push_back(static_cast<std::uint8_t>(ip >> 8));
        f.push_back(static_cast<std::uint8_t>(ip));
    };
    push_mac(dst_ip);
    push_mac(src_ip);
    f.push_back(0x08);
    f.push_back(0x00);

    const std::size_t ip_off = f.size();
    f.push_back(0x45);  // v4, IHL 5
    f.push_back(0x00);
    f.push_back(static_cast<std::uint8_t>(ip_len >> 8));
    f.push_back(static_cast<std::uint8_t>(ip_len));
    f.push_back(0x00);  // identification
    f.push_back(0x00);
    f.push_back(0x00);  // flags/fragment
    f.push_back(0x00);
    f.push_back(64);  // TTL
    f.push_back(17);  // UDP
    f.push_back(0x00);  // checksum placeholder
    f.push_back(0x00);
    for (int shift = 24; shift >= 0; shift -= 8)
        f.push_back(static_cast<std::uint8_t>(src_ip >> shift));
    for (int shift = 24; shift >= 0; shift -= 8)
        f.push_back(static_cast<std::uint8_t>(dst_ip >> shift));

    std::uint32_t sum = 0;
    for (std::size_t i = 0; i < 20; i += 2)
        sum += static_cast<std::uint32_t>((f[ip_off + i] << 8) | f[ip_off + i + 1]);
    while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
    const std::uint16_t csum = static_cast<std::uint16_t>(~sum);
    f[ip_off + 10] = static_cast<std::uint8_t>(csum >> 8);
    f[ip_off + 11] = static_cast<std::uint8_t>(csum);

    f.push_back(static_cast<std::uint8_t>(src_port >> 8));
    f.push_back(static_cast<std::uint8_t>(src_port));
    f.push_back(static_cast<std::uint8_t>(dst_port >> 8));
    f.push_back(static_cast<std::uint8_t>(dst_port));
    f.push_back(static_cast<std::uint8_t>(udp_len >> 8));
    f.push_back(static_cast<std::uint8_t>(udp_len));
    f.push_back(0x00);  // UDP checksum optional over IPv4
    f.push_back(0x00);
    f.insert(f.end(), payload.begin(), payload.end());
    return f;
}

}  // namespace dnsguard
