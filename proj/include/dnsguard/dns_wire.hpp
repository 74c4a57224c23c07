#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnsguard {

struct DnsWireError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TruncatedMessage : DnsWireError {
    using DnsWireError::DnsWireError;
};
struct MalformedName : DnsWireError {
    using DnsWireError::DnsWireError;
};
struct NotAQuery : DnsWireError {
    using DnsWireError::DnsWireError;
};
struct NoQuestion : DnsWireError {
    using DnsWireError::DnsWireError;
};
struct LabelTooLong : DnsWireError {
    using DnsWireError::DnsWireError;
};
struct NameTooLong : DnsWireError {
    using DnsWireError::DnsWireError;
};

// Common TYPE codes.
inline constexpr std::uint16_t kTypeA = 1;
inline constexpr std::uint16_t kTypeNS = 2;
inline constexpr std::uint16_t kTypeCNAME = 5;
inline constexpr std::uint16_t kTypeSOA = 6;
inline constexpr std::uint16_t kTypeNULL = 10;
inline constexpr std::uint16_t kTypePTR = 12;
inline constexpr std::uint16_t kTypeMX = 15;
inline constexpr std::uint16_t kTypeTXT = 16;
inline constexpr std::uint16_t kTypeAAAA = 28;
inline constexpr std::uint16_t kTypeSRV = 33;
inline constexpr std::uint16_t kTypeHTTPS = 65;
inline constexpr std::uint16_t kClassIN = 1;

/// One decoded DNS question. `qname` is the presentation form (labels joined
/// by '.', no trailing dot); case is preserved exactly as on the wire.
struct DnsQuery {
    std::string qname;
    std::vector<std::string> labels;
    std::uint16_t qtype = kTypeA;
    std::uint16_t qclass = kClassIN;
    std::uint16_t txn_id = 0;

    bool operator==(const DnsQuery&) const = default;

    static DnsQuery from_name(std::string name, std::uint16_t qtype = kTypeA,
                              std::uint16_t qclass = kClassIN, std::uint16_t txn_id = 0);
};

std::vector<std::string> split_labels(const std::string& qname);
std::string join_labels(const std::vector<std::string>& labels);

/// Wire-encoded length of a name built from these labels (length bytes +
/// label bytes + terminating root byte).
std::size_t wire_name_length(const std::vector<std::string>& labels);

/// Decode the first question of a DNS query message.
/// Rejects responses (QR=1), empty question sections, compression pointers
/// in the name, and anything that would read past the payload.
DnsQuery decode_dns_query(std::span<const std::uint8_t> udp_payload);

/// Encode a single-question DNS query (QR=0, RD=1).
std::vector<std::uint8_t> encode_dns_query(const DnsQuery& q, std::uint16_t txn_id);
inline std::vector<std::uint8_t> encode_dns_query(const DnsQuery& q) {
    return encode_dns_query(q, q.txn_id);
}

struct Timestamp {
    std::uint32_t sec = 0;
    std::uint32_t usec = 0;

    bool operator==(const Timestamp&) const = default;
    auto operator<=>(const Timestamp&) const = default;

    double to_double() const { return static_cast<double>(sec) + usec * 1e-6; }
    static Timestamp from_double(double t);
    std::string to_string() const;  // "sec.usec", usec zero-padded to 6 digits
    static Timestamp from_string(const std::string& s);
};

/// Per-packet metadata for an admitted UDP/53 DNS query.
struct PacketMeta {
    Timestamp ts;
    std::uint32_t src_ip = 0;  // IPv4, host byte order
    std::uint32_t dst_ip = 0;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    std::uint16_t ip_total_length = 0;  // IPv4 "Total Length" field

    bool operator==(const PacketMeta&) const = default;
};

std::string ipv4_to_string(std::uint32_t ip);
std::uint32_t ipv4_from_string(const std::string& s);

/// A raw captured link-layer frame. Protocol metadata is only derivable once
/// the frame parses, so it carries just the capture timestamp and the bytes.
struct CapturedPacket {
    Timestamp ts;
    std::vector<std::uint8_t> frame;

    bool operator==(const CapturedPacket&) const = default;
};

struct DnsPacketRecord {
    std::size_t packet_index = 0;  // position in the input capture
    PacketMeta meta;
    DnsQuery query;
};

/// Parse one frame as Ethernet -> IPv4 -> UDP/53 -> DNS query.
/// Returns false (leaving out untouched) for anything else; never throws.
bool try_parse_dns(const CapturedPacket& pkt, std::size_t packet_index, DnsPacketRecord& out);

/// Filter a capture down to the admitted DNS queries. Non-matching packets
/// are skipped, not errors.
std::vector<DnsPacketRecord> extract_dns_packets(std::span<const CapturedPacket> packets);

/// Build an Ethernet/IPv4/UDP frame around a DNS payload (used by the
/// traffic generator and by tests).
std::vector<std::uint8_t> build_udp_frame(std::uint32_t src_ip, std::uint32_t dst_ip,
                                          std::uint16_t src_port, std::uint16_t dst_port,
                                          std::span<const std::uint8_t> payload);

}  // namespace dnsguard
