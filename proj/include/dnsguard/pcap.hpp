#pragma once

#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "dnsguard/dns_wire.hpp"

namespace dnsguard {

struct PcapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadMagic : PcapError {
    using PcapError::PcapError;
};
struct TruncatedRecord : PcapError {
    using PcapError::PcapError;
};
struct UnsupportedLinkType : PcapError {
    using PcapError::PcapError;
};
struct IoFailure : PcapError {
    using PcapError::PcapError;
};

/// Read a classic pcap stream (magic 0xa1b2c3d4, either byte order,
/// linktype Ethernet). Returns packets in file order.
std::vector<CapturedPacket> read_pcap(std::istream& in);

/// Write classic pcap: little-endian, version 2.4, snaplen 65535, linktype 1,
/// microsecond timestamps. Returns the number of bytes written.
std::size_t write_pcap(std::span<const CapturedPacket> packets, std::ostream& out);

std::vector<CapturedPacket> read_pcap_file(const std::string& path);
std::size_t write_pcap_file(std::span<const CapturedPacket> packets, const std::string& path);

}  // namespace dnsguard
