#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dnsguard/dns_wire.hpp"

namespace dnsguard {

// Errors raised by the traffic generator.
class SynthError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class PayloadTooSmall : public SynthError {
public:
    using SynthError::SynthError;
};
class BadProfile : public SynthError {
public:
    using SynthError::SynthError;
};
class BadManifest : public SynthError {
public:
    using SynthError::SynthError;
};

enum class TunnelEncoding { base64url, base32hex };
enum class ThroughputMode { low, high };

// One network environment: what legitimate clients ask for, and how the
// infected device exfiltrates. Two built-in presets model two separate
// networks; a custom profile can be loaded from a JSON file.
struct SynthProfile {
    std::string env_name;
    std::vector<std::pair<std::string, double>> benign_domains;  // (domain, weight)
    std::vector<std::pair<std::uint16_t, double>> benign_qtype_mix;
    std::string tunnel_domain;  // attacker-controlled apex
    TunnelEncoding tunnel_encoding = TunnelEncoding::base64url;
    int tunnel_label_len = 32;  // encoded characters per payload label
    ThroughputMode throughput_mode = ThroughputMode::low;
    double rate_qps = 40.0;  // mean benign query rate
    std::uint64_t seed = 0;
    // Addressing for the fixed Ethernet/IPv4/UDP frame layout.
    std::vector<std::string> client_ips;
    std::string infected_ip;
    std::string resolver_ip;
};

SynthProfile env_a_profile(std::uint64_t seed);
SynthProfile env_b_profile(std::uint64_t seed);
SynthProfile profile_from_json(const std::string& text);
SynthProfile load_profile_file(const std::string& path, std::uint64_t seed);

// Unpadded encodings used to pack payload bytes into DNS labels.
std::string encode_base64url(std::span<const std::uint8_t> data);
std::string encode_base32hex(std::span<const std::uint8_t> data);

// Payload labels a single query can carry: the 255-byte wire cap minus the
// apex and the 4-hex-digit counter label, divided by the per-label cost.
int tunnel_labels_per_query(const SynthProfile& profile);

// n legitimate-looking queries: weighted domain sampling with occasional
// host prefixes, profile qtype mix, exponential inter-arrival times.
std::vector<CapturedPacket> generate_benign(const SynthProfile& profile, std::size_t n);

// One exfiltration session: payload_bytes random bytes encoded into qname
// labels behind a sequence-counter label, chunked across as many queries as
// the 255-byte name cap requires. Throws PayloadTooSmall on zero bytes.
std::vector<CapturedPacket> generate_tunnel(const SynthProfile& profile,
                                            std::size_t payload_bytes);

// Ground-truth record for one generated packet.
struct ManifestRow {
    std::uint64_t packet_index = 0;
    int label = 0;  // 0 benign, 1 tunnel
    std::string env;
    std::string mode;  // "low"/"high" for tunnel rows, "-" for benign

    bool operator==(const ManifestRow&) const = default;
};
using LabelManifest = std::vector<ManifestRow>;

std::string manifest_to_csv(const LabelManifest& manifest);
LabelManifest csv_to_manifest(const std::string& text);

// A full capture: benign background plus tunnel_sessions exfiltration
// sessions, merged by timestamp. Session payload sizes follow the throughput
// mode; high_fraction overrides the profile mode with a per-session coin
// (0 = all low, 1 = all high, 0.5 = mixed).
struct EnvironmentBuild {
    std::vector<CapturedPacket> packets;
    LabelManifest manifest;
};
EnvironmentBuild build_environment(const SynthProfile& profile, std::size_t benign_n,
                                   std::size_t tunnel_sessions,
                                   std::optional<double> high_fraction = std::nullopt);

}  // namespace dnsguard
