#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnsguard/dns_wire.hpp"

namespace dnsguard {

struct FeatureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyName : FeatureError {
    using FeatureError::FeatureError;
};
struct SchemaMismatch : FeatureError {
    using FeatureError::FeatureError;
};
struct BadHeader : FeatureError {
    using FeatureError::FeatureError;
};
struct BadRow : FeatureError {
    using FeatureError::FeatureError;
};
struct UnknownFeature : FeatureError {
    using FeatureError::FeatureError;
};

inline constexpr std::size_t kFeatureCount = 16;

/// Canonical feature order. Models, CSV files, and schema fingerprints all
/// assume exactly this order.
inline constexpr std::array<const char*, kFeatureCount> kFeatureNames = {
    "ip_length",        "query_length",       "subdomain_count", "subdomain_average",
    "shannon_entropy",  "max_subdomain_length", "query_type",    "special_characters",
    "char_freq_mean",   "char_freq_std",      "char_freq_min",   "char_freq_max",
    "numeric_characters", "lower_characters", "upper_characters", "query_class",
};

std::size_t feature_index(const std::string& name);  // throws UnknownFeature

/// The 16 stateless per-query features in canonical order.
struct FeatureVector {
    std::array<double, kFeatureCount> values{};

    double operator[](std::size_t i) const { return values[i]; }
    bool operator==(const FeatureVector&) const = default;
};

/// An ordered subset of the canonical features. A model trained under a
/// schema may only score vectors reduced under the same schema; the
/// fingerprint makes that binding checkable.
struct FeatureSchema {
    std::array<bool, kFeatureCount> mask{};

    static FeatureSchema full();
    /// The pruned schema: drops upper_characters, subdomain_count and
    /// query_length, leaving 13 active features.
    static FeatureSchema pruned13();
    static FeatureSchema from_names(const std::vector<std::string>& names);

    std::size_t active_count() const;
    std::vector<std::string> active_names() const;
    /// FNV-1a over the active names in canonical order, as 16 hex digits.
    std::string fingerprint() const;

    bool operator==(const FeatureSchema&) const = default;
};

/// Feature names the importance analysis drops to reach the 13-feature set.
inline const std::vector<std::string> kPrunedDropList = {"upper_characters", "subdomain_count",
                                                         "query_length"};

/// Compute all 16 features for one admitted query. Pure and stateless: the
/// batch and streaming paths call exactly this function.
FeatureVector extract_features(const PacketMeta& meta, const DnsQuery& q);

/// Select the schema's active components in canonical order.
std::vector<double> apply_schema(const FeatureVector& v, const FeatureSchema& s);

/// Batch extraction over parsed DNS records. The OpenMP path writes disjoint
/// slots, so its output is identical to the serial reference.
std::vector<FeatureVector> extract_features_batch(std::span<const DnsPacketRecord> records);
std::vector<FeatureVector> extract_features_batch_serial(std::span<const DnsPacketRecord> records);

/// CSV persistence: header is the canonical names plus "label"; values are
/// serialized with round-trip precision.
struct LabeledFeatures {
    std::vector<FeatureVector> rows;
    std::vector<int> labels;  // 0 benign, 1 attack
};

std::string features_to_csv(const LabeledFeatures& rows);
LabeledFeatures csv_to_features(const std::string& text);

/// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace dnsguard
