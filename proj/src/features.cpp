#include "dnsguard/features.hpp"

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace dnsguard {

std::size_t feature_index(const std::string& name) {
    for (std::size_t i = 0; i < kFeatureCount; ++i)
        if (name == kFeatureNames[i]) return i;
    throw UnknownFeature("unknown feature name: " + name);
}

FeatureSchema FeatureSchema::full() {
    FeatureSchema s;
    s.mask.fill(true);
    return s;
}

FeatureSchema FeatureSchema::pruned13() {
    FeatureSchema s = full();
    for (const auto& name : kPrunedDropList) s.mask[feature_index(name)] = false;
    return s;
}

FeatureSchema FeatureSchema::from_names(const std::vector<std::string>& names) {
    FeatureSchema s;
    for (const auto& n : names) s.mask[feature_index(n)] = true;
    return s;
}

std::size_t FeatureSchema::active_count() const {
    std::size_t n = 0;
    for (bool b : mask) n += b;
    return n;
}

std::vector<std::string> FeatureSchema::active_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < kFeatureCount; ++i)
        if (mask[i]) names.emplace_back(kFeatureNames[i]);
    return names;
}

std::string FeatureSchema::fingerprint() const {
    std::uint64_t h = 14695981039346656037ULL;
    auto feed = [&h](const char* s) {
        for (; *s; ++s) {
            h ^= static_cast<std::uint8_t>(*s);
            h *= 1099511628211ULL;
        }
    };
    bool first = true;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        if (!mask[i]) continue;
        if (!first) feed(",");
        feed(kFeatureNames[i]);
        first = false;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

FeatureVector extract_features(const PacketMeta& meta, const DnsQuery& q) {
    if (q.qname.empty()) throw EmptyName("query name is empty");

    const std::string& name = q.qname;
    const double qlen = static_cast<double>(name.size());

    std::array<std::uint32_t, 256> counts{};
    std::uint32_t numeric = 0, lower = 0, upper = 0, special = 0;
    for (unsigned char c : name) {
        ++counts[c];
        if (c >= '0' && c <= '9')
            ++numeric;
        else if (c >= 'a' && c <= 'z')
            ++lower;
        else if (c >= 'A' && c <= 'Z')
            ++upper;
        else if (c != '.')
            ++special;
    }

    // Entropy and frequency statistics over the characters of the full
    // query, dots included. Iteration is in byte-value order so the
    // floating-point results are reproducible bit for bit.
    double entropy = 0.0;
    std::size_t distinct = 0;
    std::uint32_t freq_min = 0, freq_max = 0;
    for (std::uint32_t f : counts) {
        if (f == 0) continue;
        const double p = static_cast<double>(f) / qlen;
        entropy -= p * std::log2(p);
        if (distinct == 0) {
            freq_min = freq_max = f;
        } else {
            if (f < freq_min) freq_min = f;
            if (f > freq_max) freq_max = f;
        }
        ++distinct;
    }
    const double n = static_cast<double>(distinct);
    const double freq_mean = qlen / n;  // frequencies sum to the query length
    double var = 0.0;
    for (std::uint32_t f : counts) {
        if (f == 0) continue;
        const double d = static_cast<double>(f) - freq_mean;
        var += d * d;
    }
    const double freq_std = std::sqrt(var / n);

    std::size_t max_label = 0, label_bytes = 0;
    for (const auto& l : q.labels) {
        label_bytes += l.size();
        if (l.size() > max_label) max_label = l.size();
    }

    FeatureVector v;
    v.values = {
        static_cast<double>(meta.ip_total_length),
        qlen,
        static_cast<double>(q.labels.size()),
        static_cast<double>(label_bytes) / static_cast<double>(q.labels.size()),
        entropy,
        static_cast<double>(max_label),
        static_cast<double>(q.qtype),
        static_cast<double>(special),
        freq_mean,
        freq_std,
        static_cast<double>(freq_min),
        static_cast<double>(freq_max),
        static_cast<double>(numeric),
        static_cast<double>(lower),
        static_cast<double>(upper),
        static_cast<double>(q.qclass),
    };
    return v;
}

std::vector<double> apply_schema(const FeatureVector& v, const FeatureSchema& s) {
    if (s.active_count() == 0) throw SchemaMismatch("schema selects no features");
    std::vector<double> out;
    out.reserve(s.active_count());
    for (std::size_t i = 0; i < kFeatureCount; ++i)
        if (s.mask[i]) out.push_back(v.values[i]);
    return out;
}

std::vector<FeatureVector> extract_features_batch(std::span<const DnsPacketRecord> records) {
    std::vector<FeatureVector> out(records.size());
    const std::int64_t n = static_cast<std::int64_t>(records.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] =
            extract_features(records[static_cast<std::size_t>(i)].meta,
                             records[static_cast<std::size_t>(i)].query);
    return out;
}

std::vector<FeatureVector> extract_features_batch_serial(
    std::span<const DnsPacketRecord> records) {
    std::vector<FeatureVector> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(extract_features(r.meta, r.query));
    return out;
}

std::string format_double(double v) {
    char buf[32];
    // Shortest representation that round-trips.
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

std::string features_to_csv(const LabeledFeatures& rows) {
    std::string out;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        if (i) out.push_back(',');
        out += kFeatureNames[i];
    }
    out += ",label\n";
    for (std::size_t r = 0; r < rows.rows.size(); ++r) {
        for (double v : rows.rows[r].values) {
            out += format_double(v);
            out.push_back(',');
        }
        out += std::to_string(rows.labels[r]);
        out.push_back('\n');
    }
    return out;
}

LabeledFeatures csv_to_features(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw BadHeader("empty document");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::string expected;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        if (i) expected.push_back(',');
        expected += kFeatureNames[i];
    }
    expected += ",label";
    if (line != expected) throw BadHeader("header does not match the canonical feature order");

    LabeledFeatures out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        FeatureVector v;
        const char* p = line.c_str();
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            char* end = nullptr;
            v.values[i] = std::strtod(p, &end);
            if (end == p || *end != ',')
                throw BadRow("line " + std::to_string(lineno) + ": bad value in column " +
                             std::to_string(i));
            p = end + 1;
        }
        char* end = nullptr;
        const long label = std::strtol(p, &end, 10);
        if (end == p || *end != '\0' || (label != 0 && label != 1))
            throw BadRow("line " + std::to_string(lineno) + ": label must be 0 or 1");
        out.rows.push_back(v);
        out.labels.push_back(static_cast<int>(label));
    }
    return out;
}

}  // namespace dnsguard
