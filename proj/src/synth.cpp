#include "dnsguard/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dnsguard/rng.hpp"
#include "json.hpp"

namespace dnsguard {

namespace {

constexpr double kBaseTimestamp = 1700000000.0;

// Host prefixes occasionally prepended to benign domains, with "" meaning
// the bare domain. Weights sum to 1 but only ratios matter.
constexpr const char* kPrefixNames[] = {"", "www", "api", "cdn", "mail"};
constexpr double kPrefixWeights[] = {0.55, 0.20, 0.10, 0.10, 0.05};

// qtype mix used by the tunnel encoder.
constexpr std::uint16_t kTunnelQtypes[] = {kTypeTXT, kTypeNULL, kTypeCNAME, kTypeA};
constexpr double kTunnelQtypeWeights[] = {0.5, 0.2, 0.2, 0.1};

void validate_profile(const SynthProfile& p) {
    if (p.env_name.empty()) throw BadProfile("profile has no env_name");
    if (p.benign_domains.empty()) throw BadProfile("profile has no benign domains");
    for (const auto& [domain, weight] : p.benign_domains) {
        if (weight <= 0.0) throw BadProfile("non-positive weight for domain " + domain);
        if (split_labels(domain).empty()) throw BadProfile("empty benign domain");
    }
    if (p.benign_qtype_mix.empty()) throw BadProfile("profile has no benign qtype mix");
    for (const auto& [qtype, weight] : p.benign_qtype_mix)
        if (weight <= 0.0)
            throw BadProfile("non-positive weight for qtype " + std::to_string(qtype));
    if (p.tunnel_label_len < 16 || p.tunnel_label_len > 63)
        throw BadProfile("tunnel_label_len must be within [16, 63]");
    if (split_labels(p.tunnel_domain).size() < 2)
        throw BadProfile("tunnel_domain needs at least two labels");
    if (p.rate_qps <= 0.0) throw BadProfile("rate_qps must be positive");
    if (p.client_ips.empty()) throw BadProfile("profile has no client addresses");
    try {
        for (const auto& ip : p.client_ips) ipv4_from_string(ip);
        ipv4_from_string(p.infected_ip);
        ipv4_from_string(p.resolver_ip);
    } catch (const std::exception& e) {
        throw BadProfile(std::string("bad address in profile: ") + e.what());
    }
    tunnel_labels_per_query(p);  // throws if the apex leaves no room for payload
}

std::string encode_bits(std::span<const std::uint8_t> data, int bits_per_char,
                        const char* alphabet) {
    std::string out;
    out.reserve((data.size() * 8 + bits_per_char - 1) / bits_per_char);
    std::uint32_t buffer = 0;
    int have = 0;
    for (std::uint8_t b : data) {
        buffer = (buffer << 8) | b;
        have += 8;
        while (have >= bits_per_char) {
            out.push_back(alphabet[(buffer >> (have - bits_per_char)) &
                                   ((1u << bits_per_char) - 1)]);
            have -= bits_per_char;
        }
    }
    if (have > 0)
        out.push_back(alphabet[(buffer << (bits_per_char - have)) &
                               ((1u << bits_per_char) - 1)]);
    return out;
}

CapturedPacket make_query_packet(double ts, std::uint32_t src_ip, std::uint32_t dst_ip,
                                 std::uint16_t src_port, const std::string& qname,
                                 std::uint16_t qtype, SplitRng& rng) {
    const auto txn = static_cast<std::uint16_t>(rng.next_below(65536));
    const auto payload = encode_dns_query(DnsQuery::from_name(qname, qtype), txn);
    CapturedPacket pkt;
    pkt.ts = Timestamp::from_double(ts);
    pkt.frame = build_udp_frame(src_ip, dst_ip, src_port, 53, payload);
    return pkt;
}

std::string reverse_lookup_name(SplitRng& rng) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%u.%u.%u.%u.in-addr.arpa",
                  static_cast<unsigned>(rng.next_below(256)),
                  static_cast<unsigned>(rng.next_below(256)),
                  static_cast<unsigned>(rng.next_below(256)),
                  static_cast<unsigned>(rng.next_below(256)));
    return buf;
}

std::vector<CapturedPacket> benign_stream(const SynthProfile& p, std::size_t n, SplitRng rng) {
    std::vector<double> domain_weights, qtype_weights;
    for (const auto& [d, w] : p.benign_domains) domain_weights.push_back(w);
    for (const auto& [q, w] : p.benign_qtype_mix) qtype_weights.push_back(w);
    std::vector<std::uint32_t> clients;
    for (const auto& ip : p.client_ips) clients.push_back(ipv4_from_string(ip));
    const std::uint32_t resolver = ipv4_from_string(p.resolver_ip);

    std::vector<CapturedPacket> out;
    out.reserve(n);
    double t = kBaseTimestamp;
    for (std::size_t i = 0; i < n; ++i) {
        t += rng.next_exponential(1.0 / p.rate_qps);
        const std::uint16_t qtype = p.benign_qtype_mix[rng.pick_weighted(qtype_weights)].first;
        std::string qname;
        if (qtype == kTypePTR) {
            qname = reverse_lookup_name(rng);
        } else {
            qname = p.benign_domains[rng.pick_weighted(domain_weights)].first;
            const auto prefix = kPrefixNames[rng.pick_weighted(kPrefixWeights)];
            if (*prefix) qname = std::string(prefix) + "." + qname;
        }
        const std::uint32_t src = clients[rng.next_below(clients.size())];
        const auto sport = static_cast<std::uint16_t>(1024 + rng.next_below(64512));
        out.push_back(make_query_packet(t, src, resolver, sport, qname, qtype, rng));
    }
    return out;
}

std::vector<CapturedPacket> tunnel_session(const SynthProfile& p, std::size_t payload_bytes,
                                           ThroughputMode mode, double start_ts, SplitRng rng) {
    if (payload_bytes == 0) throw PayloadTooSmall("tunnel payload must be at least 1 byte");

    std::vector<std::uint8_t> payload(payload_bytes);
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng.next_below(256));
    const std::string encoded =
        p.tunnel_encoding == TunnelEncoding::base64url
            ? encode_base64url(payload)
            : encode_base32hex(payload);

    const std::size_t label_len = static_cast<std::size_t>(p.tunnel_label_len);
    const std::size_t per_query =
        static_cast<std::size_t>(tunnel_labels_per_query(p)) * label_len;
    const std::uint32_t infected = ipv4_from_string(p.infected_ip);
    const std::uint32_t resolver = ipv4_from_string(p.resolver_ip);

    std::vector<CapturedPacket> out;
    double t = start_ts;
    std::size_t offset = 0, counter = 0;
    while (offset < encoded.size()) {
        char counter_label[8];
        std::snprintf(counter_label, sizeof(counter_label), "%04zx", counter & 0xFFFF);
        std::string qname = counter_label;
        const std::size_t chunk_end = std::min(encoded.size(), offset + per_query);
        while (offset < chunk_end) {
            const std::size_t take = std::min(label_len, chunk_end - offset);
            qname += '.';
            qname += encoded.substr(offset, take);
            offset += take;
        }
        qname += '.';
        qname += p.tunnel_domain;

        const std::uint16_t qtype = kTunnelQtypes[rng.pick_weighted(kTunnelQtypeWeights)];
        const auto sport = static_cast<std::uint16_t>(1024 + rng.next_below(64512));
        out.push_back(make_query_packet(t, infected, resolver, sport, qname, qtype, rng));

        ++counter;
        if (mode == ThroughputMode::low)
            t += 1.0 + rng.next_exponential(0.25);
        else
            t += rng.next_uniform(0.0005, 0.005);
    }
    return out;
}

}  // namespace

std::string encode_base64url(std::span<const std::uint8_t> data) {
    static constexpr char kAlphabet[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
    return encode_bits(data, 6, kAlphabet);
}

std::string encode_base32hex(std::span<const std::uint8_t> data) {
    static constexpr char kAlphabet[] = "0123456789ABCDEFGHIJKLMNOPQRSTUV";
    return encode_bits(data, 5, kAlphabet);
}

int tunnel_labels_per_query(const SynthProfile& profile) {
    const int apex_wire = static_cast<int>(wire_name_length(split_labels(profile.tunnel_domain)));
    const int budget = 255 - apex_wire - 5;  // 5 bytes buys the counter label
    const int k = budget / (1 + profile.tunnel_label_len);
    if (k < 1)
        throw BadProfile("tunnel_label_len " + std::to_string(profile.tunnel_label_len) +
                         " leaves no room under the 255-byte name cap");
    return k;
}

std::vector<CapturedPacket> generate_benign(const SynthProfile& profile, std::size_t n) {
    validate_profile(profile);
    return benign_stream(profile, n, SplitRng(profile.seed).derive(0));
}

std::vector<CapturedPacket> generate_tunnel(const SynthProfile& profile,
                                            std::size_t payload_bytes) {
    validate_profile(profile);
    return tunnel_session(profile, payload_bytes, profile.throughput_mode, kBaseTimestamp,
                          SplitRng(profile.seed).derive(1));
}

EnvironmentBuild build_environment(const SynthProfile& profile, std::size_t benign_n,
                                   std::size_t tunnel_sessions,
                                   std::optional<double> high_fraction) {
    validate_profile(profile);

    struct Entry {
        CapturedPacket pkt;
        int label;
        std::string mode;
    };
    std::vector<Entry> entries;

    auto benign = benign_stream(profile, benign_n, SplitRng(profile.seed).derive(0));
    double window = 3600.0;
    if (!benign.empty())
        window = std::max(60.0, benign.back().ts.to_double() - kBaseTimestamp);
    for (auto& pkt : benign) entries.push_back({std::move(pkt), 0, "-"});

    SplitRng schedule = SplitRng(profile.seed).derive(2);
    for (std::size_t s = 0; s < tunnel_sessions; ++s) {
        const double start = kBaseTimestamp + schedule.next_uniform(0.0, window);
        ThroughputMode mode = profile.throughput_mode;
        if (high_fraction)
            mode = schedule.next_double() < *high_fraction ? ThroughputMode::high
                                                           : ThroughputMode::low;
        // Low throughput mimics sensor-state beacons (a few bytes per
        // session); high throughput pushes 200-1500 byte blocks.
        const std::size_t payload_bytes =
            mode == ThroughputMode::low ? 1 + schedule.next_below(8)
                                        : 200 + schedule.next_below(1301);
        auto session = tunnel_session(profile, payload_bytes, mode, start,
                                      SplitRng(profile.seed).derive(3 + s));
        const char* mode_name = mode == ThroughputMode::low ? "low" : "high";
        for (auto& pkt : session) entries.push_back({std::move(pkt), 1, mode_name});
    }

    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.pkt.ts < b.pkt.ts; });

    EnvironmentBuild build;
    build.packets.reserve(entries.size());
    build.manifest.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        build.packets.push_back(std::move(entries[i].pkt));
        build.manifest.push_back({i, entries[i].label, profile.env_name, entries[i].mode});
    }
    return build;
}

std::string manifest_to_csv(const LabelManifest& manifest) {
    std::string out = "packet_index,label,env,mode\n";
    for (const auto& row : manifest) {
        out += std::to_string(row.packet_index);
        out += ',';
        out += std::to_string(row.label);
        out += ',';
        out += row.env;
        out += ',';
        out += row.mode;
        out += '\n';
    }
    return out;
}

LabelManifest csv_to_manifest(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "packet_index,label,env,mode")
        throw BadManifest("manifest header mismatch");
    LabelManifest manifest;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::array<std::string, 4> fields;
        std::size_t start = 0;
        for (int f = 0; f < 3; ++f) {
            const auto comma = line.find(',', start);
            if (comma == std::string::npos) throw BadManifest("manifest row with missing fields");
            fields[static_cast<std::size_t>(f)] = line.substr(start, comma - start);
            start = comma + 1;
        }
        fields[3] = line.substr(start);
        ManifestRow row;
        try {
            row.packet_index = std::stoull(fields[0]);
        } catch (const std::exception&) {
            throw BadManifest("bad packet index: " + fields[0]);
        }
        if (fields[1] != "0" && fields[1] != "1")
            throw BadManifest("bad label: " + fields[1]);
        row.label = fields[1] == "1" ? 1 : 0;
        row.env = fields[2];
        row.mode = fields[3];
        if (!manifest.empty() && row.packet_index <= manifest.back().packet_index)
            throw BadManifest("packet indices must be strictly increasing");
        manifest.push_back(std::move(row));
    }
    return manifest;
}

SynthProfile env_a_profile(std::uint64_t seed) {
    SynthProfile p;
    p.env_name = "env_a";
    p.benign_domains = {
        {"time.cloudsync.net", 6},      {"pool.ntp.org", 5},
        {"api.smarthome-hub.com", 9},   {"telemetry.bulbvendor.io", 6},
        {"firmware.camvendor.net", 5},  {"mqtt.devicecloud.org", 8},
        {"cdn.streambox.tv", 7},        {"push.fridgeworks.com", 6},
        {"weather.forecastapi.io", 3},  {"ota.vacuumbot.cn", 2},
        {"media.streambox.tv", 4},      {"auth.smarthome-hub.com", 5},
        {"ping.router-status.net", 4},  {"logs.bulbvendor.io", 3},
        {"store.voiceassist.com", 5},   {"img.adnetwork.example", 2},
        {"video.doorcam.net", 4},       {"sync.thermopro.de", 3},
        {"update.tvtuner.org", 3},      {"nas.local-backup.lan", 2},
    };
    p.benign_qtype_mix = {{kTypeA, 0.60},   {kTypeAAAA, 0.22}, {kTypePTR, 0.04},
                          {kTypeTXT, 0.02}, {kTypeSRV, 0.05},  {kTypeHTTPS, 0.07}};
    p.tunnel_domain = "exfil-relay.example";
    p.tunnel_encoding = TunnelEncoding::base64url;
    p.tunnel_label_len = 32;
    p.throughput_mode = ThroughputMode::low;
    p.rate_qps = 40.0;
    p.seed = seed;
    p.client_ips = {"192.168.1.10", "192.168.1.11", "192.168.1.12", "192.168.1.13",
                    "192.168.1.14", "192.168.1.15", "192.168.1.16", "192.168.1.17"};
    p.infected_ip = "192.168.1.66";
    p.resolver_ip = "192.168.1.1";
    return p;
}

SynthProfile env_b_profile(std::uint64_t seed) {
    SynthProfile p;
    p.env_name = "env_b";
    p.benign_domains = {
        {"mail.corpnet-b.com", 8},     {"calendar.corpnet-b.com", 6},
        {"files.corpnet-b.com", 7},    {"www.newsfeed.example", 5},
        {"cdn.docshare.io", 6},        {"api.crm-portal.net", 7},
        {"sso.identityhub.org", 6},    {"time.winsync.net", 4},
        {"av-updates.securevendor.com", 5}, {"print.corpnet-b.com", 3},
        {"wiki.corpnet-b.com", 4},     {"repo.buildfarm.dev", 3},
        {"chat.teamtalk.app", 6},      {"voice.teamtalk.app", 3},
        {"tiles.mapservice.org", 2},   {"fonts.webassets.net", 4},
        {"metrics.webassets.net", 3},  {"backup.storagebay.eu", 2},
    };
    p.benign_qtype_mix = {{kTypeA, 0.55},   {kTypeAAAA, 0.25}, {kTypePTR, 0.06},
                          {kTypeTXT, 0.04}, {kTypeSRV, 0.03},  {kTypeHTTPS, 0.07}};
    p.tunnel_domain = "ns1.cdn-sync.net";
    p.tunnel_encoding = TunnelEncoding::base32hex;
    p.tunnel_label_len = 28;
    p.throughput_mode = ThroughputMode::low;
    p.rate_qps = 60.0;
    p.seed = seed;
    p.client_ips = {"10.20.0.21", "10.20.0.22", "10.20.0.23",
                    "10.20.0.24", "10.20.0.25", "10.20.0.26"};
    p.infected_ip = "10.20.0.99";
    p.resolver_ip = "10.20.0.1";
    return p;
}

namespace {

std::uint16_t qtype_from_name(const std::string& name) {
    if (name == "A") return kTypeA;
    if (name == "AAAA") return kTypeAAAA;
    if (name == "PTR") return kTypePTR;
    if (name == "TXT") return kTypeTXT;
    if (name == "SRV") return kTypeSRV;
    if (name == "HTTPS") return kTypeHTTPS;
    if (name == "CNAME") return kTypeCNAME;
    if (name == "NULL") return kTypeNULL;
    throw BadProfile("unknown qtype name: " + name);
}

}  // namespace

SynthProfile profile_from_json(const std::string& text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw BadProfile(std::string("profile is not valid JSON: ") + e.what());
    }
    SynthProfile p = env_a_profile(0);  // addressing defaults when the file omits them
    try {
        p.env_name = doc.at("env_name").get<std::string>();
        p.benign_domains.clear();
        for (const auto& entry : doc.at("benign_domains"))
            p.benign_domains.emplace_back(entry.at(0).get<std::string>(),
                                          entry.at(1).get<double>());
        if (doc.contains("benign_qtype_mix")) {
            p.benign_qtype_mix.clear();
            for (const auto& [name, weight] : doc.at("benign_qtype_mix").items())
                p.benign_qtype_mix.emplace_back(qtype_from_name(name), weight.get<double>());
        }
        p.tunnel_domain = doc.at("tunnel_domain").get<std::string>();
        if (doc.contains("tunnel_encoding")) {
            const auto enc = doc.at("tunnel_encoding").get<std::string>();
            if (enc == "base64url")
                p.tunnel_encoding = TunnelEncoding::base64url;
            else if (enc == "base32hex")
                p.tunnel_encoding = TunnelEncoding::base32hex;
            else
                throw BadProfile("unknown tunnel_encoding: " + enc);
        }
        if (doc.contains("tunnel_label_len"))
            p.tunnel_label_len = doc.at("tunnel_label_len").get<int>();
        if (doc.contains("throughput_mode")) {
            const auto mode = doc.at("throughput_mode").get<std::string>();
            if (mode == "low")
                p.throughput_mode = ThroughputMode::low;
            else if (mode == "high")
                p.throughput_mode = ThroughputMode::high;
            else
                throw BadProfile("unknown throughput_mode: " + mode);
        }
        if (doc.contains("rate_qps")) p.rate_qps = doc.at("rate_qps").get<double>();
        if (doc.contains("client_ips"))
            p.client_ips = doc.at("client_ips").get<std::vector<std::string>>();
        if (doc.contains("infected_ip"))
            p.infected_ip = doc.at("infected_ip").get<std::string>();
        if (doc.contains("resolver_ip"))
            p.resolver_ip = doc.at("resolver_ip").get<std::string>();
        if (doc.contains("seed")) p.seed = doc.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw BadProfile(std::string("malformed profile: ") + e.what());
    }
    validate_profile(p);
    return p;
}

SynthProfile load_profile_file(const std::string& path, std::uint64_t seed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BadProfile("cannot open profile " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    SynthProfile p = profile_from_json(ss.str());
    p.seed = seed;
    return p;
}

}  // namespace dnsguard
