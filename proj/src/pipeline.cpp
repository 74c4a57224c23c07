#include "dnsguard/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>

#include "dnsguard/features.hpp"
#include "dnsguard/rng.hpp"
#include "json.hpp"

namespace dnsguard {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t elapsed_ns(Clock::time_point t0, Clock::time_point t1) {
    const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    return ns > 0 ? static_cast<std::uint64_t>(ns) : 1;  // clock ties still count as time
}

std::size_t latency_bucket(std::uint64_t ns) {
    if (ns <= 100'000) return 0;
    if (ns <= 500'000) return 1;
    if (ns <= 1'000'000) return 2;
    if (ns <= 5'000'000) return 3;
    return 4;
}

}  // namespace

PcapReplaySource::PcapReplaySource(std::vector<CapturedPacket> packets, Pacing pacing)
    : packets_(std::move(packets)), pacing_(pacing) {}

std::optional<CapturedPacket> PcapReplaySource::next() {
    if (pos_ >= packets_.size()) return std::nullopt;
    if (pacing_ == Pacing::recorded && pos_ > 0) {
        const double gap =
            packets_[pos_].ts.to_double() - packets_[pos_ - 1].ts.to_double();
        if (gap > 0)
            std::this_thread::sleep_for(std::chrono::duration<double>(gap));
    }
    return packets_[pos_++];
}

std::string event_to_json_line(const SecurityEvent& e) {
    nlohmann::ordered_json doc;
    doc["ts"] = e.ts.to_string();
    doc["attack_type"] = e.attack_type;
    doc["src_ip"] = e.src_ip;
    doc["dst_ip"] = e.dst_ip;
    doc["qname"] = e.qname;
    doc["score"] = e.score;
    doc["action"] = e.action;
    doc["model_id"] = e.model_id;
    return doc.dump();
}

SecurityEvent event_from_json_line(const std::string& line) {
    try {
        const auto doc = nlohmann::json::parse(line);
        SecurityEvent e;
        e.ts = Timestamp::from_string(doc.at("ts").get<std::string>());
        e.attack_type = doc.at("attack_type").get<std::string>();
        e.src_ip = doc.at("src_ip").get<std::string>();
        e.dst_ip = doc.at("dst_ip").get<std::string>();
        e.qname = doc.at("qname").get<std::string>();
        e.score = doc.at("score").get<double>();
        e.action = doc.at("action").get<std::string>();
        e.model_id = doc.at("model_id").get<std::string>();
        return e;
    } catch (const std::exception& ex) {
        throw BadEventLine(std::string("unparseable event line: ") + ex.what());
    }
}

void emit_event(const SecurityEvent& e, std::ostream& sink) {
    sink << event_to_json_line(e) << '\n';
    sink.flush();
    if (!sink) throw SinkWriteFailure("event sink write failed");
}

std::string rule_to_line(const FirewallRule& r) {
    return "drop udp from " + r.src_ip + " to any port 53 match-suffix " + r.apex +
           " # rule " + std::to_string(r.rule_id);
}

std::string revoke_line(std::uint64_t rule_id) {
    return "revoke " + std::to_string(rule_id);
}

std::optional<FirewallRule> parse_rule_line(const std::string& line) {
    std::istringstream in(line);
    std::string w0, w1, w2, ip, w4, w5, w6, w7, w8, apex, w10, w11, id;
    if (!(in >> w0 >> w1 >> w2 >> ip >> w4 >> w5 >> w6 >> w7 >> w8 >> apex >> w10 >> w11 >> id))
        return std::nullopt;
    if (w0 != "drop" || w1 != "udp" || w2 != "from" || w4 != "to" || w5 != "any" ||
        w6 != "port" || w7 != "53" || w8 != "match-suffix" || w10 != "#" || w11 != "rule")
        return std::nullopt;
    FirewallRule r;
    r.src_ip = ip;
    r.apex = apex;
    try {
        r.rule_id = std::stoull(id);
    } catch (const std::exception&) {
        return std::nullopt;
    }
    return r;
}

std::optional<std::uint64_t> parse_revoke_line(const std::string& line) {
    std::istringstream in(line);
    std::string w0, id;
    if (!(in >> w0 >> id) || w0 != "revoke") return std::nullopt;
    try {
        return std::stoull(id);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

void RuleTable::apply_rule(const FirewallRule& r) {
    const auto key = std::make_pair(r.src_ip, r.apex);
    if (by_key_.count(key))
        throw DuplicateRule("active rule already covers " + r.src_ip + " / " + r.apex);
    by_key_.emplace(key, r);
    by_id_.emplace(r.rule_id, key);
}

void RuleTable::revoke_rule(std::uint64_t rule_id) {
    const auto it = by_id_.find(rule_id);
    if (it == by_id_.end())
        throw UnknownRule("no active rule with id " + std::to_string(rule_id));
    by_key_.erase(it->second);
    by_id_.erase(it);
}

bool RuleTable::covers(const std::string& src_ip, const std::string& apex) const {
    return by_key_.count({src_ip, apex}) != 0;
}

std::vector<FirewallRule> RuleTable::active_rules() const {
    std::vector<FirewallRule> out;
    out.reserve(by_id_.size());
    for (const auto& [id, key] : by_id_) out.push_back(by_key_.at(key));
    return out;
}

RuleTable replay_rule_sink(const std::string& text) {
    RuleTable table;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (const auto id = parse_revoke_line(line)) {
            table.revoke_rule(*id);
        } else if (const auto rule = parse_rule_line(line)) {
            table.apply_rule(*rule);
        } else {
            throw BadEventLine("unparseable rule line: " + line);
        }
    }
    return table;
}

std::string rule_apex(const std::string& qname) {
    const auto labels = split_labels(qname);
    if (labels.size() <= 2) return qname;
    return labels[labels.size() - 2] + "." + labels[labels.size() - 1];
}

RunSummary run_pipeline(PacketSource& source, const Model& model, const PipelineConfig& config) {
    if (config.worker_count < 1) throw BadConfig("worker_count must be at least 1");
    if (!(config.score_threshold > 0.0 && config.score_threshold < 1.0))
        throw BadConfig("score_threshold must lie strictly between 0 and 1");
    const FeatureSchema& schema = model_schema(model);
    if (config.schema && config.schema->fingerprint() != schema.fingerprint())
        throw SchemaFingerprintMismatch(
            "pipeline schema does not match the model's training schema");

    std::ofstream event_out, rule_out;
    if (!config.event_sink.empty()) {
        event_out.open(config.event_sink, std::ios::app);
        if (!event_out) throw SinkWriteFailure("cannot open event sink " + config.event_sink);
    }
    if (!config.rule_sink.empty()) {
        rule_out.open(config.rule_sink, std::ios::app);
        if (!rule_out) throw SinkWriteFailure("cannot open rule sink " + config.rule_sink);
    }

    struct WorkItem {
        std::size_t index;
        CapturedPacket pkt;
    };
    BoundedQueue<WorkItem> queue(config.queue_capacity);
    const std::string id = model_id(model);
    const double threshold = config.score_threshold;

    RunSummary summary;
    RuleTable table;
    std::mutex state_mutex;
    std::exception_ptr first_error;
    bool failed = false;

    std::thread producer([&] {
        std::size_t index = 0;
        try {
            while (auto pkt = source.next()) queue.push({index++, std::move(*pkt)});
        } catch (...) {
            std::lock_guard lock(state_mutex);
            if (!failed) {
                failed = true;
                first_error = std::current_exception();
            }
        }
        {
            std::lock_guard lock(state_mutex);
            summary.packets_seen = index;
        }
        queue.close();
    });

    auto worker = [&] {
        while (auto item = queue.pop()) {
            {
                std::lock_guard lock(state_mutex);
                if (failed) continue;  // drain without processing after an error
            }
            try {
                const auto t0 = Clock::now();
                DnsPacketRecord rec;
                const bool is_dns = try_parse_dns(item->pkt, item->index, rec);

                VerdictRecord v;
                v.packet_index = item->index;
                v.is_dns = is_dns;
                v.ts = item->pkt.ts;
                if (is_dns) {
                    v.features = extract_features(rec.meta, rec.query);
                    const auto reduced = apply_schema(v.features, schema);
                    const Prediction pred = predict(model, reduced);
                    v.verdict.score = pred.score;
                    v.verdict.action =
                        pred.score >= threshold ? Action::DROP : Action::ACCEPT;
                    v.qname = rec.query.qname;
                    v.src_ip = ipv4_to_string(rec.meta.src_ip);
                    v.dst_ip = ipv4_to_string(rec.meta.dst_ip);
                }
                v.verdict.latency_ns = elapsed_ns(t0, Clock::now());

                std::lock_guard lock(state_mutex);
                ++summary.latency_histogram[latency_bucket(v.verdict.latency_ns)];
                if (is_dns) ++summary.dns_queries;
                if (v.verdict.action == Action::DROP) {
                    ++summary.drops;
                    SecurityEvent e;
                    e.ts = v.ts;
                    e.src_ip = v.src_ip;
                    e.dst_ip = v.dst_ip;
                    e.qname = v.qname;
                    e.score = v.verdict.score;
                    e.model_id = id;
                    summary.events.push_back(e);
                    if (event_out.is_open()) emit_event(e, event_out);
                    if (config.auto_block) {
                        const std::string apex = rule_apex(v.qname);
                        if (!table.covers(v.src_ip, apex)) {
                            FirewallRule r;
                            r.rule_id = summary.rules.size() + 1;
                            r.src_ip = v.src_ip;
                            r.apex = apex;
                            r.created_at = v.ts;
                            r.origin_event = summary.events.size() - 1;
                            table.apply_rule(r);
                            summary.rules.push_back(r);
                            if (rule_out.is_open()) {
                                rule_out << rule_to_line(r) << '\n';
                                rule_out.flush();
                                if (!rule_out)
                                    throw SinkWriteFailure("rule sink write failed");
                            }
                        }
                    }
                }
                summary.completion_order.push_back(item->index);
                summary.verdicts.push_back(std::move(v));
            } catch (...) {
                std::lock_guard lock(state_mutex);
                if (!failed) {
                    failed = true;
                    first_error = std::current_exception();
                }
            }
        }
    };

    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(config.worker_count));
    for (int i = 0; i < config.worker_count; ++i) workers.emplace_back(worker);
    producer.join();
    for (auto& w : workers) w.join();

    if (first_error) std::rethrow_exception(first_error);

    summary.max_queue_depth = queue.max_depth();
    std::sort(summary.verdicts.begin(), summary.verdicts.end(),
              [](const VerdictRecord& a, const VerdictRecord& b) {
                  return a.packet_index < b.packet_index;
              });
    return summary;
}

std::string format_run_summary(const RunSummary& s) {
    std::ostringstream out;
    out << "packets_seen=" << s.packets_seen << '\n'
        << "dns_queries=" << s.dns_queries << '\n'
        << "drops=" << s.drops << '\n'
        << "rules=" << s.rules.size() << '\n'
        << "max_queue_depth=" << s.max_queue_depth << '\n'
        << "latency histogram:\n"
        << "  le_100us=" << s.latency_histogram[0] << '\n'
        << "  le_500us=" << s.latency_histogram[1] << '\n'
        << "  le_1ms=" << s.latency_histogram[2] << '\n'
        << "  le_5ms=" << s.latency_histogram[3] << '\n'
        << "  gt_5ms=" << s.latency_histogram[4] << '\n';
    return out.str();
}

LatencyReport bench_latency(const Model& model, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw BadConfig("bench needs at least one query");
    const FeatureSchema& schema = model_schema(model);
    SplitRng rng(seed);

    // Pre-generate the queries so the timed loop sees only the detection path.
    static constexpr const char* kBenignNames[] = {
        "api.smarthome-hub.com", "cdn.streambox.tv", "pool.ntp.org",
        "telemetry.bulbvendor.io", "www.newsfeed.example", "push.fridgeworks.com",
    };
    std::vector<std::pair<PacketMeta, DnsQuery>> queries;
    queries.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::string qname;
        if (rng.next_double() < 0.5) {
            qname = kBenignNames[rng.next_below(std::size(kBenignNames))];
        } else {
            static constexpr char kAlphabet[] =
                "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
            qname = "c0de.";
            for (int j = 0; j < 2; ++j) {
                for (int c = 0; c < 32; ++c) qname += kAlphabet[rng.next_below(64)];
                qname += '.';
            }
            qname += "exfil-relay.example";
        }
        DnsQuery q = DnsQuery::from_name(qname, rng.next_double() < 0.5 ? kTypeA : kTypeTXT);
        PacketMeta meta;
        meta.ts = Timestamp::from_double(1700000000.0 + static_cast<double>(i) * 1e-3);
        meta.src_ip = ipv4_from_string("192.168.1.50");
        meta.dst_ip = ipv4_from_string("192.168.1.1");
        meta.src_port = static_cast<std::uint16_t>(1024 + rng.next_below(64512));
        meta.dst_port = 53;
        meta.ip_total_length =
            static_cast<std::uint16_t>(20 + 8 + encode_dns_query(q, 0).size());
        queries.emplace_back(meta, std::move(q));
    }

    std::vector<std::uint64_t> latencies(n);
    std::uint64_t drops = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto t0 = Clock::now();
        const FeatureVector fv = extract_features(queries[i].first, queries[i].second);
        const auto reduced = apply_schema(fv, schema);
        const Prediction pred = predict(model, reduced);
        if (pred.score >= 0.5) ++drops;
        const auto t1 = Clock::now();
        latencies[i] = elapsed_ns(t0, t1);
    }
    asm volatile("" : : "r"(drops) : "memory");  // keep the verdict from being elided

    LatencyReport report;
    report.queries = n;
    for (auto ns : latencies) ++report.histogram[latency_bucket(ns)];
    std::sort(latencies.begin(), latencies.end());
    report.median_ns = latencies[n / 2];
    report.p99_ns = latencies[std::min(n - 1, (n * 99) / 100)];
    return report;
}

std::string format_latency_report(const LatencyReport& r) {
    std::ostringstream out;
    out << "queries=" << r.queries << '\n'
        << "median_ns=" << r.median_ns << '\n'
        << "p99_ns=" << r.p99_ns << '\n'
        << "le_100us=" << r.histogram[0] << '\n'
        << "le_500us=" << r.histogram[1] << '\n'
        << "le_1ms=" << r.histogram[2] << '\n'
        << "le_5ms=" << r.histogram[3] << '\n'
        << "gt_5ms=" << r.histogram[4] << '\n';
    return out.str();
}

}  // namespace dnsguard
