// Operator entry point: synthesize -> extract -> train -> evaluate -> replay
// -> bench -> events, one subcommand each. Every output file is written to a
// temp name and renamed into place so a failed run leaves nothing partial.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dnsguard/dns_wire.hpp"
#include "dnsguard/evaluation.hpp"
#include "dnsguard/features.hpp"
#include "dnsguard/model.hpp"
#include "dnsguard/pcap.hpp"
#include "dnsguard/pipeline.hpp"
#include "dnsguard/synth.hpp"

using namespace dnsguard;

namespace {

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
        out << content;
        out.flush();
        if (!out) {
            std::remove(tmp.c_str());
            throw std::runtime_error("short write to " + tmp);
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw std::runtime_error("cannot rename " + tmp + " to " + path);
    }
}

SynthProfile resolve_profile(const std::string& name, std::uint64_t seed) {
    if (name == "env_a") return env_a_profile(seed);
    if (name == "env_b") return env_b_profile(seed);
    return load_profile_file(name, seed);
}

// ------------------------------------------------------------------- synth

struct SynthOpts {
    std::string profile = "env_a";
    std::uint64_t benign = 0;
    std::uint64_t tunnel_bytes = 0;
    std::string mode = "mixed";
    std::string out;
    std::string manifest;
    std::uint64_t seed = 0;
};

void cmd_synth(const SynthOpts& o) {
    if (o.benign == 0 && o.tunnel_bytes == 0)
        throw std::runtime_error("nothing to generate: --benign and --tunnel-bytes are both 0");
    const SynthProfile profile = resolve_profile(o.profile, o.seed);

    // Sessions are sized so their mean payload sums to roughly the requested
    // byte budget: low sessions carry 1-8 bytes, high sessions 200-1500.
    double high_fraction = 0.5, mean_bytes = 427.25;
    if (o.mode == "low") {
        high_fraction = 0.0;
        mean_bytes = 4.5;
    } else if (o.mode == "high") {
        high_fraction = 1.0;
        mean_bytes = 850.0;
    }
    std::size_t sessions = 0;
    if (o.tunnel_bytes > 0)
        sessions = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(static_cast<double>(o.tunnel_bytes) / mean_bytes)));

    const auto build = build_environment(profile, o.benign, sessions, high_fraction);

    std::ostringstream pcap_bytes;
    write_pcap(build.packets, pcap_bytes);
    write_file_atomic(o.out, pcap_bytes.str());
    write_file_atomic(o.manifest, manifest_to_csv(build.manifest));

    std::size_t tunnel_rows = 0;
    for (const auto& row : build.manifest) tunnel_rows += row.label == 1;
    std::printf("packets=%zu benign=%zu tunnel=%zu sessions=%zu\n", build.manifest.size(),
                build.manifest.size() - tunnel_rows, tunnel_rows, sessions);
    std::printf("wrote %s\nwrote %s\n", o.out.c_str(), o.manifest.c_str());
}

// ----------------------------------------------------------------- extract

struct ExtractOpts {
    std::string pcap;
    std::string manifest;
    std::string out;
};

void cmd_extract(const ExtractOpts& o) {
    const auto packets = read_pcap_file(o.pcap);
    const auto manifest = csv_to_manifest(slurp_file(o.manifest));
    if (manifest.size() != packets.size())
        throw std::runtime_error("manifest has " + std::to_string(manifest.size()) +
                                 " rows but pcap has " + std::to_string(packets.size()) +
                                 " packets");
    std::map<std::uint64_t, int> label_of;
    for (const auto& row : manifest) label_of[row.packet_index] = row.label;

    const auto records = extract_dns_packets(packets);
    LabeledFeatures lf;
    lf.rows = extract_features_batch(records);
    for (const auto& rec : records) {
        const auto it = label_of.find(rec.packet_index);
        if (it == label_of.end())
            throw std::runtime_error("packet " + std::to_string(rec.packet_index) +
                                     " missing from manifest");
        lf.labels.push_back(it->second);
    }
    write_file_atomic(o.out, features_to_csv(lf));
    std::printf("rows=%zu (skipped %zu non-DNS packets)\nwrote %s\n", lf.rows.size(),
                packets.size() - records.size(), o.out.c_str());
}

// ------------------------------------------------------------ train / eval

struct TrainOpts {
    std::string features;
    std::string model = "rf";
    std::string prune = "none";
    double split = 0.85;
    std::uint64_t seed = 0;
    std::string out;
};

FeatureSchema schema_from_prune_flag(const std::string& prune) {
    if (prune == "none") return FeatureSchema::full();
    if (prune == "paper") return FeatureSchema::pruned13();
    // Otherwise a comma-separated list of feature names to drop.
    std::vector<std::string> keep(kFeatureNames.begin(), kFeatureNames.end());
    std::stringstream ss(prune);
    std::string name;
    while (std::getline(ss, name, ',')) {
        const auto it = std::find(keep.begin(), keep.end(), name);
        if (it == keep.end()) throw std::runtime_error("--prune names unknown feature " + name);
        keep.erase(it);
    }
    if (keep.empty()) throw std::runtime_error("--prune drops every feature");
    return FeatureSchema::from_names(keep);
}

void cmd_train(const TrainOpts& o) {
    if (!(o.split > 0.0 && o.split < 1.0))
        throw std::runtime_error("--split must lie strictly between 0 and 1");
    const auto lf = csv_to_features(slurp_file(o.features));
    const auto schema = schema_from_prune_flag(o.prune);
    const auto data = make_dataset(schema, lf);
    const auto [train, test] = split_train_test(data, o.split, o.seed);

    Model model;
    if (o.model == "rf") {
        TrainParams params;
        params.seed = o.seed;
        model = train_random_forest(train, params);
    } else if (o.model == "dt") {
        TrainParams params;
        params.seed = o.seed;
        model = train_decision_tree(train, params);
    } else {
        model = train_knn(train, 5);
    }

    const auto report = evaluate(model, test);
    std::printf("rows=%zu train=%zu test=%zu features=%zu\n", data.n_rows(), train.n_rows(),
                test.n_rows(), schema.active_count());
    std::fputs(format_metrics_table(report, o.model).c_str(), stdout);
    write_file_atomic(o.out, save_model(model));
    std::printf("wrote %s (%s)\n", o.out.c_str(), model_id(model).c_str());
}

struct EvalOpts {
    std::string model;
    std::string features;
};

void cmd_eval(const EvalOpts& o) {
    const Model model = load_model_file(o.model);
    const auto lf = csv_to_features(slurp_file(o.features));
    const auto data = make_dataset(model_schema(model), lf);
    const auto report = evaluate_cross_env(model, data);
    std::printf("rows=%zu model=%s\n", data.n_rows(), model_id(model).c_str());
    std::fputs(format_metrics_table(report, model_kind(model)).c_str(), stdout);
}

// -------------------------------------------------------------- importance

void cmd_importance(const std::string& model_path) {
    const Model model = load_model_file(model_path);
    const auto* forest = std::get_if<TreeEnsembleModel>(&model);
    if (!forest) throw std::runtime_error("importance needs a tree-ensemble model, not knn");
    const auto ranked = rank_features(*forest);
    std::printf("%4s  %-22s %10s %10s\n", "rank", "feature", "importance", "cumulative");
    double cumulative = 0.0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        cumulative += ranked[i].importance;
        std::printf("%4zu  %-22s %10.6f %10.6f\n", i + 1, ranked[i].name.c_str(),
                    ranked[i].importance, cumulative);
    }
}

// ------------------------------------------------------------------ replay

struct ReplayOpts {
    std::string pcap;
    std::string model;
    std::string events;
    std::string rules;
    std::string pace = "none";
    std::size_t workers = 1;
    double threshold = 0.5;
};

void cmd_replay(const ReplayOpts& o) {
    const auto packets = read_pcap_file(o.pcap);
    const Model model = load_model_file(o.model);

    PipelineConfig config;
    config.worker_count = o.workers;
    config.score_threshold = o.threshold;
    config.auto_block = !o.rules.empty();
    if (!o.events.empty()) config.event_sink = o.events + ".tmp";
    if (!o.rules.empty()) config.rule_sink = o.rules + ".tmp";

    PcapReplaySource source(packets,
                            o.pace == "recorded" ? Pacing::recorded : Pacing::none);
    RunSummary summary;
    try {
        summary = run_pipeline(source, model, config);
    } catch (...) {
        if (!config.event_sink.empty()) std::remove(config.event_sink.c_str());
        if (!config.rule_sink.empty()) std::remove(config.rule_sink.c_str());
        throw;
    }
    if (!o.events.empty() && std::rename(config.event_sink.c_str(), o.events.c_str()) != 0)
        throw std::runtime_error("cannot rename event sink into place");
    if (!o.rules.empty() && std::rename(config.rule_sink.c_str(), o.rules.c_str()) != 0)
        throw std::runtime_error("cannot rename rule sink into place");
    std::fputs(format_run_summary(summary).c_str(), stdout);
}

// ------------------------------------------------------------------- bench

void cmd_bench(const std::string& model_path, std::size_t n, std::uint64_t seed) {
    const Model model = load_model_file(model_path);
    const auto report = bench_latency(model, n, seed);
    std::fputs(format_latency_report(report).c_str(), stdout);
}

// ------------------------------------------------------------------ events

void cmd_events_list(const std::string& events_path) {
    std::ifstream in(events_path);
    if (!in) throw std::runtime_error("cannot open " + events_path);
    std::printf("%4s  %-17s %-15s %6s  %s\n", "#", "ts", "src_ip", "score", "qname");
    std::string line;
    std::size_t idx = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const SecurityEvent ev = event_from_json_line(line);
        std::printf("%4zu  %-17s %-15s %6.4f  %s\n", idx++, ev.ts.to_string().c_str(),
                    ev.src_ip.c_str(), ev.score, ev.qname.c_str());
    }
}

void cmd_events_revoke(std::uint64_t rule_id, const std::string& rules_path) {
    RuleTable table = replay_rule_sink(slurp_file(rules_path));
    table.revoke_rule(rule_id);  // throws UnknownRule when absent or revoked
    std::ofstream out(rules_path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open " + rules_path + " for append");
    out << revoke_line(rule_id) << '\n';
    out.flush();
    if (!out) throw std::runtime_error("short write to " + rules_path);
    std::printf("revoked rule %llu (%zu rules remain active)\n",
                static_cast<unsigned long long>(rule_id), table.size());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DNS-tunneling detector: traffic synthesis, training, and replay"};
    app.require_subcommand(1);

    SynthOpts synth;
    auto* s = app.add_subcommand("synth", "generate a labeled pcap + manifest");
    s->add_option("--profile", synth.profile, "env_a, env_b, or a profile JSON path");
    s->add_option("--benign", synth.benign, "benign query count");
    s->add_option("--tunnel-bytes", synth.tunnel_bytes, "total exfiltrated payload bytes");
    s->add_option("--mode", synth.mode)->check(CLI::IsMember({"low", "high", "mixed"}));
    s->add_option("--out", synth.out, "output pcap")->required();
    s->add_option("--manifest", synth.manifest, "output label manifest CSV")->required();
    s->add_option("--seed", synth.seed);
    s->callback([&] { cmd_synth(synth); });

    ExtractOpts extract;
    auto* x = app.add_subcommand("extract", "pcap + manifest -> labeled feature CSV");
    x->add_option("--pcap", extract.pcap)->required();
    x->add_option("--manifest", extract.manifest)->required();
    x->add_option("--out", extract.out)->required();
    x->callback([&] { cmd_extract(extract); });

    TrainOpts train;
    auto* t = app.add_subcommand("train", "train a classifier on a feature CSV");
    t->add_option("--features", train.features)->required();
    t->add_option("--model", train.model)->check(CLI::IsMember({"rf", "dt", "knn"}));
    t->add_option("--prune", train.prune, "none, paper, or comma-separated names to drop");
    t->add_option("--split", train.split, "training fraction");
    t->add_option("--seed", train.seed);
    t->add_option("--out", train.out, "output model file")->required();
    t->callback([&] { cmd_train(train); });

    EvalOpts eval;
    auto* e = app.add_subcommand("eval", "evaluate a saved model on a feature CSV");
    e->add_option("--model", eval.model)->required();
    e->add_option("--features", eval.features)->required();
    e->callback([&] { cmd_eval(eval); });

    std::string imp_model;
    auto* i = app.add_subcommand("importance", "ranked feature importances");
    i->add_option("--model", imp_model)->required();
    i->callback([&] { cmd_importance(imp_model); });

    ReplayOpts replay;
    auto* r = app.add_subcommand("replay", "run a pcap through the detection pipeline");
    r->add_option("--pcap", replay.pcap)->required();
    r->add_option("--model", replay.model)->required();
    r->add_option("--events", replay.events, "security-event sink (JSON lines)");
    r->add_option("--rules", replay.rules, "firewall-rule sink; enables auto-block");
    r->add_option("--pace", replay.pace)->check(CLI::IsMember({"none", "recorded"}));
    r->add_option("--workers", replay.workers);
    r->add_option("--threshold", replay.threshold);
    r->callback([&] { cmd_replay(replay); });

    std::string bench_model;
    std::size_t bench_n = 100000;
    std::uint64_t bench_seed = 0;
    auto* b = app.add_subcommand("bench", "per-query latency benchmark");
    b->add_option("--model", bench_model)->required();
    b->add_option("--n", bench_n, "query count");
    b->add_option("--seed", bench_seed);
    b->callback([&] { cmd_bench(bench_model, bench_n, bench_seed); });

    std::string ev_file, ev_action, ev_rules;
    std::uint64_t ev_rule_id = 0;
    auto* v = app.add_subcommand("events", "list events or revoke a firewall rule");
    v->add_option("--events", ev_file, "event sink to read");
    v->add_option("action", ev_action)->required()->check(CLI::IsMember({"list", "revoke"}));
    v->add_option("rule_id", ev_rule_id, "rule to revoke");
    v->add_option("--rules", ev_rules, "rule sink to replay and append to");
    v->callback([&] {
        if (ev_action == "list") {
            if (ev_file.empty()) throw std::runtime_error("list needs --events");
            cmd_events_list(ev_file);
        } else {
            if (ev_rules.empty()) throw std::runtime_error("revoke needs --rules");
            if (v->count("rule_id") == 0) throw std::runtime_error("revoke needs a rule id");
            cmd_events_revoke(ev_rule_id, ev_rules);
        }
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& pe) {
        return app.exit(pe);
    } catch (const std::exception& ex) {
        std::cerr << "dnsguard: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
