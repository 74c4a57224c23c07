// End-to-end checks of the operator binary: each subcommand is run as a
// subprocess and its files and stdout are compared against values computed
// in-process through the library.
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dnsguard/evaluation.hpp"
#include "dnsguard/features.hpp"
#include "dnsguard/model.hpp"
#include "dnsguard/pcap.hpp"
#include "dnsguard/pipeline.hpp"
#include "dnsguard/rng.hpp"
#include "dnsguard/synth.hpp"

using namespace dnsguard;

namespace {

int run_cli(const std::string& args, const std::string& out_file = "cli_out.txt") {
    const std::string cmd = std::string(DNSGUARD_BIN) + " " + args + " >" + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

bool file_exists(const std::string& path) {
    return std::ifstream(path).good();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out << text;
}

// Two well-separated classes on the entropy column; any classifier should
// reach 100% on the held-out part.
LabeledFeatures separable_rows(int n, std::uint64_t seed) {
    SplitRng rng(seed);
    LabeledFeatures lf;
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        FeatureVector v;
        for (auto& value : v.values) value = rng.next_double();
        v.values[4] = label ? rng.next_uniform(0.6, 1.0) : rng.next_uniform(0.0, 0.4);
        lf.rows.push_back(v);
        lf.labels.push_back(label);
    }
    return lf;
}

}  // namespace

TEST_CASE("synth writes a pcap and a manifest that agree on packet count") {
    REQUIRE(run_cli("synth --profile env_a --benign 800 --tunnel-bytes 40000 --mode mixed "
                    "--out cli_a.pcap --manifest cli_a.csv --seed 11") == 0);
    const auto packets = read_pcap_file("cli_a.pcap");
    const auto manifest = csv_to_manifest(slurp("cli_a.csv"));
    CHECK(manifest.size() == packets.size());
    CHECK(packets.size() > 800);  // benign plus at least one tunnel query

    const std::string out = slurp("cli_out.txt");
    CHECK(out.find("benign=800") != std::string::npos);
    CHECK(out.find("wrote cli_a.pcap") != std::string::npos);
}

TEST_CASE("synth with nothing to generate is rejected and leaves no files") {
    std::remove("cli_none.pcap");
    std::remove("cli_none.csv");
    CHECK(run_cli("synth --profile env_a --benign 0 --tunnel-bytes 0 "
                  "--out cli_none.pcap --manifest cli_none.csv") != 0);
    CHECK_FALSE(file_exists("cli_none.pcap"));
    CHECK_FALSE(file_exists("cli_none.csv"));
}

TEST_CASE("synth output is byte-identical under the same seed") {
    REQUIRE(run_cli("synth --profile env_b --benign 200 --tunnel-bytes 5000 "
                    "--out cli_s1.pcap --manifest cli_s1.csv --seed 4") == 0);
    REQUIRE(run_cli("synth --profile env_b --benign 200 --tunnel-bytes 5000 "
                    "--out cli_s2.pcap --manifest cli_s2.csv --seed 4") == 0);
    REQUIRE(run_cli("synth --profile env_b --benign 200 --tunnel-bytes 5000 "
                    "--out cli_s3.pcap --manifest cli_s3.csv --seed 5") == 0);
    CHECK(slurp("cli_s1.pcap") == slurp("cli_s2.pcap"));
    CHECK(slurp("cli_s1.csv") == slurp("cli_s2.csv"));
    CHECK(slurp("cli_s1.pcap") != slurp("cli_s3.pcap"));
}

TEST_CASE("unknown flags are errors") {
    CHECK(run_cli("synth --bogus 1 --out x.pcap --manifest x.csv") != 0);
    CHECK(run_cli("--frobnicate") != 0);
}

TEST_CASE("extract matches the in-process batch extraction") {
    const auto build = build_environment(env_a_profile(21), 300, 40, 0.5);
    write_pcap_file(build.packets, "cli_x.pcap");
    write_text("cli_x.csv", manifest_to_csv(build.manifest));
    REQUIRE(run_cli("extract --pcap cli_x.pcap --manifest cli_x.csv --out cli_feats.csv") == 0);

    LabeledFeatures want;
    want.rows = extract_features_batch(extract_dns_packets(build.packets));
    for (const auto& row : build.manifest) want.labels.push_back(row.label);
    CHECK(slurp("cli_feats.csv") == features_to_csv(want));
}

TEST_CASE("extract on an empty pcap yields a header-only CSV") {
    write_pcap_file({}, "cli_empty.pcap");
    write_text("cli_empty.csv", manifest_to_csv({}));
    REQUIRE(run_cli("extract --pcap cli_empty.pcap --manifest cli_empty.csv "
                    "--out cli_empty_feats.csv") == 0);
    CHECK(slurp("cli_empty_feats.csv") == features_to_csv(LabeledFeatures{}));
}

TEST_CASE("extract rejects a manifest of the wrong length") {
    const auto build = build_environment(env_a_profile(22), 50, 0);
    write_pcap_file(build.packets, "cli_mm.pcap");
    LabelManifest short_manifest(build.manifest.begin(), build.manifest.end() - 1);
    write_text("cli_mm.csv", manifest_to_csv(short_manifest));
    std::remove("cli_mm_feats.csv");
    CHECK(run_cli("extract --pcap cli_mm.pcap --manifest cli_mm.csv --out cli_mm_feats.csv") !=
          0);
    CHECK_FALSE(file_exists("cli_mm_feats.csv"));
}

TEST_CASE("train reaches 100% on a separable toy CSV and honors --prune paper") {
    write_text("cli_toy.csv", features_to_csv(separable_rows(240, 33)));
    REQUIRE(run_cli("train --features cli_toy.csv --model rf --prune paper --split 0.85 "
                    "--seed 2 --out cli_rf.json") == 0);
    const std::string out = slurp("cli_out.txt");
    CHECK(out.find("100.00%") != std::string::npos);
    CHECK(out.find("features=13") != std::string::npos);

    const Model model = load_model_file("cli_rf.json");
    CHECK(model_schema(model).active_count() == 13);
    CHECK(model_schema(model) == FeatureSchema::pruned13());
}

TEST_CASE("train rejects --split 1.0 without writing a model") {
    write_text("cli_toy2.csv", features_to_csv(separable_rows(60, 34)));
    std::remove("cli_never.json");
    CHECK(run_cli("train --features cli_toy2.csv --split 1.0 --out cli_never.json") != 0);
    CHECK_FALSE(file_exists("cli_never.json"));
}

TEST_CASE("train is deterministic under --seed") {
    write_text("cli_toy3.csv", features_to_csv(separable_rows(120, 35)));
    REQUIRE(run_cli("train --features cli_toy3.csv --seed 9 --out cli_m1.json") == 0);
    REQUIRE(run_cli("train --features cli_toy3.csv --seed 9 --out cli_m2.json") == 0);
    CHECK(slurp("cli_m1.json") == slurp("cli_m2.json"));
}

TEST_CASE("eval and importance run against a trained model file") {
    write_text("cli_toy4.csv", features_to_csv(separable_rows(200, 36)));
    REQUIRE(run_cli("train --features cli_toy4.csv --model rf --seed 1 --out cli_m4.json") == 0);

    REQUIRE(run_cli("eval --model cli_m4.json --features cli_toy4.csv") == 0);
    CHECK(slurp("cli_out.txt").find("ACC") != std::string::npos);

    REQUIRE(run_cli("importance --model cli_m4.json") == 0);
    const std::string imp = slurp("cli_out.txt");
    CHECK(imp.find("shannon_entropy") != std::string::npos);
    CHECK(imp.find("cumulative") != std::string::npos);

    // knn carries no importances.
    REQUIRE(run_cli("train --features cli_toy4.csv --model knn --out cli_knn.json") == 0);
    CHECK(run_cli("importance --model cli_knn.json") != 0);
}

TEST_CASE("replay drop count equals the batch-prediction attack count") {
    const auto build = build_environment(env_a_profile(40), 400, 60, 0.5);
    write_pcap_file(build.packets, "cli_r.pcap");

    LabeledFeatures lf;
    lf.rows = extract_features_batch(extract_dns_packets(build.packets));
    for (const auto& row : build.manifest) lf.labels.push_back(row.label);
    const auto data = make_dataset(FeatureSchema::full(), lf);
    TrainParams params;
    params.n_trees = 20;
    params.seed = 8;
    const Model model = train_random_forest(data, params);
    save_model_file(model, "cli_rm.json");

    std::size_t want_drops = 0;
    for (const auto& p : predict_batch(model, data)) want_drops += p.label == 1;

    REQUIRE(run_cli("replay --pcap cli_r.pcap --model cli_rm.json --events cli_ev.jsonl "
                    "--rules cli_rules.txt --workers 2") == 0);
    const std::string out = slurp("cli_out.txt");
    CHECK(out.find("drops=" + std::to_string(want_drops) + "\n") != std::string::npos);
    CHECK(out.find("packets_seen=" + std::to_string(build.packets.size()) + "\n") !=
          std::string::npos);

    // The event sink parses back and the rule sink replays.
    std::ifstream events("cli_ev.jsonl");
    std::string line;
    std::size_t n_events = 0;
    while (std::getline(events, line)) {
        if (line.empty()) continue;
        const auto ev = event_from_json_line(line);
        CHECK(ev.score >= 0.5);
        ++n_events;
    }
    CHECK(n_events == want_drops);
    CHECK(replay_rule_sink(slurp("cli_rules.txt")).size() >= 1);
}

TEST_CASE("replay rejects an out-of-range threshold and leaves no sinks") {
    const auto packets = generate_benign(env_a_profile(41), 20);
    write_pcap_file(packets, "cli_t.pcap");
    write_text("cli_toy5.csv", features_to_csv(separable_rows(60, 37)));
    REQUIRE(run_cli("train --features cli_toy5.csv --out cli_m5.json") == 0);
    std::remove("cli_ev5.jsonl");
    std::remove("cli_rules5.txt");
    CHECK(run_cli("replay --pcap cli_t.pcap --model cli_m5.json --events cli_ev5.jsonl "
                  "--rules cli_rules5.txt --threshold 1.1") != 0);
    CHECK_FALSE(file_exists("cli_ev5.jsonl"));
    CHECK_FALSE(file_exists("cli_rules5.txt"));
}

TEST_CASE("bench prints a latency report") {
    write_text("cli_toy6.csv", features_to_csv(separable_rows(80, 38)));
    REQUIRE(run_cli("train --features cli_toy6.csv --out cli_m6.json") == 0);
    REQUIRE(run_cli("bench --model cli_m6.json --n 2000") == 0);
    const std::string out = slurp("cli_out.txt");
    CHECK(out.find("median_ns=") != std::string::npos);
    CHECK(out.find("p99_ns=") != std::string::npos);
    CHECK(out.find("queries=2000") != std::string::npos);
}

TEST_CASE("events list and revoke") {
    SUBCASE("list on an empty file prints only the header") {
        write_text("cli_ev_empty.jsonl", "");
        REQUIRE(run_cli("events --events cli_ev_empty.jsonl list") == 0);
        const std::string out = slurp("cli_out.txt");
        CHECK(out.find("qname") != std::string::npos);
        CHECK(out.find("\n") == out.size() - 1);  // header line only
    }
    SUBCASE("revoke appends a revoke line once, then errors") {
        FirewallRule rule;
        rule.rule_id = 3;
        rule.src_ip = "192.168.1.66";
        rule.apex = "exfil-relay.example";
        write_text("cli_rl.txt", rule_to_line(rule) + "\n");
        REQUIRE(run_cli("events revoke 3 --rules cli_rl.txt") == 0);
        CHECK(replay_rule_sink(slurp("cli_rl.txt")).size() == 0);
        CHECK(slurp("cli_rl.txt").find("revoke 3\n") != std::string::npos);
        CHECK(run_cli("events revoke 3 --rules cli_rl.txt") != 0);
        CHECK(slurp("cli_out.txt").find("no active rule") != std::string::npos);
    }
    SUBCASE("revoke without a rule id is rejected") {
        write_text("cli_rl2.txt", "");
        CHECK(run_cli("events revoke --rules cli_rl2.txt") != 0);
    }
}
