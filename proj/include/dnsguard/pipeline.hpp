#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dnsguard/dns_wire.hpp"
#include "dnsguard/model.hpp"

namespace dnsguard {

// Errors raised by the real-time engine.
class PipelineError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class BadConfig : public PipelineError {
public:
    using PipelineError::PipelineError;
};
class SinkWriteFailure : public PipelineError {
public:
    using PipelineError::PipelineError;
};
class DuplicateRule : public PipelineError {
public:
    using PipelineError::PipelineError;
};
class UnknownRule : public PipelineError {
public:
    using PipelineError::PipelineError;
};
class BadEventLine : public PipelineError {
public:
    using PipelineError::PipelineError;
};

// Where packets come from. The reference implementation replays captures;
// a live-capture source would implement the same contract on top of the
// host's packet interception facility.
class PacketSource {
public:
    virtual ~PacketSource() = default;
    // One packet per call, in non-decreasing timestamp order; nullopt at
    // end of stream.
    virtual std::optional<CapturedPacket> next() = 0;
};

enum class Pacing { none, recorded };

// Replays an in-memory capture, optionally sleeping out the recorded
// inter-arrival gaps.
class PcapReplaySource : public PacketSource {
public:
    PcapReplaySource(std::vector<CapturedPacket> packets, Pacing pacing = Pacing::none);
    std::optional<CapturedPacket> next() override;

private:
    std::vector<CapturedPacket> packets_;
    std::size_t pos_ = 0;
    Pacing pacing_;
};

// Fixed-capacity FIFO connecting the producer to the workers. push blocks
// while full (lossless backpressure), pop blocks while empty and returns
// nullopt once the queue is closed and drained.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0) throw BadConfig("queue capacity must be at least 1");
    }

    void push(T item) {
        std::unique_lock lock(mutex_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_) return;  // shutting down; drop is fine, producers stop first
        items_.push_back(std::move(item));
        max_depth_ = std::max(max_depth_, items_.size());
        not_empty_.notify_one();
    }

    std::optional<T> pop() {
        std::unique_lock lock(mutex_);
        not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    std::size_t max_depth() const {
        std::lock_guard lock(mutex_);
        return max_depth_;
    }

private:
    mutable std::mutex mutex_;
    std::condition_variable not_full_, not_empty_;
    std::deque<T> items_;
    std::size_t capacity_;
    std::size_t max_depth_ = 0;
    bool closed_ = false;
};

struct PipelineConfig {
    std::size_t queue_capacity = 4096;
    int worker_count = 1;
    double score_threshold = 0.5;
    bool auto_block = false;
    std::string event_sink;  // JSONL path; empty disables persistence
    std::string rule_sink;   // filter-line path; empty disables persistence
    // When set, must match the model's schema; catches a pipeline configured
    // for one feature set but handed a model trained on another.
    std::optional<FeatureSchema> schema;
};

enum class Action { ACCEPT, DROP };

struct Verdict {
    Action action = Action::ACCEPT;
    double score = 0.0;
    std::uint64_t latency_ns = 0;  // dequeue to decision

    bool operator==(const Verdict&) const = default;
};

// What a worker decided about one packet; kept so offline and streaming
// paths can be compared field by field.
struct VerdictRecord {
    std::size_t packet_index = 0;
    bool is_dns = false;
    Verdict verdict;
    FeatureVector features;  // meaningful only when is_dns
    std::string qname;
    std::string src_ip;
    std::string dst_ip;
    Timestamp ts;
};

struct SecurityEvent {
    Timestamp ts;
    std::string attack_type = "dns_tunneling";
    std::string src_ip;
    std::string dst_ip;
    std::string qname;
    double score = 0.0;
    std::string action = "DROP";
    std::string model_id;

    bool operator==(const SecurityEvent&) const = default;
};

// One line of structured text per event, keys in a fixed order; flushed on
// every write so an operator tailing the sink sees events as they happen.
std::string event_to_json_line(const SecurityEvent& e);
SecurityEvent event_from_json_line(const std::string& line);
void emit_event(const SecurityEvent& e, std::ostream& sink);

struct FirewallRule {
    std::uint64_t rule_id = 0;
    std::string src_ip;
    std::string apex;  // last two labels of the offending qname
    Timestamp created_at;
    std::uint64_t origin_event = 0;  // index into the run's event list

    bool operator==(const FirewallRule&) const = default;
};

// `drop udp from <src_ip> to any port 53 match-suffix <apex> # rule <id>`
std::string rule_to_line(const FirewallRule& r);
std::string revoke_line(std::uint64_t rule_id);

// Active firewall rules, unique per (src_ip, apex).
class RuleTable {
public:
    // Throws DuplicateRule when an active rule already covers (src_ip, apex).
    void apply_rule(const FirewallRule& r);
    // Throws UnknownRule for ids never applied or already revoked.
    void revoke_rule(std::uint64_t rule_id);

    bool covers(const std::string& src_ip, const std::string& apex) const;
    std::vector<FirewallRule> active_rules() const;  // ascending rule_id
    std::size_t size() const { return by_key_.size(); }

private:
    std::map<std::pair<std::string, std::string>, FirewallRule> by_key_;
    std::map<std::uint64_t, std::pair<std::string, std::string>> by_id_;
};

// Reconstructs a rule table by replaying a rule sink (apply and revoke
// lines in file order). Lines that do not parse throw BadEventLine.
RuleTable replay_rule_sink(const std::string& text);
std::optional<FirewallRule> parse_rule_line(const std::string& line);
std::optional<std::uint64_t> parse_revoke_line(const std::string& line);

// The qname suffix a blocking rule keys on: the last two labels, or the
// whole name when it has fewer.
std::string rule_apex(const std::string& qname);

struct RunSummary {
    std::uint64_t packets_seen = 0;
    std::uint64_t dns_queries = 0;
    std::uint64_t drops = 0;
    std::array<std::uint64_t, 5> latency_histogram{};  // ≤100us, ≤500us, ≤1ms, ≤5ms, >5ms
    std::size_t max_queue_depth = 0;
    std::vector<VerdictRecord> verdicts;          // sorted by packet index
    std::vector<std::size_t> completion_order;    // packet indices as decided
    std::vector<SecurityEvent> events;            // one per DROP, in emit order
    std::vector<FirewallRule> rules;              // auto-block rules, in creation order
};

// Producer/consumer run over a packet source: one reader thread feeds the
// bounded queue, worker_count threads dequeue, filter non-DNS packets
// through untouched, and score DNS queries against the model. Throws
// SchemaFingerprintMismatch before starting when config.schema disagrees
// with the model, SinkWriteFailure when a sink cannot be written.
RunSummary run_pipeline(PacketSource& source, const Model& model, const PipelineConfig& config);

std::string format_run_summary(const RunSummary& s);

struct LatencyReport {
    std::uint64_t median_ns = 0;
    std::uint64_t p99_ns = 0;
    std::uint64_t queries = 0;
    std::array<std::uint64_t, 5> histogram{};
};

// Times extract -> reduce -> predict -> verdict per query over n synthetic
// DNS queries in a tight single-threaded loop.
LatencyReport bench_latency(const Model& model, std::size_t n, std::uint64_t seed = 0);

std::string format_latency_report(const LatencyReport& r);

}  // namespace dnsguard
