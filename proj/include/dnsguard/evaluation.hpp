#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dnsguard/model.hpp"

namespace dnsguard {

// Errors raised by the evaluation helpers.
class EvaluationError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class EmptyEvaluation : public EvaluationError {
public:
    using EvaluationError::EvaluationError;
};
class TooFewRows : public EvaluationError {
public:
    using EvaluationError::EvaluationError;
};

// Outcome counts of a binary evaluation. Label 1 is the attack class, so tp
// counts attack rows classified as attack.
struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

// The four headline metrics plus the counts they came from. A metric whose
// denominator is zero is reported as 0 with its degeneracy flag set, so batch
// reports never abort on a lopsided split.
struct MetricsReport {
    double acc = 0.0;
    double pre = 0.0;
    double rec = 0.0;
    double f1 = 0.0;
    bool pre_degenerate = false;
    bool rec_degenerate = false;
    bool f1_degenerate = false;
    ConfusionCounts counts;
};

// acc=(tp+tn)/total, pre=tp/(tp+fp), rec=tp/(tp+fn), f1=2*pre*rec/(pre+rec).
// Throws EmptyEvaluation when total() is zero.
MetricsReport compute_metrics(const ConfusionCounts& c);

// Scores every row of `data` with the model and tallies the confusion counts
// against the dataset labels. Throws SchemaFingerprintMismatch when the
// dataset was reduced under a different schema than the model was trained on.
MetricsReport evaluate(const Model& model, const Dataset& data);

// Evaluation of a model on traffic from a network it was not trained in. No
// re-fitting happens; this is evaluate() with the fingerprint check called out
// because crossing environments is exactly where silent schema drift bites.
MetricsReport evaluate_cross_env(const Model& model, const Dataset& foreign_test);

// Stratified random split. Each class is shuffled independently (seeded) and
// the first lround(train_fraction * class_size) rows go to the train side.
// Throws TooFewRows unless both classes have at least two rows.
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double train_fraction = 0.85,
                                             std::uint64_t seed = 0);

// One entry of the importance ranking.
struct RankedFeature {
    std::string name;
    double importance = 0.0;

    bool operator==(const RankedFeature&) const = default;
};

// Importances of a trained tree ensemble, descending; ties keep canonical
// feature order so the ranking is stable across runs.
std::vector<RankedFeature> rank_features(const TreeEnsembleModel& model);

// Schema over the ranked feature set minus the dropped names. Dropping a name
// that is not in the ranking throws UnknownFeature.
FeatureSchema prune_schema(const std::vector<RankedFeature>& ranked,
                           const std::vector<std::string>& drop);

// Report serialization: a single-line structured document for files, and an
// aligned percentage table for terminals.
std::string metrics_to_json(const MetricsReport& r, const std::string& model_name);
std::string format_metrics_table(const MetricsReport& r, const std::string& model_name);

}  // namespace dnsguard
