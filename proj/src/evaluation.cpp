#include "dnsguard/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dnsguard/rng.hpp"
#include "json.hpp"

namespace dnsguard {

MetricsReport compute_metrics(const ConfusionCounts& c) {
    if (c.total() == 0) throw EmptyEvaluation("no evaluated rows");
    MetricsReport r;
    r.counts = c;
    r.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    if (c.tp + c.fp > 0)
        r.pre = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    else
        r.pre_degenerate = true;
    if (c.tp + c.fn > 0)
        r.rec = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    else
        r.rec_degenerate = true;
    if (r.pre_degenerate || r.rec_degenerate || r.pre + r.rec == 0.0)
        r.f1_degenerate = true;
    else
        r.f1 = 2.0 * r.pre * r.rec / (r.pre + r.rec);
    return r;
}

MetricsReport evaluate(const Model& model, const Dataset& data) {
    const auto predictions = predict_batch(model, data);
    ConfusionCounts c;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool truth = data.labels[i] != 0;
        const bool predicted = predictions[i].label != 0;
        if (truth && predicted)
            ++c.tp;
        else if (!truth && !predicted)
            ++c.tn;
        else if (!truth && predicted)
            ++c.fp;
        else
            ++c.fn;
    }
    return compute_metrics(c);
}

MetricsReport evaluate_cross_env(const Model& model, const Dataset& foreign_test) {
    if (model_schema(model).fingerprint() != foreign_test.schema.fingerprint())
        throw SchemaFingerprintMismatch(
            "foreign test set was extracted under a different schema than the model");
    return evaluate(model, foreign_test);
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double train_fraction,
                                             std::uint64_t seed) {
    std::vector<std::uint32_t> by_class[2];
    for (std::size_t i = 0; i < data.n_rows(); ++i)
        by_class[data.labels[i] ? 1 : 0].push_back(static_cast<std::uint32_t>(i));
    if (by_class[0].size() < 2 || by_class[1].size() < 2)
        throw TooFewRows("stratified split needs at least two rows of each class");

    Dataset train, test;
    train.schema = test.schema = data.schema;
    train.n_cols = test.n_cols = data.n_cols;

    SplitRng rng(seed);
    for (int cls = 0; cls < 2; ++cls) {
        auto& idx = by_class[cls];
        SplitRng class_rng = rng.derive(static_cast<std::uint64_t>(cls));
        class_rng.shuffle(idx);
        const auto train_n = static_cast<std::size_t>(
            std::lround(train_fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Dataset& side = i < train_n ? train : test;
            side.add_row(data.row(idx[i]), data.labels[idx[i]]);
        }
    }
    return {std::move(train), std::move(test)};
}

std::vector<RankedFeature> rank_features(const TreeEnsembleModel& model) {
    const auto names = model.schema.active_names();
    std::vector<RankedFeature> ranked(names.size());
    for (std::size_t i = 0; i < names.size(); ++i)
        ranked[i] = {names[i], model.importances[i]};
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.importance > b.importance;
    });
    return ranked;
}

FeatureSchema prune_schema(const std::vector<RankedFeature>& ranked,
                           const std::vector<std::string>& drop) {
    std::vector<std::string> names;
    names.reserve(ranked.size());
    for (const auto& r : ranked) names.push_back(r.name);
    for (const auto& d : drop) {
        if (std::find(names.begin(), names.end(), d) == names.end())
            throw UnknownFeature("cannot drop '" + d + "': not in the ranked feature set");
        names.erase(std::remove(names.begin(), names.end(), d), names.end());
    }
    return FeatureSchema::from_names(names);
}

std::string metrics_to_json(const MetricsReport& r, const std::string& model_name) {
    nlohmann::ordered_json doc;
    doc["model"] = model_name;
    doc["metrics"] = {{"acc", r.acc}, {"pre", r.pre}, {"rec", r.rec}, {"f1", r.f1}};
    doc["degenerate"] = {{"pre", r.pre_degenerate},
                         {"rec", r.rec_degenerate},
                         {"f1", r.f1_degenerate}};
    doc["counts"] = {{"tp", r.counts.tp}, {"tn", r.counts.tn}, {"fp", r.counts.fp},
                     {"fn", r.counts.fn}};
    return doc.dump();
}

std::string format_metrics_table(const MetricsReport& r, const std::string& model_name) {
    char line[256];
    std::string out = "model        ACC     REC     PRE     F1\n";
    std::snprintf(line, sizeof(line), "%-10s %6.2f%% %6.2f%% %6.2f%% %6.2f%%\n",
                  model_name.c_str(), 100.0 * r.acc, 100.0 * r.rec, 100.0 * r.pre,
                  100.0 * r.f1);
    out += line;
    std::snprintf(line, sizeof(line), "tp=%llu tn=%llu fp=%llu fn=%llu",
                  static_cast<unsigned long long>(r.counts.tp),
                  static_cast<unsigned long long>(r.counts.tn),
                  static_cast<unsigned long long>(r.counts.fp),
                  static_cast<unsigned long long>(r.counts.fn));
    out += line;
    for (const char* flag : {r.pre_degenerate ? " (PRE degenerate)" : "",
                             r.rec_degenerate ? " (REC degenerate)" : "",
                             r.f1_degenerate ? " (F1 degenerate)" : ""})
        out += flag;
    out += '\n';
    return out;
}

}  // namespace dnsguard
