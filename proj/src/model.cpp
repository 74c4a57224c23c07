#include "dnsguard/model.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dnsguard/rng.hpp"
#include "json.hpp"

namespace dnsguard {

Dataset make_dataset(const FeatureSchema& schema, const LabeledFeatures& rows) {
    Dataset d;
    d.schema = schema;
    d.n_cols = schema.active_count();
    if (d.n_cols == 0) throw SchemaMismatch("schema selects no features");
    d.values.reserve(rows.rows.size() * d.n_cols);
    for (std::size_t i = 0; i < rows.rows.size(); ++i) {
        const auto reduced = apply_schema(rows.rows[i], schema);
        d.add_row(reduced, rows.labels[i]);
    }
    return d;
}

double gini_impurity(std::uint64_t c0, std::uint64_t c1) {
    const std::uint64_t n = c0 + c1;
    if (n == 0) return 0.0;
    const double p0 = static_cast<double>(c0) / static_cast<double>(n);
    const double p1 = static_cast<double>(c1) / static_cast<double>(n);
    return 1.0 - p0 * p0 - p1 * p1;
}

std::size_t Tree::find_leaf(std::span<const double> v) const {
    std::size_t node = 0;
    while (!is_leaf(node)) {
        node = v[static_cast<std::size_t>(feature[node])] <= threshold[node]
                   ? static_cast<std::size_t>(left[node])
                   : static_cast<std::size_t>(right[node]);
    }
    return node;
}

namespace {

struct TreeBuilder {
    const Dataset& data;
    const TrainParams& params;
    int max_features;
    SplitRng rng;
    Tree tree;
    std::vector<double> importance;          // raw impurity decrease per column
    std::vector<std::uint32_t> rows;         // working index buffer
    std::vector<std::uint32_t> scratch_rows;
    std::vector<std::pair<double, std::uint8_t>> sorted;  // (value, label)
    std::vector<int> feat_order;
    double total = 0.0;

    TreeBuilder(const Dataset& d, const TrainParams& p, int mf, SplitRng r)
        : data(d), params(p), max_features(mf), rng(r), importance(d.n_cols, 0.0) {
        feat_order.resize(d.n_cols);
        for (std::size_t i = 0; i < d.n_cols; ++i) feat_order[i] = static_cast<int>(i);
    }

    std::int32_t add_node(std::uint32_t c0, std::uint32_t c1) {
        tree.feature.push_back(-1);
        tree.threshold.push_back(0.0);
        tree.left.push_back(-1);
        tree.right.push_back(-1);
        tree.count0.push_back(c0);
        tree.count1.push_back(c1);
        return static_cast<std::int32_t>(tree.node_count() - 1);
    }

    std::int32_t build(std::size_t begin, std::size_t end, int depth) {
        std::uint32_t c0 = 0, c1 = 0;
        for (std::size_t i = begin; i < end; ++i)
            data.labels[rows[i]] ? ++c1 : ++c0;
        const std::int32_t node = add_node(c0, c1);
        const std::size_t n = end - begin;

        if (c0 == 0 || c1 == 0) return node;
        if (n < static_cast<std::size_t>(params.min_samples_split)) return node;
        if (params.max_depth >= 0 && depth >= params.max_depth) return node;

        const double node_gini = gini_impurity(c0, c1);

        // Draw the candidate feature subset (partial Fisher-Yates).
        const std::size_t d = data.n_cols;
        const std::size_t mf = std::min<std::size_t>(static_cast<std::size_t>(max_features), d);
        for (std::size_t i = 0; i < mf; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.next_below(d - i));
            std::swap(feat_order[i], feat_order[j]);
        }

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_weighted = node_gini;
        std::uint32_t best_l0 = 0, best_l1 = 0;

        for (std::size_t fi = 0; fi < mf; ++fi) {
            const std::size_t f = static_cast<std::size_t>(feat_order[fi]);
            sorted.clear();
            for (std::size_t i = begin; i < end; ++i)
                sorted.emplace_back(data.row(rows[i])[f], data.labels[rows[i]]);
            std::sort(sorted.begin(), sorted.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });

            std::uint32_t l0 = 0, l1 = 0;
            for (std::size_t i = 1; i < n; ++i) {
                sorted[i - 1].second ? ++l1 : ++l0;
                if (sorted[i].first <= sorted[i - 1].first) continue;
                double mid = (sorted[i - 1].first + sorted[i].first) / 2.0;
                if (mid >= sorted[i].first) mid = sorted[i - 1].first;
                const std::uint32_t r0 = c0 - l0, r1 = c1 - l1;
                const double weighted = (static_cast<double>(l0 + l1) * gini_impurity(l0, l1) +
                                         static_cast<double>(r0 + r1) * gini_impurity(r0, r1)) /
                                        static_cast<double>(n);
                if (weighted < best_weighted) {
                    best_weighted = weighted;
                    best_feature = static_cast<int>(f);
                    best_threshold = mid;
                    best_l0 = l0;
                    best_l1 = l1;
                }
            }
        }

        if (best_feature < 0 || node_gini - best_weighted <= 1e-12) return node;

        importance[static_cast<std::size_t>(best_feature)] +=
            (static_cast<double>(n) / total) * (node_gini - best_weighted);

        // Stable two-pass partition keeps row order deterministic.
        scratch_rows.clear();
        const std::size_t nl = best_l0 + best_l1;
        for (std::size_t i = begin; i < end; ++i)
            if (data.row(rows[i])[static_cast<std::size_t>(best_feature)] <= best_threshold)
                scratch_rows.push_back(rows[i]);
        for (std::size_t i = begin; i < end; ++i)
            if (!(data.row(rows[i])[static_cast<std::size_t>(best_feature)] <= best_threshold))
                scratch_rows.push_back(rows[i]);
        std::copy(scratch_rows.begin(), scratch_rows.end(), rows.begin() + begin);

        tree.feature[static_cast<std::size_t>(node)] = best_feature;
        tree.threshold[static_cast<std::size_t>(node)] = best_threshold;
        const std::int32_t l = build(begin, begin + nl, depth + 1);
        tree.left[static_cast<std::size_t>(node)] = l;
        const std::int32_t r = build(begin + nl, end, depth + 1);
        tree.right[static_cast<std::size_t>(node)] = r;
        return node;
    }
};

struct TreeResult {
    Tree tree;
    std::vector<double> importance;
};

TreeResult build_one_tree(const Dataset& data, const TrainParams& params, int max_features,
                          bool bootstrap, SplitRng rng) {
    TreeBuilder b(data, params, max_features, rng);
    const std::size_t n = data.n_rows();
    b.rows.resize(n);
    if (bootstrap) {
        for (std::size_t i = 0; i < n; ++i)
            b.rows[i] = static_cast<std::uint32_t>(b.rng.next_below(n));
    } else {
        for (std::size_t i = 0; i < n; ++i) b.rows[i] = static_cast<std::uint32_t>(i);
    }
    b.total = static_cast<double>(n);
    b.build(0, n, 0);
    return {std::move(b.tree), std::move(b.importance)};
}

void validate_training_data(const Dataset& data, bool allow_pure) {
    if (data.n_rows() == 0 || data.n_cols == 0) throw EmptyDataset("no training rows");
    bool has0 = false, has1 = false;
    for (auto l : data.labels) (l ? has1 : has0) = true;
    if (!allow_pure && (!has0 || !has1))
        throw SingleClass("training data contains a single class");
}

std::vector<double> finalize_importances(std::vector<double> acc) {
    double sum = 0.0;
    for (double v : acc) sum += v;
    if (sum > 0.0)
        for (double& v : acc) v /= sum;
    return acc;
}

int resolve_max_features(int requested, std::size_t d, bool forest_default) {
    if (requested > 0) return std::min<int>(requested, static_cast<int>(d));
    if (forest_default)
        return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
    return static_cast<int>(d);
}

}  // namespace

TreeEnsembleModel train_decision_tree(const Dataset& data, TrainParams params) {
    validate_training_data(data, params.allow_pure);
    params.n_trees = 1;
    params.bootstrap = false;
    params.max_features = resolve_max_features(params.max_features, data.n_cols, false);

    TreeEnsembleModel m;
    m.kind = "dt";
    m.schema = data.schema;
    m.params = params;
    m.seed = params.seed;
    auto result = build_one_tree(data, params, params.max_features, false,
                                 SplitRng(params.seed).derive(0));
    m.trees.push_back(std::move(result.tree));
    m.importances = finalize_importances(std::move(result.importance));
    return m;
}

namespace {

TreeEnsembleModel train_forest_impl(const Dataset& data, TrainParams params, bool parallel) {
    validate_training_data(data, params.allow_pure);
    params.max_features = resolve_max_features(params.max_features, data.n_cols, true);

    TreeEnsembleModel m;
    m.kind = "rf";
    m.schema = data.schema;
    m.params = params;
    m.seed = params.seed;
    m.trees.resize(static_cast<std::size_t>(params.n_trees));

    std::vector<std::vector<double>> per_tree_imp(m.trees.size());
    const SplitRng root(params.seed);
    const std::int64_t n_trees = params.n_trees;

    if (parallel) {
#pragma omp parallel for schedule(dynamic)
        for (std::int64_t t = 0; t < n_trees; ++t) {
            auto result = build_one_tree(data, params, params.max_features, params.bootstrap,
                                         root.derive(static_cast<std::uint64_t>(t)));
            m.trees[static_cast<std::size_t>(t)] = std::move(result.tree);
            per_tree_imp[static_cast<std::size_t>(t)] = std::move(result.importance);
        }
    } else {
        for (std::int64_t t = 0; t < n_trees; ++t) {
            auto result = build_one_tree(data, params, params.max_features, params.bootstrap,
                                         root.derive(static_cast<std::uint64_t>(t)));
            m.trees[static_cast<std::size_t>(t)] = std::move(result.tree);
            per_tree_imp[static_cast<std::size_t>(t)] = std::move(result.importance);
        }
    }

    std::vector<double> acc(data.n_cols, 0.0);
    for (const auto& imp : per_tree_imp)
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += imp[i];
    m.importances = finalize_importances(std::move(acc));
    return m;
}

}  // namespace

TreeEnsembleModel train_random_forest(const Dataset& data, TrainParams params) {
    return train_forest_impl(data, params, true);
}

TreeEnsembleModel train_random_forest_serial(const Dataset& data, TrainParams params) {
    return train_forest_impl(data, params, false);
}

Prediction TreeEnsembleModel::predict(std::span<const double> v) const {
    if (v.size() != schema.active_count())
        throw SchemaMismatch("vector width " + std::to_string(v.size()) +
                             " does not match model width " +
                             std::to_string(schema.active_count()));
    double score_sum = 0.0;
    for (const auto& t : trees) {
        const std::size_t leaf = t.find_leaf(v);
        const double total = static_cast<double>(t.count0[leaf]) + t.count1[leaf];
        score_sum += static_cast<double>(t.count1[leaf]) / total;
    }
    const double score = score_sum / static_cast<double>(trees.size());
    Prediction p;
    p.score = score;
    if (kind == "dt") {
        const std::size_t leaf = trees[0].find_leaf(v);
        p.label = trees[0].count1[leaf] > trees[0].count0[leaf] ? 1 : 0;
    } else {
        p.label = score >= 0.5 ? 1 : 0;
    }
    return p;
}

KnnModel train_knn(const Dataset& data, int k) {
    if (data.n_rows() == 0 || data.n_cols == 0) throw EmptyDataset("no training rows");
    if (k <= 0 || static_cast<std::size_t>(k) > data.n_rows())
        throw KTooLarge("k=" + std::to_string(k) + " with " + std::to_string(data.n_rows()) +
                        " rows");
    KnnModel m;
    m.schema = data.schema;
    m.k = k;
    m.n_cols = data.n_cols;
    m.labels = data.labels;
    const std::size_t n = data.n_rows(), d = data.n_cols;
    m.mean.assign(d, 0.0);
    m.stddev.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = data.row(i);
        for (std::size_t j = 0; j < d; ++j) m.mean[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) m.mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = data.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = row[j] - m.mean[j];
            m.stddev[j] += diff * diff;
        }
    }
    for (std::size_t j = 0; j < d; ++j) m.stddev[j] = std::sqrt(m.stddev[j] / static_cast<double>(n));

    m.matrix.resize(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = data.row(i);
        for (std::size_t j = 0; j < d; ++j)
            m.matrix[i * d + j] = m.stddev[j] > 0.0 ? (row[j] - m.mean[j]) / m.stddev[j] : 0.0;
    }
    return m;
}

Prediction KnnModel::predict(std::span<const double> v) const {
    if (v.size() != n_cols)
        throw SchemaMismatch("vector width " + std::to_string(v.size()) +
                             " does not match model width " + std::to_string(n_cols));
    std::vector<double> z(n_cols);
    for (std::size_t j = 0; j < n_cols; ++j)
        z[j] = stddev[j] > 0.0 ? (v[j] - mean[j]) / stddev[j] : 0.0;

    const std::size_t n = labels.size();
    std::vector<std::pair<double, std::uint32_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        const double* row = matrix.data() + i * n_cols;
        for (std::size_t j = 0; j < n_cols; ++j) {
            const double diff = z[j] - row[j];
            acc += diff * diff;
        }
        dist[i] = {acc, static_cast<std::uint32_t>(i)};
    }
    const std::size_t kk = static_cast<std::size_t>(k);
    std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
    std::uint32_t votes1 = 0;
    for (std::size_t i = 0; i < kk; ++i) votes1 += labels[dist[i].second];

    Prediction p;
    p.score = static_cast<double>(votes1) / static_cast<double>(kk);
    p.label = 2 * votes1 > kk ? 1 : 0;  // tie resolves to benign
    return p;
}

Prediction predict(const Model& model, std::span<const double> v) {
    return std::visit([&](const auto& m) { return m.predict(v); }, model);
}

std::vector<Prediction> predict_batch(const Model& model, const Dataset& data) {
    if (model_schema(model).fingerprint() != data.schema.fingerprint())
        throw SchemaFingerprintMismatch("dataset schema does not match model schema");
    std::vector<Prediction> out(data.n_rows());
    const std::int64_t n = static_cast<std::int64_t>(data.n_rows());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = predict(model, data.row(static_cast<std::size_t>(i)));
    return out;
}

std::vector<Prediction> predict_batch_serial(const Model& model, const Dataset& data) {
    if (model_schema(model).fingerprint() != data.schema.fingerprint())
        throw SchemaFingerprintMismatch("dataset schema does not match model schema");
    std::vector<Prediction> out;
    out.reserve(data.n_rows());
    for (std::size_t i = 0; i < data.n_rows(); ++i)
        out.push_back(predict(model, data.row(i)));
    return out;
}

const FeatureSchema& model_schema(const Model& model) {
    return std::visit([](const auto& m) -> const FeatureSchema& { return m.schema; }, model);
}

std::string model_kind(const Model& model) {
    if (const auto* t = std::get_if<TreeEnsembleModel>(&model)) return t->kind;
    return "knn";
}

std::string model_id(const Model& model) {
    return model_kind(model) + ":" + model_schema(model).fingerprint();
}

namespace {

using nlohmann::json;

json schema_to_json(const FeatureSchema& s) {
    return json{{"names", s.active_names()}, {"fingerprint", s.fingerprint()}};
}

FeatureSchema schema_from_json(const json& j) {
    const auto names = j.at("names").get<std::vector<std::string>>();
    FeatureSchema s = FeatureSchema::from_names(names);
    if (s.active_names() != names)
        throw BadFormat("schema names are not in canonical order");
    if (s.fingerprint() != j.at("fingerprint").get<std::string>())
        throw SchemaFingerprintMismatch("stored fingerprint does not match schema names");
    return s;
}

json tree_to_json(const Tree& t) {
    return json{{"feature", t.feature}, {"threshold", t.threshold}, {"left", t.left},
                {"right", t.right},     {"count0", t.count0},       {"count1", t.count1}};
}

Tree tree_from_json(const json& j, std::size_t n_cols) {
    Tree t;
    t.feature = j.at("feature").get<std::vector<std::int32_t>>();
    t.threshold = j.at("threshold").get<std::vector<double>>();
    t.left = j.at("left").get<std::vector<std::int32_t>>();
    t.right = j.at("right").get<std::vector<std::int32_t>>();
    t.count0 = j.at("count0").get<std::vector<std::uint32_t>>();
    t.count1 = j.at("count1").get<std::vector<std::uint32_t>>();
    const std::size_t n = t.feature.size();
    if (n == 0 || t.threshold.size() != n || t.left.size() != n || t.right.size() != n ||
        t.count0.size() != n || t.count1.size() != n)
        throw BadFormat("tree arrays are empty or of unequal length");
    for (std::size_t i = 0; i < n; ++i) {
        if (t.feature[i] >= static_cast<std::int32_t>(n_cols))
            throw BadFormat("tree references a feature outside the schema");
        const bool leaf = t.feature[i] < 0;
        if (!leaf && (t.left[i] < 0 || t.right[i] < 0 ||
                      t.left[i] >= static_cast<std::int32_t>(n) ||
                      t.right[i] >= static_cast<std::int32_t>(n)))
            throw BadFormat("tree child index out of range");
    }
    return t;
}

}  // namespace

std::string save_model(const Model& model) {
    json doc;
    doc["version"] = "1";
    if (const auto* t = std::get_if<TreeEnsembleModel>(&model)) {
        doc["kind"] = t->kind;
        doc["schema"] = schema_to_json(t->schema);
        doc["seed"] = t->seed;
        doc["params"] = json{{"n_trees", t->params.n_trees},
                             {"max_features", t->params.max_features},
                             {"bootstrap", t->params.bootstrap},
                             {"min_samples_split", t->params.min_samples_split},
                             {"max_depth", t->params.max_depth}};
        json trees = json::array();
        for (const auto& tree : t->trees) trees.push_back(tree_to_json(tree));
        doc["trees"] = std::move(trees);
        doc["importances"] = t->importances;
    } else {
        const auto& k = std::get<KnnModel>(model);
        doc["kind"] = "knn";
        doc["schema"] = schema_to_json(k.schema);
        doc["seed"] = 0;
        doc["params"] = json{{"k", k.k}};
        doc["trees"] = json::array();
        doc["importances"] = json::array();
        doc["train"] = json{{"matrix", k.matrix},
                            {"labels", k.labels},
                            {"mean", k.mean},
                            {"std", k.stddev}};
    }
    return doc.dump();
}

Model load_model(const std::string& document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::exception& e) {
        throw BadFormat(std::string("model document is not valid JSON: ") + e.what());
    }
    try {
        if (!doc.contains("version")) throw BadFormat("missing version field");
        if (doc.at("version").get<std::string>() != "1")
            throw UnsupportedVersion("unsupported model version");
        const auto kind = doc.at("kind").get<std::string>();
        const FeatureSchema schema = schema_from_json(doc.at("schema"));
        const std::size_t n_cols = schema.active_count();

        if (kind == "dt" || kind == "rf") {
            TreeEnsembleModel m;
            m.kind = kind;
            m.schema = schema;
            m.seed = doc.at("seed").get<std::uint64_t>();
            const auto& p = doc.at("params");
            m.params.n_trees = p.at("n_trees").get<int>();
            m.params.max_features = p.at("max_features").get<int>();
            m.params.bootstrap = p.at("bootstrap").get<bool>();
            m.params.min_samples_split = p.at("min_samples_split").get<int>();
            m.params.max_depth = p.at("max_depth").get<int>();
            m.params.seed = m.seed;
            for (const auto& tj : doc.at("trees")) m.trees.push_back(tree_from_json(tj, n_cols));
            if (m.trees.empty()) throw BadFormat("model has no trees");
            m.importances = doc.at("importances").get<std::vector<double>>();
            if (m.importances.size() != n_cols)
                throw BadFormat("importances length does not match the schema");
            return m;
        }
        if (kind == "knn") {
            KnnModel m;
            m.schema = schema;
            m.n_cols = n_cols;
            m.k = doc.at("params").at("k").get<int>();
            const auto& tr = doc.at("train");
            m.matrix = tr.at("matrix").get<std::vector<double>>();
            m.labels = tr.at("labels").get<std::vector<std::uint8_t>>();
            m.mean = tr.at("mean").get<std::vector<double>>();
            m.stddev = tr.at("std").get<std::vector<double>>();
            if (m.labels.empty() || m.matrix.size() != m.labels.size() * n_cols ||
                m.mean.size() != n_cols || m.stddev.size() != n_cols || m.k <= 0 ||
                static_cast<std::size_t>(m.k) > m.labels.size())
                throw BadFormat("knn training block is inconsistent");
            return m;
        }
        throw BadFormat("unknown model kind: " + kind);
    } catch (const json::exception& e) {
        throw BadFormat(std::string("malformed model document: ") + e.what());
    }
}

void save_model_file(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw BadFormat("cannot open " + path + " for writing");
    out << save_model(model) << '\n';
    if (!out) throw BadFormat("write to " + path + " failed");
}

Model load_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BadFormat("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_model(ss.str());
}

}  // namespace dnsguard
