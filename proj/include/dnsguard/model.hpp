#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dnsguard/features.hpp"

namespace dnsguard {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyDataset : ModelError {
    using ModelError::ModelError;
};
struct SingleClass : ModelError {
    using ModelError::ModelError;
};
struct KTooLarge : ModelError {
    using ModelError::ModelError;
};
struct BadFormat : ModelError {
    using ModelError::ModelError;
};
struct UnsupportedVersion : ModelError {
    using ModelError::ModelError;
};
struct SchemaFingerprintMismatch : ModelError {
    using ModelError::ModelError;
};

/// Labeled rows reduced under a schema. Row-major storage.
struct Dataset {
    FeatureSchema schema;
    std::size_t n_cols = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> labels;  // 0 benign, 1 attack

    std::size_t n_rows() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(values.data() + i * n_cols, n_cols);
    }
    void add_row(std::span<const double> v, int label) {
        values.insert(values.end(), v.begin(), v.end());
        labels.push_back(static_cast<std::uint8_t>(label));
    }
};

Dataset make_dataset(const FeatureSchema& schema, const LabeledFeatures& rows);

/// One CART tree as flat parallel arrays; node 0 is the root, feature -1
/// marks a leaf. Class counts are kept at every node.
struct Tree {
    std::vector<std::int32_t> feature;
    std::vector<double> threshold;
    std::vector<std::int32_t> left;
    std::vector<std::int32_t> right;
    std::vector<std::uint32_t> count0;
    std::vector<std::uint32_t> count1;

    std::size_t node_count() const { return feature.size(); }
    bool is_leaf(std::size_t i) const { return feature[i] < 0; }

    /// Iterative descent; returns the leaf index. Values at or below the
    /// threshold go left.
    std::size_t find_leaf(std::span<const double> v) const;
    bool operator==(const Tree&) const = default;
};

struct TrainParams {
    int n_trees = 100;
    int max_features = -1;      // -1: floor(sqrt(d)) for forests, d for a single tree
    bool bootstrap = true;
    int min_samples_split = 2;
    int max_depth = -1;         // -1: unlimited
    bool allow_pure = false;    // permit single-class training data
    std::uint64_t seed = 0;
};

struct Prediction {
    int label = 0;
    double score = 0.0;  // attack probability in [0, 1]

    bool operator==(const Prediction&) const = default;
};

/// Decision tree or random forest: both are tree ensembles, a single tree is
/// the n_trees=1, no-bootstrap, all-features case.
struct TreeEnsembleModel {
    std::string kind;  // "dt" or "rf"
    FeatureSchema schema;
    TrainParams params;
    std::uint64_t seed = 0;
    std::vector<Tree> trees;
    std::vector<double> importances;  // one per active feature, summing to 1

    Prediction predict(std::span<const double> v) const;
};

struct KnnModel {
    FeatureSchema schema;
    int k = 5;
    std::size_t n_cols = 0;
    std::vector<double> matrix;  // standardized training rows
    std::vector<std::uint8_t> labels;
    std::vector<double> mean;  // per-feature standardization parameters
    std::vector<double> stddev;  // 0 marks a constant feature (zero distance)

    Prediction predict(std::span<const double> v) const;
};

using Model = std::variant<TreeEnsembleModel, KnnModel>;

/// CART training: greedy Gini splits at midpoints between consecutive
/// distinct values; stops on purity, min_samples_split, or no improvement.
TreeEnsembleModel train_decision_tree(const Dataset& data, TrainParams params = {});

/// Bootstrap-aggregated trees with per-node feature subsetting. Per-tree RNG
/// streams are derived from the seed, so the result is byte-identical no
/// matter how the tree loop is scheduled.
TreeEnsembleModel train_random_forest(const Dataset& data, TrainParams params = {});
TreeEnsembleModel train_random_forest_serial(const Dataset& data, TrainParams params = {});

KnnModel train_knn(const Dataset& data, int k = 5);

Prediction predict(const Model& model, std::span<const double> v);

std::vector<Prediction> predict_batch(const Model& model, const Dataset& data);
std::vector<Prediction> predict_batch_serial(const Model& model, const Dataset& data);

const FeatureSchema& model_schema(const Model& model);
std::string model_kind(const Model& model);
/// Short identifier binding kind and schema, e.g. "rf:90b01b9c26f51f24".
std::string model_id(const Model& model);

/// Self-describing JSON document (version "1"); load verifies the schema
/// fingerprint and rejects unknown versions.
std::string save_model(const Model& model);
Model load_model(const std::string& document);
void save_model_file(const Model& model, const std::string& path);
Model load_model_file(const std::string& path);

double gini_impurity(std::uint64_t c0, std::uint64_t c1);

}  // namespace dnsguard
