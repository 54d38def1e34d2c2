#pragma once

// One-vs-rest multilabel classifiers and the model-size arithmetic utilities.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "roadsonar/exec.hpp"

namespace roadsonar {

/// S x C binary matrix; columns map 1:1 to class names.
struct LabelMatrix {
    Eigen::MatrixXi values;
    std::vector<std::string> class_names;

    Eigen::Index samples() const noexcept { return values.rows(); }
    Eigen::Index classes() const noexcept { return values.cols(); }
    void validate() const;
};

/// w_i = S / (C * sum_j Y[j, i])
std::vector<double> balanced_class_weights(const Eigen::MatrixXi& y);
std::vector<double> balanced_class_weights(const LabelMatrix& y);

/// Per binary subproblem: {negative weight, positive weight}, i.e. the balanced weights of
/// the two-column matrix [1 - y_i, y_i].
using BinaryWeights = std::array<double, 2>;
std::vector<BinaryWeights> ovr_balanced_weights(const Eigen::MatrixXi& y);

/// gamma = 1 / (F * Var[X]) with the variance taken over all entries.
double rbf_gamma(const Eigen::MatrixXd& x);

struct ScalingSpec {
    double alpha = 1.2, beta = 1.1, gamma = 1.15, phi = 2.0;
    int d0 = 3, w0 = 16, r0 = 1;
    void validate() const;
};

struct ScalingResult {
    double depth_raw = 0, width_raw = 0, resolution_raw = 0;
    int depth = 0, width = 0, downsample_interval = 0;
    int residual_blocks = 0; // depth - 1 (the stem convolution counts as one layer)
};

/// raw = (d0 alpha^phi, w0 beta^phi, r0 gamma^phi); integers by round-half-up, at least 1.
ScalingResult resolve_cnn_scaling(const ScalingSpec& spec);

// ---------------------------------------------------------------------------------------

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0;
    int left = -1, right = -1;
    double value = 0; // weighted positive fraction of the samples reaching the node
};

/// Binary CART tree with weighted Gini impurity, grown to purity.
struct DecisionTree {
    std::vector<TreeNode> nodes;

    double predict(const double* row) const;
    int depth() const;
    std::size_t leaf_count() const;
};

struct TreeOptions {
    int max_features = 0;         // 0 = all features
    std::uint64_t seed = 0;       // used only when max_features < F
};

/// `rows` selects (with repetition) the training samples; weights are per sample.
DecisionTree fit_tree(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, const Eigen::VectorXd& sample_weight,
                      std::span<const int> rows, const TreeOptions& opts = {});

struct LogisticBinary {
    Eigen::VectorXd weights;
    double intercept = 0;
    int iterations = 0;
    bool converged = false;
};

enum class ModelKind : std::uint32_t { Logistic = 1, Tree = 2, Forest = 3 };
std::string to_string(ModelKind k);
std::optional<ModelKind> parse_model_kind(std::string_view s);

struct OvrModel {
    ModelKind kind = ModelKind::Logistic;
    int n_features = 0;
    std::vector<std::string> class_names;
    std::vector<double> thresholds;             // decision threshold per class (0.5 until calibrated)
    std::vector<LogisticBinary> logistic;       // kind == Logistic
    std::vector<std::vector<DecisionTree>> trees; // kind == Tree (one tree) or Forest

    int classes() const noexcept { return static_cast<int>(class_names.size()); }
};

struct LogisticOptions {
    double c_reg = 0.01;
    double tolerance = 1e-6; // gradient infinity norm
    int max_iterations = 10000;
    std::optional<std::vector<BinaryWeights>> class_weights; // default: balanced
};

struct ForestOptions {
    int n_trees = 100;
    int max_features = 0; // 0 = floor(sqrt(F))
    bool bootstrap = true;
    std::uint64_t seed = 0;
    std::optional<std::vector<BinaryWeights>> class_weights;
};

/// Minimizes sum_j s_j * logloss_j + ||w||^2 / (2 C) per class (intercept unpenalized) by
/// damped Newton iterations.
LogisticBinary fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, const Eigen::VectorXd& sample_weight,
                            const LogisticOptions& opts);
double logistic_objective(const LogisticBinary& m, const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                          const Eigen::VectorXd& sample_weight, double c_reg);

OvrModel train_logreg_ovr(const Eigen::MatrixXd& x, const LabelMatrix& y, const LogisticOptions& opts = {},
                          Exec exec = Exec::Parallel);
OvrModel train_tree_ovr(const Eigen::MatrixXd& x, const LabelMatrix& y,
                        const std::optional<std::vector<BinaryWeights>>& class_weights = std::nullopt,
                        Exec exec = Exec::Parallel);
OvrModel train_forest_ovr(const Eigen::MatrixXd& x, const LabelMatrix& y, const ForestOptions& opts = {},
                          Exec exec = Exec::Parallel);

/// S x C per-class probability estimates in [0, 1]. Forest scores are vote fractions.
Eigen::MatrixXd predict_scores(const OvrModel& model, const Eigen::MatrixXd& x);

// Binary model file: "OVR1", u32 version, u32 kind, u32 classes, u32 features, f64 thresholds,
// then per class the logistic weights + intercept or the tree list (u32 trees, per tree
// u32 node count and nodes as i32 feature, f64 threshold, i32 left, i32 right, f64 value).
// A JSON sidecar (<path>.json) records class names and hyperparameters.
void write_ovr_model(const std::filesystem::path& path, const OvrModel& model, const std::string& hyperparams_json);
OvrModel read_ovr_model(const std::filesystem::path& path);

} // namespace roadsonar
