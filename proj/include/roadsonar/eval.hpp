#pragma once

// Dataset assembly (time-sync join, label merging, rare-class filtering), fold planning,
// support-weighted F1 / Cohen's kappa, and Youden-J threshold calibration.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "roadsonar/ml.hpp"
#include "roadsonar/simulate.hpp"

namespace roadsonar {

struct JoinedPair {
    std::size_t ref_index = 0;
    std::size_t other_index = 0;
    double dt = 0; // other - ref, seconds
};

/// For each reference timestamp, the nearest `other` timestamp (earlier or later; ties go to
/// the earlier one). Pairs with |dt| > tol are dropped. Both inputs must be sorted ascending.
std::vector<JoinedPair> sync_join(std::span<const double> ref, std::span<const double> other, double tol = 0.150);

/// "Asphalt - Alligator Crack" -> "Alligator Crack"; labels without a " - " separator are kept.
/// Duplicates produced by the merge are collapsed.
std::vector<std::string> merge_labels(std::span<const std::string> labels);

/// Builds the label matrix over `class_names` (labels outside the list are ignored).
LabelMatrix label_matrix(const DatasetManifest& manifest, const std::vector<std::string>& class_names);

struct RareClassFilter {
    LabelMatrix labels;
    std::vector<std::string> removed;
    std::vector<int> counts; // positive counts of the kept classes
};

/// Drops classes with fewer than `min_count` positives; rows left with no label stay as
/// all-negative rows.
RareClassFilter filter_rare_classes(const LabelMatrix& labels, int min_count = 100);

/// sum_i row[i] * 2^i, i = class index.
std::uint64_t stratification_key(std::span<const int> row);
std::vector<std::uint64_t> stratification_keys(const Eigen::MatrixXi& y);

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

struct FoldPlan {
    std::uint64_t seed = 0;
    std::size_t sample_count = 0;
    std::vector<std::size_t> test;
    std::vector<Fold> folds;

    /// Disjointness and coverage; throws ParameterError describing the first violation.
    void validate() const;
};

/// Uniform (non-stratified) test draw of round(test_fraction * n) samples, then the remainder
/// split into `n_folds` folds stratified by key: per key, validation counts differ by <= 1.
FoldPlan split_dataset(std::span<const std::uint64_t> keys, std::uint64_t seed, int n_folds = 10,
                       double test_fraction = 0.1);
FoldPlan split_dataset(const LabelMatrix& labels, std::uint64_t seed, int n_folds = 10, double test_fraction = 0.1);

std::string encode_fold_plan(const FoldPlan& plan);
FoldPlan parse_fold_plan(const std::string& json, const std::string& source = "<memory>");

struct ClassMetric {
    std::vector<double> per_class;
    std::vector<int> support; // positives in the truth
    double weighted = 0;      // support-weighted mean (0 when no class has support)
};

struct Confusion {
    long tp = 0, fp = 0, fn = 0, tn = 0;
};
Confusion confusion(const Eigen::MatrixXi& y_true, const Eigen::MatrixXi& y_pred, Eigen::Index cls);

ClassMetric f1_weighted(const Eigen::MatrixXi& y_true, const Eigen::MatrixXi& y_pred);
ClassMetric cohens_kappa_weighted(const Eigen::MatrixXi& y_true, const Eigen::MatrixXi& y_pred);

struct YoudenResult {
    std::vector<double> thresholds;
    std::vector<double> j;
};

/// Per class, the threshold maximizing TPR - FPR over midpoints between consecutive distinct
/// scores plus one candidate above every score; ties go to the higher threshold.
/// A sample is predicted positive when score >= threshold.
YoudenResult youden_thresholds(const Eigen::MatrixXd& scores, const Eigen::MatrixXi& y_true);
Eigen::MatrixXi apply_thresholds(const Eigen::MatrixXd& scores, std::span<const double> thresholds);

struct MetricsReport {
    std::vector<std::string> class_names;
    ClassMetric f1;
    ClassMetric kappa;
    std::vector<double> thresholds;
};

MetricsReport evaluate(const Eigen::MatrixXi& y_true, const Eigen::MatrixXi& y_pred,
                       std::vector<std::string> class_names, std::vector<double> thresholds);
std::string encode_metrics_json(const MetricsReport& report);

/// One row of the aggregate table: mean and standard deviation of the six scores over runs.
struct SplitScores {
    double test_kappa = 0, val_kappa = 0, train_kappa = 0;
    double test_f1 = 0, val_f1 = 0, train_f1 = 0;
};

struct AggregateRow {
    std::string model;
    std::size_t runs = 0;
    SplitScores mean;
    SplitScores stddev; // population standard deviation
};

AggregateRow aggregate(const std::string& model, std::span<const SplitScores> runs);
/// Columns: Model, Test kappa, Validation kappa, Training kappa, Test F1, Validation F1, Training F1,
/// cells formatted as "mu%+-sigma%".
std::string format_results_table(std::span<const AggregateRow> rows);

} // namespace roadsonar
