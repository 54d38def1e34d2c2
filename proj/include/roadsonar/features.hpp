#pragma once

// Vector pipeline (mean subtraction, range max-pool, row-major flatten, whitened PCA) and
// image pipeline (time-shift augmentation, per-scape normalization, random flips).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "roadsonar/beamform.hpp"
#include "roadsonar/rng.hpp"

namespace roadsonar {

inline constexpr int kPoolKernel = 5;
inline constexpr int kComponents = 256;
inline constexpr double kWhiteningEpsilon = 1e-12;

struct PipelineModel {
    RowMatrix mean_scape;
    int pool_kernel = kPoolKernel;
    Eigen::VectorXd pca_mean;        // pooled-space mean of the centered training vectors
    Eigen::MatrixXd pca_basis;       // n_components x dims, orthonormal rows
    Eigen::VectorXd pca_eigenvalues; // nonincreasing, covariance scale (n - 1 denominator)
    double total_variance = 0.0;     // sum of all covariance eigenvalues
    int n_components = 0;

    Eigen::Index dims() const noexcept { return pca_mean.size(); }
};

/// Non-overlapping windows of `kernel` along range; output cols = floor(cols / kernel).
RowMatrix maxpool_range(const RowMatrix& values, int kernel = kPoolKernel);
Energyscape maxpool_range(const Energyscape& scape, int kernel = kPoolKernel);

/// flatten_row_major(pool(scape - mean)).
Eigen::VectorXd pooled_vector(const RowMatrix& scape, const RowMatrix& mean, int kernel);

/// PCA on rows of `pooled` (one training vector per row), capped at
/// min(requested, n - 1, dims, #nonzero eigenvalues); warns when fewer than requested.
void fit_pca(PipelineModel& model, const Eigen::Ref<const RowMatrix>& pooled, int requested_components);

PipelineModel fit_vector_pipeline(std::span<const Energyscape> train, int n_components = kComponents,
                                  int pool_kernel = kPoolKernel);
/// Streaming variant: `load(i)` yields training scape i; it is called twice per index.
PipelineModel fit_vector_pipeline(std::size_t n_train, const std::function<RowMatrix(std::size_t)>& load,
                                  int n_components = kComponents, int pool_kernel = kPoolKernel);

/// component_j = ((pooled - pca_mean) . basis_j) / sqrt(eigenvalue_j + eps)
Eigen::VectorXd project_pooled(const PipelineModel& model, const Eigen::VectorXd& pooled);
Eigen::MatrixXd project_pooled_rows(const PipelineModel& model, const Eigen::Ref<const RowMatrix>& pooled);
Eigen::VectorXd apply_vector_pipeline(const PipelineModel& model, const Energyscape& scape);
/// Inverse of the whitened projection back to pooled space (pca_mean added).
Eigen::VectorXd reconstruct_pooled(const PipelineModel& model, const Eigen::VectorXd& features);

struct TimeShift {
    std::vector<Waveform> channels;
    long shift = 0;
};

/// One shift s ~ U{-max_shift..max_shift}, applied identically to every channel.
TimeShift augment_time_shift(std::span<const Waveform> channels, Rng& rng, int max_shift = 45);
std::vector<Waveform> time_shift(std::span<const Waveform> channels, long shift);

struct FlipDraw {
    bool horizontal = false; // direction axis
    bool vertical = false;   // range axis
};
Energyscape flip_scape(const Energyscape& scape, FlipDraw flips);
Energyscape augment_flip(const Energyscape& scape, Rng& rng, double p = 0.5, FlipDraw* drawn = nullptr);

/// (x - mean) / std over the whole scape; throws DegenerateInputError on a constant scape.
Energyscape normalize_scape(const Energyscape& scape);

struct ImagePipelineParams {
    int max_shift = 45;
    double flip_probability = 0.5;
    CfarParams cfar;
};

/// Image pipeline for one recording, starting from decoded + matched-filtered channels:
/// [time shift] -> beamform/envelope/cleanup -> subtract mean scape -> normalize -> [flips].
/// Bracketed augmentations run only when `training` is true.
Energyscape image_pipeline_sample(std::span<const Waveform> filtered, const ArrayGeometry& geom,
                                  const DirectionList& dirs, const RowMatrix& mean_scape, Rng& rng,
                                  bool training, const ImagePipelineParams& params = {});

// Model file: "VPM1", u32 rows, u32 cols, u32 pool_kernel, u32 n_components, u32 dims,
// f64 total_variance, then f32 arrays: mean_scape (row-major), pca_mean, pca_eigenvalues,
// pca_basis (row-major, one component per row). All little-endian.
void write_pipeline_model(const std::filesystem::path& path, const PipelineModel& model);
PipelineModel read_pipeline_model(const std::filesystem::path& path);

/// CSV with a header row (f0..f{n-1}, optionally preceded by an id column).
void write_feature_csv(const std::filesystem::path& path, const Eigen::MatrixXd& features,
                       std::span<const std::string> row_ids = {});
Eigen::MatrixXd read_feature_csv(const std::filesystem::path& path, std::vector<std::string>* row_ids = nullptr);

} // namespace roadsonar
