#include "roadsonar/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "roadsonar/error.hpp"
#include "roadsonar/fileutil.hpp"

namespace roadsonar {

namespace {

// Column block width for the blocked Gram/basis products; keeps the centered temporary small.
constexpr Eigen::Index kBlockCols = 8192;
// Gram eigenvalues at or below this fraction of the largest are treated as zero.
constexpr double kRelativeEigenFloor = 1e-10;

} // namespace

RowMatrix maxpool_range(const RowMatrix& values, int kernel) {
    if (kernel < 1) throw ParameterError("max-pool kernel must be >= 1");
    if (kernel > values.cols())
        throw ParameterError("max-pool kernel " + std::to_string(kernel) + " exceeds column count " +
                             std::to_string(values.cols()));
    const Eigen::Index out_cols = values.cols() / kernel;
    RowMatrix out(values.rows(), out_cols);
    for (Eigen::Index r = 0; r < values.rows(); ++r)
        for (Eigen::Index c = 0; c < out_cols; ++c) out(r, c) = values.row(r).segment(c * kernel, kernel).maxCoeff();
    return out;
}

Energyscape maxpool_range(const Energyscape& scape, int kernel) {
    Energyscape out;
    out.values = maxpool_range(scape.values, kernel);
    out.directions = scape.directions;
    out.range_resolution = scape.range_resolution * kernel;
    return out;
}

Eigen::VectorXd pooled_vector(const RowMatrix& scape, const RowMatrix& mean, int kernel) {
    if (scape.rows() != mean.rows() || scape.cols() != mean.cols())
        throw ParameterError("energyscape shape " + std::to_string(scape.rows()) + "x" + std::to_string(scape.cols()) +
                             " does not match the model's " + std::to_string(mean.rows()) + "x" +
                             std::to_string(mean.cols()));
    if (kernel < 1 || kernel > scape.cols()) throw ParameterError("max-pool kernel out of range");
    const Eigen::Index out_cols = scape.cols() / kernel;
    Eigen::VectorXd v(scape.rows() * out_cols);
    for (Eigen::Index r = 0; r < scape.rows(); ++r) {
        for (Eigen::Index c = 0; c < out_cols; ++c) {
            double best = -std::numeric_limits<double>::infinity();
            for (Eigen::Index k = c * kernel; k < (c + 1) * kernel; ++k) best = std::max(best, scape(r, k) - mean(r, k));
            v(r * out_cols + c) = best;
        }
    }
    return v;
}

void fit_pca(PipelineModel& model, const Eigen::Ref<const RowMatrix>& pooled, int requested_components) {
    const Eigen::Index n = pooled.rows(), dims = pooled.cols();
    if (n < 2) throw ParameterError("PCA needs at least two training vectors");
    if (requested_components < 0) throw ParameterError("component count must be nonnegative");

    model.pca_mean = pooled.colwise().mean().transpose();

    // Gram matrix of the centered rows, accumulated over column blocks.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index c0 = 0; c0 < dims; c0 += kBlockCols) {
        const Eigen::Index w = std::min(kBlockCols, dims - c0);
        const Eigen::MatrixXd block = pooled.middleCols(c0, w).rowwise() - model.pca_mean.segment(c0, w).transpose();
        gram.selfadjointView<Eigen::Lower>().rankUpdate(block);
    }
    gram = gram.selfadjointView<Eigen::Lower>();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) throw DegenerateInputError("PCA eigendecomposition failed");
    const Eigen::VectorXd evals = eig.eigenvalues().reverse();        // descending
    const Eigen::MatrixXd evecs = eig.eigenvectors().rowwise().reverse();
    model.total_variance = std::max(0.0, gram.trace()) / static_cast<double>(n - 1);

    const double top = std::max(0.0, evals.size() > 0 ? evals(0) : 0.0);
    Eigen::Index usable = 0;
    while (usable < evals.size() && top > 0 && evals(usable) > kRelativeEigenFloor * top) ++usable;
    const Eigen::Index cap = std::min<Eigen::Index>({static_cast<Eigen::Index>(requested_components), n - 1, dims, usable});
    if (cap < requested_components)
        spdlog::warn("PCA: only {} usable components (requested {}, n_train={}, dims={})", cap, requested_components, n,
                     dims);

    model.n_components = static_cast<int>(cap);
    model.pca_eigenvalues = evals.head(cap) / static_cast<double>(n - 1);
    model.pca_basis.resize(cap, dims);
    if (cap == 0) return;
    // basis rows = sigma^-1 U^T Xc, with sigma_j = sqrt(gram eigenvalue j)
    const Eigen::MatrixXd scaled_u = evecs.leftCols(cap) * evals.head(cap).cwiseSqrt().cwiseInverse().asDiagonal();
    for (Eigen::Index c0 = 0; c0 < dims; c0 += kBlockCols) {
        const Eigen::Index w = std::min(kBlockCols, dims - c0);
        const Eigen::MatrixXd block = pooled.middleCols(c0, w).rowwise() - model.pca_mean.segment(c0, w).transpose();
        model.pca_basis.middleCols(c0, w).noalias() = scaled_u.transpose() * block;
    }
}

namespace {

void check_same_shape(const RowMatrix& a, const RowMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ParameterError("training energyscapes differ in shape");
}

} // namespace

PipelineModel fit_vector_pipeline(std::size_t n_train, const std::function<RowMatrix(std::size_t)>& load,
                                  int n_components, int pool_kernel) {
    if (n_train < 2) throw ParameterError("vector pipeline needs at least two training energyscapes");
    PipelineModel model;
    model.pool_kernel = pool_kernel;
    for (std::size_t i = 0; i < n_train; ++i) {
        RowMatrix s = load(i);
        if (i == 0) {
            model.mean_scape = RowMatrix::Zero(s.rows(), s.cols());
        } else {
            check_same_shape(s, model.mean_scape);
        }
        model.mean_scape += s;
    }
    model.mean_scape /= static_cast<double>(n_train);

    RowMatrix pooled;
    for (std::size_t i = 0; i < n_train; ++i) {
        const RowMatrix s = load(i);
        check_same_shape(s, model.mean_scape);
        const Eigen::VectorXd v = pooled_vector(s, model.mean_scape, pool_kernel);
        if (i == 0) pooled.resize(static_cast<Eigen::Index>(n_train), v.size());
        pooled.row(static_cast<Eigen::Index>(i)) = v.transpose();
    }
    fit_pca(model, pooled, n_components);
    return model;
}

PipelineModel fit_vector_pipeline(std::span<const Energyscape> train, int n_components, int pool_kernel) {
    return fit_vector_pipeline(
        train.size(), [&](std::size_t i) { return train[i].values; }, n_components, pool_kernel);
}

Eigen::VectorXd project_pooled(const PipelineModel& model, const Eigen::VectorXd& pooled) {
    if (pooled.size() != model.dims()) throw ParameterError("feature dimension does not match the pipeline model");
    const Eigen::VectorXd centered = pooled - model.pca_mean;
    Eigen::VectorXd out = model.pca_basis * centered;
    for (Eigen::Index j = 0; j < out.size(); ++j) out(j) /= std::sqrt(model.pca_eigenvalues(j) + kWhiteningEpsilon);
    return out;
}

Eigen::MatrixXd project_pooled_rows(const PipelineModel& model, const Eigen::Ref<const RowMatrix>& pooled) {
    if (pooled.cols() != model.dims()) throw ParameterError("feature dimension does not match the pipeline model");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(pooled.rows(), model.n_components);
    for (Eigen::Index c0 = 0; c0 < pooled.cols(); c0 += kBlockCols) {
        const Eigen::Index w = std::min(kBlockCols, pooled.cols() - c0);
        const Eigen::MatrixXd block = pooled.middleCols(c0, w).rowwise() - model.pca_mean.segment(c0, w).transpose();
        out.noalias() += block * model.pca_basis.middleCols(c0, w).transpose();
    }
    for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) /= std::sqrt(model.pca_eigenvalues(j) + kWhiteningEpsilon);
    return out;
}

Eigen::VectorXd apply_vector_pipeline(const PipelineModel& model, const Energyscape& scape) {
    return project_pooled(model, pooled_vector(scape.values, model.mean_scape, model.pool_kernel));
}

Eigen::VectorXd reconstruct_pooled(const PipelineModel& model, const Eigen::VectorXd& features) {
    if (features.size() != model.n_components) throw ParameterError("feature length does not match component count");
    Eigen::VectorXd scaled = features;
    for (Eigen::Index j = 0; j < scaled.size(); ++j) scaled(j) *= std::sqrt(model.pca_eigenvalues(j) + kWhiteningEpsilon);
    return model.pca_mean + model.pca_basis.transpose() * scaled;
}

// ---------------------------------------------------------------------------------------

std::vector<Waveform> time_shift(std::span<const Waveform> channels, long shift) {
    std::vector<Waveform> out;
    out.reserve(channels.size());
    for (const auto& ch : channels) out.push_back(shift_samples(ch, shift));
    return out;
}

TimeShift augment_time_shift(std::span<const Waveform> channels, Rng& rng, int max_shift) {
    if (max_shift < 0) throw ParameterError("max_shift must be nonnegative");
    const long s = std::uniform_int_distribution<long>(-max_shift, max_shift)(rng);
    return {time_shift(channels, s), s};
}

Energyscape flip_scape(const Energyscape& scape, FlipDraw flips) {
    Energyscape out = scape;
    if (flips.horizontal) out.values = out.values.colwise().reverse().eval();
    if (flips.vertical) out.values = out.values.rowwise().reverse().eval();
    return out;
}

Energyscape augment_flip(const Energyscape& scape, Rng& rng, double p, FlipDraw* drawn) {
    std::bernoulli_distribution coin(p);
    FlipDraw d;
    d.horizontal = coin(rng);
    d.vertical = coin(rng);
    if (drawn != nullptr) *drawn = d;
    return flip_scape(scape, d);
}

Energyscape normalize_scape(const Energyscape& scape) {
    const double n = static_cast<double>(scape.values.size());
    if (n == 0) throw DegenerateInputError("cannot normalize an empty energyscape");
    const double mean = scape.values.sum() / n;
    const double var = (scape.values.array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    if (!(sd > 0) || !std::isfinite(sd)) throw DegenerateInputError("cannot normalize a constant energyscape");
    Energyscape out = scape;
    out.values = ((scape.values.array() - mean) / sd).matrix();
    return out;
}

Energyscape image_pipeline_sample(std::span<const Waveform> filtered, const ArrayGeometry& geom,
                                  const DirectionList& dirs, const RowMatrix& mean_scape, Rng& rng, bool training,
                                  const ImagePipelineParams& params) {
    std::vector<Waveform> channels(filtered.begin(), filtered.end());
    if (training) channels = augment_time_shift(filtered, rng, params.max_shift).channels;
    auto scape = cfar_cleanup(build_energyscape(channels, dirs, geom, Exec::Serial), params.cfar, Exec::Serial);
    if (scape.values.rows() != mean_scape.rows() || scape.values.cols() != mean_scape.cols())
        throw ParameterError("mean energyscape shape does not match the recording");
    scape.values -= mean_scape;
    scape = normalize_scape(scape);
    if (training) scape = augment_flip(scape, rng, params.flip_probability);
    return scape;
}

// ---------------------------------------------------------------------------------------

namespace {
constexpr std::string_view kModelMagic = "VPM1";
}

void write_pipeline_model(const std::filesystem::path& path, const PipelineModel& model) {
    ByteWriter w;
    w.put_bytes(kModelMagic);
    w.put_u32(static_cast<std::uint32_t>(model.mean_scape.rows()));
    w.put_u32(static_cast<std::uint32_t>(model.mean_scape.cols()));
    w.put_u32(static_cast<std::uint32_t>(model.pool_kernel));
    w.put_u32(static_cast<std::uint32_t>(model.n_components));
    w.put_u32(static_cast<std::uint32_t>(model.dims()));
    w.put_f64(model.total_variance);
    for (Eigen::Index i = 0; i < model.mean_scape.size(); ++i) w.put_f32(static_cast<float>(model.mean_scape.data()[i]));
    for (Eigen::Index i = 0; i < model.pca_mean.size(); ++i) w.put_f32(static_cast<float>(model.pca_mean(i)));
    for (Eigen::Index i = 0; i < model.pca_eigenvalues.size(); ++i) w.put_f32(static_cast<float>(model.pca_eigenvalues(i)));
    for (Eigen::Index r = 0; r < model.pca_basis.rows(); ++r)
        for (Eigen::Index c = 0; c < model.pca_basis.cols(); ++c) w.put_f32(static_cast<float>(model.pca_basis(r, c)));
    write_file_atomic(path, w.buffer());
}

PipelineModel read_pipeline_model(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes, path.string());
    if (r.get_bytes(4) != kModelMagic) throw IoError(path.string() + ": not a pipeline model (bad magic)");
    PipelineModel m;
    const auto rows = r.get_u32(), cols = r.get_u32();
    m.pool_kernel = static_cast<int>(r.get_u32());
    m.n_components = static_cast<int>(r.get_u32());
    const auto dims = r.get_u32();
    m.total_variance = r.get_f64();
    const std::uint64_t expected =
        4ULL * (static_cast<std::uint64_t>(rows) * cols + dims + m.n_components + static_cast<std::uint64_t>(m.n_components) * dims);
    if (r.remaining() != expected) throw IoError(path.string() + ": pipeline model payload size does not match header");
    m.mean_scape.resize(rows, cols);
    for (Eigen::Index i = 0; i < m.mean_scape.size(); ++i) m.mean_scape.data()[i] = r.get_f32();
    m.pca_mean.resize(dims);
    for (Eigen::Index i = 0; i < m.pca_mean.size(); ++i) m.pca_mean(i) = r.get_f32();
    m.pca_eigenvalues.resize(m.n_components);
    for (Eigen::Index i = 0; i < m.pca_eigenvalues.size(); ++i) m.pca_eigenvalues(i) = r.get_f32();
    m.pca_basis.resize(m.n_components, dims);
    for (Eigen::Index i = 0; i < m.pca_basis.rows(); ++i)
        for (Eigen::Index c = 0; c < m.pca_basis.cols(); ++c) m.pca_basis(i, c) = r.get_f32();
    return m;
}

void write_feature_csv(const std::filesystem::path& path, const Eigen::MatrixXd& features,
                       std::span<const std::string> row_ids) {
    const bool with_ids = !row_ids.empty();
    if (with_ids && static_cast<Eigen::Index>(row_ids.size()) != features.rows())
        throw ParameterError("row id count does not match feature rows");
    std::string text;
    if (with_ids) text += "id,";
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
        if (c) text += ',';
        text += "f" + std::to_string(c);
    }
    text += '\n';
    char buf[32];
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
        if (with_ids) text += row_ids[static_cast<std::size_t>(r)] + ",";
        for (Eigen::Index c = 0; c < features.cols(); ++c) {
            if (c) text += ',';
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, features(r, c));
            text.append(buf, end);
        }
        text += '\n';
    }
    write_file_atomic(path, text);
}

Eigen::MatrixXd read_feature_csv(const std::filesystem::path& path, std::vector<std::string>* row_ids) {
    std::istringstream in(read_file_text(path));
    std::string header;
    if (!std::getline(in, header)) throw IoError(path.string() + ": empty feature CSV");
    const bool with_ids = header.rfind("id,", 0) == 0 || header == "id";
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t pos = 0;
        bool first = true;
        while (true) {
            const auto next = line.find(',', pos);
            const auto field = line.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
            if (first && with_ids) {
                if (row_ids) row_ids->push_back(field);
            } else {
                double v = 0;
                auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
                if (ec != std::errc()) throw IoError(path.string() + ": bad number '" + field + "'");
                row.push_back(v);
            }
            first = false;
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size()) throw IoError(path.string() + ": ragged CSV rows");
        rows.push_back(std::move(row));
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return out;
}

} // namespace roadsonar
