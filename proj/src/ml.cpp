#include "roadsonar/ml.hpp"

#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>

#include <Eigen/Cholesky>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "roadsonar/error.hpp"
#include "roadsonar/fileutil.hpp"
#include "roadsonar/rng.hpp"

namespace roadsonar {

void LabelMatrix::validate() const {
    if (static_cast<Eigen::Index>(class_names.size()) != values.cols())
        throw ParameterError("label matrix has " + std::to_string(values.cols()) + " columns but " +
                             std::to_string(class_names.size()) + " class names");
    if ((values.array() != 0 && values.array() != 1).any()) throw ParameterError("label matrix entries must be 0 or 1");
}

namespace {

std::string class_label(const std::vector<std::string>* names, Eigen::Index i) {
    if (names != nullptr && i < static_cast<Eigen::Index>(names->size())) return "'" + (*names)[i] + "'";
    return std::to_string(i);
}

std::vector<double> balanced_weights_impl(const Eigen::MatrixXi& y, const std::vector<std::string>* names) {
    const double s = static_cast<double>(y.rows());
    const double c = static_cast<double>(y.cols());
    if (y.cols() == 0) throw ParameterError("label matrix has no classes");
    std::vector<double> w(static_cast<std::size_t>(y.cols()));
    for (Eigen::Index i = 0; i < y.cols(); ++i) {
        const double count = y.col(i).cast<double>().sum();
        if (count <= 0) throw ParameterError("class " + class_label(names, i) + " has no positive samples");
        w[static_cast<std::size_t>(i)] = s / (c * count);
    }
    return w;
}

} // namespace

std::vector<double> balanced_class_weights(const Eigen::MatrixXi& y) { return balanced_weights_impl(y, nullptr); }

std::vector<double> balanced_class_weights(const LabelMatrix& y) {
    y.validate();
    return balanced_weights_impl(y.values, &y.class_names);
}

std::vector<BinaryWeights> ovr_balanced_weights(const Eigen::MatrixXi& y) {
    std::vector<BinaryWeights> out;
    for (Eigen::Index i = 0; i < y.cols(); ++i) {
        Eigen::MatrixXi pair(y.rows(), 2);
        pair.col(0) = 1 - y.col(i).array();
        pair.col(1) = y.col(i);
        try {
            const auto w = balanced_class_weights(pair);
            out.push_back({w[0], w[1]});
        } catch (const ParameterError&) {
            throw ParameterError("class " + std::to_string(i) + " needs both positive and negative samples");
        }
    }
    return out;
}

double rbf_gamma(const Eigen::MatrixXd& x) {
    if (x.cols() < 1 || x.rows() < 1) throw ParameterError("rbf_gamma needs a nonempty feature matrix");
    const double n = static_cast<double>(x.size());
    const double mean = x.sum() / n;
    const double var = (x.array() - mean).square().sum() / n;
    if (!(var > 0)) throw DegenerateInputError("feature matrix has zero variance");
    return 1.0 / (static_cast<double>(x.cols()) * var);
}

void ScalingSpec::validate() const {
    if (!(alpha >= 1) || !(beta >= 1) || !(gamma >= 1)) throw ParameterError("scaling ratios must be >= 1");
    if (!std::isfinite(phi) || phi < 0) throw ParameterError("scaling exponent must be finite and nonnegative");
    if (d0 < 1 || w0 < 1 || r0 < 1) throw ParameterError("scaling baselines must be >= 1");
}

ScalingResult resolve_cnn_scaling(const ScalingSpec& spec) {
    spec.validate();
    auto half_up = [](double v) { return std::max(1, static_cast<int>(std::floor(v + 0.5))); };
    ScalingResult r;
    r.depth_raw = spec.d0 * std::pow(spec.alpha, spec.phi);
    r.width_raw = spec.w0 * std::pow(spec.beta, spec.phi);
    r.resolution_raw = spec.r0 * std::pow(spec.gamma, spec.phi);
    r.depth = half_up(r.depth_raw);
    r.width = half_up(r.width_raw);
    r.downsample_interval = half_up(r.resolution_raw);
    r.residual_blocks = r.depth - 1;
    return r;
}

// ---------------------------------------------------------------------------------------

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_binary_inputs(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, const Eigen::VectorXd& s) {
    if (y.size() != x.rows() || s.size() != x.rows()) throw ParameterError("inputs disagree in sample count");
    if (!x.allFinite()) throw ParameterError("feature matrix contains non-finite values");
}

} // namespace

double logistic_objective(const LogisticBinary& m, const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                          const Eigen::VectorXd& sample_weight, double c_reg) {
    check_binary_inputs(x, y, sample_weight);
    const Eigen::VectorXd z = (x * m.weights).array() + m.intercept;
    double loss = 0;
    for (Eigen::Index j = 0; j < z.size(); ++j) loss += sample_weight(j) * (softplus(z(j)) - y(j) * z(j));
    return loss + m.weights.squaredNorm() / (2.0 * c_reg);
}

LogisticBinary fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, const Eigen::VectorXd& sample_weight,
                            const LogisticOptions& opts) {
    check_binary_inputs(x, y, sample_weight);
    if (!(opts.c_reg > 0)) throw ParameterError("C_reg must be positive");
    const Eigen::Index n = x.rows(), f = x.cols();
    // Augmented design [X 1]; the last coefficient is the unpenalized intercept.
    Eigen::MatrixXd xa(n, f + 1);
    xa.leftCols(f) = x;
    xa.col(f).setOnes();
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(f + 1);
    Eigen::VectorXd reg = Eigen::VectorXd::Constant(f + 1, 1.0 / opts.c_reg);
    reg(f) = 0;
    const Eigen::VectorXd yd = y.cast<double>();

    auto objective = [&](const Eigen::VectorXd& t) {
        const Eigen::VectorXd z = xa * t;
        double loss = 0;
        for (Eigen::Index j = 0; j < n; ++j) loss += sample_weight(j) * (softplus(z(j)) - yd(j) * z(j));
        return loss + 0.5 * (reg.array() * t.array().square()).sum();
    };

    LogisticBinary out;
    double obj = objective(theta);
    for (int it = 0; it < opts.max_iterations; ++it) {
        const Eigen::VectorXd z = xa * theta;
        Eigen::VectorXd resid(n), curv(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            const double p = sigmoid(z(j));
            resid(j) = sample_weight(j) * (p - yd(j));
            curv(j) = sample_weight(j) * p * (1 - p);
        }
        const Eigen::VectorXd grad = xa.transpose() * resid + reg.cwiseProduct(theta);
        out.iterations = it;
        if (grad.lpNorm<Eigen::Infinity>() <= opts.tolerance) {
            out.converged = true;
            break;
        }
        Eigen::MatrixXd hess = xa.transpose() * curv.asDiagonal() * xa;
        hess.diagonal() += reg;
        hess.diagonal().array() += 1e-12 * (1.0 + hess.diagonal().cwiseAbs().maxCoeff());
        const Eigen::VectorXd step = hess.ldlt().solve(grad);
        // Backtracking line search on the convex objective.
        double t = 1.0;
        const double slope = grad.dot(step);
        Eigen::VectorXd next = theta - step;
        double next_obj = objective(next);
        while (next_obj > obj - 1e-4 * t * slope && t > 1e-10) {
            t *= 0.5;
            next = theta - t * step;
            next_obj = objective(next);
        }
        if (!(next_obj <= obj)) break; // no further decrease representable
        theta = next;
        obj = next_obj;
        out.iterations = it + 1;
    }
    out.weights = theta.head(f);
    out.intercept = theta(f);
    return out;
}

std::string to_string(ModelKind k) {
    switch (k) {
    case ModelKind::Logistic: return "logreg";
    case ModelKind::Tree: return "tree";
    case ModelKind::Forest: return "forest";
    }
    return "unknown";
}

std::optional<ModelKind> parse_model_kind(std::string_view s) {
    if (s == "logreg") return ModelKind::Logistic;
    if (s == "tree") return ModelKind::Tree;
    if (s == "forest") return ModelKind::Forest;
    return std::nullopt;
}

namespace {

std::vector<BinaryWeights> checked_weights(const Eigen::MatrixXd& x, const LabelMatrix& y,
                                           const std::optional<std::vector<BinaryWeights>>& given) {
    y.validate();
    if (x.rows() != y.samples())
        throw ParameterError("feature rows (" + std::to_string(x.rows()) + ") do not match label rows (" +
                             std::to_string(y.samples()) + ")");
    if (x.cols() < 1) throw ParameterError("feature matrix has no columns");
    if (!x.allFinite()) throw ParameterError("feature matrix contains non-finite values");
    for (Eigen::Index i = 0; i < y.classes(); ++i) {
        const auto pos = y.values.col(i).sum();
        if (pos == 0 || pos == y.samples())
            throw ParameterError("class '" + y.class_names[static_cast<std::size_t>(i)] +
                                 "' needs at least one positive and one negative sample");
    }
    if (given) {
        if (static_cast<Eigen::Index>(given->size()) != y.classes())
            throw ParameterError("class weight count does not match class count");
        return *given;
    }
    return ovr_balanced_weights(y.values);
}

Eigen::VectorXd per_sample(const Eigen::VectorXi& y, const BinaryWeights& w) {
    Eigen::VectorXd s(y.size());
    for (Eigen::Index j = 0; j < y.size(); ++j) s(j) = w[y(j) ? 1 : 0];
    return s;
}

// Runs body(i) for i in [0, n), optionally under OpenMP, rethrowing the first exception.
template <class F>
void parallel_map(int n, Exec exec, F&& body) {
    if (exec == Exec::Serial) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::exception_ptr err;
    std::mutex mu;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        try {
            body(i);
        } catch (...) {
            std::lock_guard lock(mu);
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
}

OvrModel empty_model(ModelKind kind, const Eigen::MatrixXd& x, const LabelMatrix& y) {
    OvrModel m;
    m.kind = kind;
    m.n_features = static_cast<int>(x.cols());
    m.class_names = y.class_names;
    m.thresholds.assign(y.class_names.size(), 0.5);
    return m;
}

} // namespace

OvrModel train_logreg_ovr(const Eigen::MatrixXd& x, const LabelMatrix& y, const LogisticOptions& opts, Exec exec) {
    const auto weights = checked_weights(x, y, opts.class_weights);
    auto model = empty_model(ModelKind::Logistic, x, y);
    model.logistic.resize(static_cast<std::size_t>(y.classes()));
    parallel_map(static_cast<int>(y.classes()), exec, [&](int c) {
        const Eigen::VectorXi yc = y.values.col(c);
        auto fit = fit_logistic(x, yc, per_sample(yc, weights[static_cast<std::size_t>(c)]), opts);
        if (!fit.converged)
            spdlog::warn("logistic regression for class '{}' stopped after {} iterations without converging",
                         y.class_names[static_cast<std::size_t>(c)], fit.iterations);
        model.logistic[static_cast<std::size_t>(c)] = std::move(fit);
    });
    return model;
}

OvrModel train_tree_ovr(const Eigen::MatrixXd& x, const LabelMatrix& y,
                        const std::optional<std::vector<BinaryWeights>>& class_weights, Exec exec) {
    const auto weights = checked_weights(x, y, class_weights);
    auto model = empty_model(ModelKind::Tree, x, y);
    model.trees.resize(static_cast<std::size_t>(y.classes()));
    std::vector<int> rows(static_cast<std::size_t>(x.rows()));
    std::iota(rows.begin(), rows.end(), 0);
    parallel_map(static_cast<int>(y.classes()), exec, [&](int c) {
        const Eigen::VectorXi yc = y.values.col(c);
        model.trees[static_cast<std::size_t>(c)] = {fit_tree(x, yc, per_sample(yc, weights[static_cast<std::size_t>(c)]), rows)};
    });
    return model;
}

OvrModel train_forest_ovr(const Eigen::MatrixXd& x, const LabelMatrix& y, const ForestOptions& opts, Exec exec) {
    if (opts.n_trees < 1) throw ParameterError("forest needs at least one tree");
    const auto weights = checked_weights(x, y, opts.class_weights);
    auto model = empty_model(ModelKind::Forest, x, y);
    const int n_classes = static_cast<int>(y.classes());
    const int max_features =
        opts.max_features > 0 ? opts.max_features : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(x.cols())))));
    model.trees.assign(static_cast<std::size_t>(n_classes), std::vector<DecisionTree>(static_cast<std::size_t>(opts.n_trees)));
    std::vector<Eigen::VectorXi> ys;
    std::vector<Eigen::VectorXd> ss;
    for (int c = 0; c < n_classes; ++c) {
        ys.push_back(y.values.col(c));
        ss.push_back(per_sample(ys.back(), weights[static_cast<std::size_t>(c)]));
    }
    const int n_rows = static_cast<int>(x.rows());
    parallel_map(n_classes * opts.n_trees, exec, [&](int job) {
        const int c = job / opts.n_trees, t = job % opts.n_trees;
        const std::uint64_t tree_seed = derive_seed(opts.seed, "forest.tree", static_cast<std::uint64_t>(job));
        std::vector<int> rows(static_cast<std::size_t>(n_rows));
        if (opts.bootstrap) {
            auto rng = make_rng(tree_seed, "forest.bootstrap");
            std::uniform_int_distribution<int> pick(0, n_rows - 1);
            for (auto& r : rows) r = pick(rng);
        } else {
            std::iota(rows.begin(), rows.end(), 0);
        }
        model.trees[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)] =
            fit_tree(x, ys[static_cast<std::size_t>(c)], ss[static_cast<std::size_t>(c)], rows, {max_features, tree_seed});
    });
    return model;
}

Eigen::MatrixXd predict_scores(const OvrModel& model, const Eigen::MatrixXd& x) {
    if (x.cols() != model.n_features)
        throw ParameterError("feature count " + std::to_string(x.cols()) + " does not match the model's " +
                             std::to_string(model.n_features));
    const int c_count = model.classes();
    Eigen::MatrixXd scores(x.rows(), c_count);
    // row-major copy so each sample's features are contiguous for tree traversal
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xr = x;
    for (int c = 0; c < c_count; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        for (Eigen::Index j = 0; j < x.rows(); ++j) {
            const double* row = xr.row(j).data();
            double s = 0;
            switch (model.kind) {
            case ModelKind::Logistic:
                s = sigmoid(model.logistic[cu].weights.dot(x.row(j).transpose()) + model.logistic[cu].intercept);
                break;
            case ModelKind::Tree: s = model.trees[cu].front().predict(row); break;
            case ModelKind::Forest: {
                int votes = 0;
                for (const auto& tree : model.trees[cu]) votes += tree.predict(row) >= 0.5 ? 1 : 0;
                s = static_cast<double>(votes) / static_cast<double>(model.trees[cu].size());
                break;
            }
            }
            scores(j, c) = s;
        }
    }
    return scores;
}

// ---------------------------------------------------------------------------------------

namespace {

constexpr std::string_view kOvrMagic = "OVR1";
constexpr std::uint32_t kOvrVersion = 1;

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

void put_tree(ByteWriter& w, const DecisionTree& tree) {
    w.put_u32(static_cast<std::uint32_t>(tree.nodes.size()));
    for (const auto& n : tree.nodes) {
        w.put_u32(static_cast<std::uint32_t>(n.feature));
        w.put_f64(n.threshold);
        w.put_u32(static_cast<std::uint32_t>(n.left));
        w.put_u32(static_cast<std::uint32_t>(n.right));
        w.put_f64(n.value);
    }
}

DecisionTree get_tree(ByteReader& r, int n_features, const std::string& source) {
    DecisionTree tree;
    const auto count = r.get_u32();
    if (count == 0 || count > r.remaining() / 28) throw IoError(source + ": corrupt tree node count");
    tree.nodes.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto& n = tree.nodes[i];
        n.feature = static_cast<std::int32_t>(r.get_u32());
        n.threshold = r.get_f64();
        n.left = static_cast<std::int32_t>(r.get_u32());
        n.right = static_cast<std::int32_t>(r.get_u32());
        n.value = r.get_f64();
        if (n.feature >= n_features) throw IoError(source + ": tree references an unknown feature");
        if (n.feature >= 0) {
            const auto lim = static_cast<std::int64_t>(count);
            if (n.left <= static_cast<int>(i) || n.right <= static_cast<int>(i) || n.left >= lim || n.right >= lim)
                throw IoError(source + ": tree has invalid child links");
        }
    }
    return tree;
}

} // namespace

void write_ovr_model(const std::filesystem::path& path, const OvrModel& model, const std::string& hyperparams_json) {
    ByteWriter w;
    w.put_bytes(kOvrMagic);
    w.put_u32(kOvrVersion);
    w.put_u32(static_cast<std::uint32_t>(model.kind));
    w.put_u32(static_cast<std::uint32_t>(model.classes()));
    w.put_u32(static_cast<std::uint32_t>(model.n_features));
    for (double t : model.thresholds) w.put_f64(t);
    for (int c = 0; c < model.classes(); ++c) {
        const auto cu = static_cast<std::size_t>(c);
        if (model.kind == ModelKind::Logistic) {
            for (Eigen::Index k = 0; k < model.n_features; ++k) w.put_f64(model.logistic[cu].weights(k));
            w.put_f64(model.logistic[cu].intercept);
        } else {
            w.put_u32(static_cast<std::uint32_t>(model.trees[cu].size()));
            for (const auto& tree : model.trees[cu]) put_tree(w, tree);
        }
    }
    nlohmann::ordered_json side;
    side["format"] = "OVR1";
    side["version"] = kOvrVersion;
    side["kind"] = to_string(model.kind);
    side["class_names"] = model.class_names;
    side["n_features"] = model.n_features;
    side["thresholds"] = model.thresholds;
    side["hyperparameters"] = hyperparams_json.empty() ? nlohmann::ordered_json::object()
                                                       : nlohmann::ordered_json::parse(hyperparams_json);
    write_file_atomic(path, w.buffer());
    write_file_atomic(sidecar_path(path), side.dump(2) + "\n");
}

OvrModel read_ovr_model(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const std::string source = path.string();
    ByteReader r(bytes, source);
    if (r.get_bytes(4) != kOvrMagic) throw IoError(source + ": not a model file (bad magic)");
    const auto version = r.get_u32();
    if (version != kOvrVersion) throw IoError(source + ": unsupported model version " + std::to_string(version));
    OvrModel m;
    const auto kind = r.get_u32();
    if (kind < 1 || kind > 3) throw IoError(source + ": unknown model kind");
    m.kind = static_cast<ModelKind>(kind);
    const auto classes = r.get_u32();
    m.n_features = static_cast<int>(r.get_u32());
    if (classes == 0 || m.n_features <= 0) throw IoError(source + ": model header has no classes or features");
    for (std::uint32_t c = 0; c < classes; ++c) m.thresholds.push_back(r.get_f64());
    for (std::uint32_t c = 0; c < classes; ++c) {
        if (m.kind == ModelKind::Logistic) {
            LogisticBinary lb;
            lb.weights.resize(m.n_features);
            for (int k = 0; k < m.n_features; ++k) lb.weights(k) = r.get_f64();
            lb.intercept = r.get_f64();
            lb.converged = true;
            m.logistic.push_back(std::move(lb));
        } else {
            const auto n_trees = r.get_u32();
            if (n_trees == 0) throw IoError(source + ": class without trees");
            std::vector<DecisionTree> trees;
            for (std::uint32_t t = 0; t < n_trees; ++t) trees.push_back(get_tree(r, m.n_features, source));
            m.trees.push_back(std::move(trees));
        }
    }
    if (r.remaining() != 0) throw IoError(source + ": trailing bytes after model payload");

    const auto side_path = sidecar_path(path);
    try {
        const auto side = nlohmann::json::parse(read_file_text(side_path));
        m.class_names = side.at("class_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(side_path.string() + ": malformed model sidecar: " + e.what());
    }
    if (m.class_names.size() != classes) throw IoError(side_path.string() + ": class name count does not match model");
    return m;
}

} // namespace roadsonar
