#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "roadsonar/error.hpp"
#include "roadsonar/fileutil.hpp"
#include "roadsonar/ml.hpp"
#include "test_util.hpp"

using namespace roadsonar;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

// Two blobs per class column: class k is positive when feature k exceeds a threshold.
LabelMatrix threshold_labels(const Eigen::MatrixXd& x, int classes) {
    LabelMatrix y;
    y.values.resize(x.rows(), classes);
    for (int c = 0; c < classes; ++c) {
        y.class_names.push_back("c" + std::to_string(c));
        for (Eigen::Index j = 0; j < x.rows(); ++j) y.values(j, c) = x(j, c) > 0.2 ? 1 : 0;
    }
    return y;
}

std::vector<int> all_rows(Eigen::Index n) {
    std::vector<int> r(static_cast<std::size_t>(n));
    std::iota(r.begin(), r.end(), 0);
    return r;
}

} // namespace

TEST_CASE("balanced class weights") {
    Eigen::MatrixXi y(4, 2);
    y << 1, 0, 1, 1, 1, 0, 0, 0;
    const auto w = balanced_class_weights(y);
    CHECK(w[0] == doctest::Approx(4.0 / (2 * 3)));
    CHECK(w[1] == doctest::Approx(2.0));

    // duplicating every sample leaves the weights unchanged
    Eigen::MatrixXi yy(8, 2);
    yy << y, y;
    const auto w2 = balanced_class_weights(yy);
    CHECK(w2[0] == doctest::Approx(w[0]).epsilon(1e-12));
    CHECK(w2[1] == doctest::Approx(w[1]).epsilon(1e-12));

    // per-subproblem weights are the two-column case
    const auto ovr = ovr_balanced_weights(y);
    CHECK(ovr[0][0] == doctest::Approx(4.0 / (2 * 1)));
    CHECK(ovr[0][1] == doctest::Approx(4.0 / (2 * 3)));
    CHECK(ovr[1][0] == doctest::Approx(4.0 / (2 * 3)));
    CHECK(ovr[1][1] == doctest::Approx(2.0));

    // uniform one-hot labels are already balanced; sum_i w_i * count_i = S
    Eigen::MatrixXi onehot = Eigen::MatrixXi::Zero(9, 3);
    for (int j = 0; j < 9; ++j) onehot(j, j % 3) = 1;
    for (double v : balanced_class_weights(onehot)) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
    double total = 0;
    for (int c = 0; c < 2; ++c) total += w[static_cast<std::size_t>(c)] * y.col(c).sum();
    CHECK(std::abs(total - 4.0) <= 1e-12);

    Eigen::MatrixXi empty_class(3, 2);
    empty_class << 1, 0, 1, 0, 0, 0;
    CHECK_THROWS_AS(balanced_class_weights(empty_class), ParameterError);
    Eigen::MatrixXi all_pos = Eigen::MatrixXi::Ones(3, 1);
    CHECK_THROWS_AS(ovr_balanced_weights(all_pos), ParameterError);
}

TEST_CASE("RBF gamma") {
    Eigen::MatrixXd x(2, 2);
    x << 0, 2, 0, 2; // entries {0,2,0,2}: variance 1
    CHECK(rbf_gamma(x) == doctest::Approx(0.5));
    Eigen::MatrixXd wide(2, 256);
    wide.row(0).setConstant(std::sqrt(0.5));
    wide.row(1).setConstant(-std::sqrt(0.5));
    CHECK(rbf_gamma(wide) == doctest::Approx(0.0078125).epsilon(1e-12));
    const auto g = gaussian(30, 5, 3);
    const double mean = g.mean();
    const double var = (g.array() - mean).square().mean();
    CHECK(rbf_gamma(g) == doctest::Approx(1.0 / (5 * var)).epsilon(1e-12));
    CHECK(rbf_gamma(3.0 * g) == doctest::Approx(rbf_gamma(g) / 9.0).epsilon(1e-12));
    CHECK_THROWS_AS(rbf_gamma(Eigen::MatrixXd::Constant(3, 3, 1.0)), DegenerateInputError);
}

TEST_CASE("compound scaling") {
    const auto base = resolve_cnn_scaling({1.2, 1.1, 1.15, 0.0});
    CHECK(base.depth == 3);
    CHECK(base.width == 16);
    CHECK(base.downsample_interval == 1);

    const auto r = resolve_cnn_scaling({});
    CHECK(r.depth_raw == doctest::Approx(4.32));
    CHECK(r.width_raw == doctest::Approx(19.36));
    CHECK(r.resolution_raw == doctest::Approx(1.3225));
    CHECK(r.depth == 4);
    CHECK(r.width == 19);
    CHECK(r.downsample_interval == 1);
    CHECK(r.residual_blocks == 3);

    ScalingResult prev = base;
    for (double phi = 0.25; phi <= 8.0; phi += 0.25) {
        ScalingSpec s;
        s.phi = phi;
        const auto cur = resolve_cnn_scaling(s);
        CHECK(cur.depth >= prev.depth);
        CHECK(cur.width >= prev.width);
        CHECK(cur.downsample_interval >= prev.downsample_interval);
        prev = cur;
    }
    ScalingSpec bad;
    bad.alpha = 0.9;
    CHECK_THROWS_AS(resolve_cnn_scaling(bad), ParameterError);
    bad = {};
    bad.phi = -1;
    CHECK_THROWS_AS(resolve_cnn_scaling(bad), ParameterError);
}

TEST_CASE("logistic regression") {
    const auto x = gaussian(200, 3, 5);
    Eigen::VectorXi y(200);
    for (int j = 0; j < 200; ++j) y(j) = x(j, 0) + 0.5 * x(j, 1) > 0 ? 1 : 0;
    const Eigen::VectorXd s = Eigen::VectorXd::Ones(200);

    LogisticOptions opts;
    opts.c_reg = 10.0;
    const auto m = fit_logistic(x, y, s, opts);
    CHECK(m.converged);
    int correct = 0;
    for (int j = 0; j < 200; ++j) correct += ((x.row(j).dot(m.weights) + m.intercept > 0) == (y(j) == 1));
    CHECK(correct >= 196);

    // the optimum beats the zero model and small perturbations of itself
    LogisticBinary zero{Eigen::VectorXd::Zero(3), 0.0};
    const double f = logistic_objective(m, x, y, s, opts.c_reg);
    CHECK(f <= logistic_objective(zero, x, y, s, opts.c_reg));
    for (int k = 0; k < 3; ++k) {
        LogisticBinary p = m;
        p.weights(k) += 1e-3;
        CHECK(f <= logistic_objective(p, x, y, s, opts.c_reg));
        p.weights(k) -= 2e-3;
        CHECK(f <= logistic_objective(p, x, y, s, opts.c_reg));
    }

    // stronger regularization shrinks the weights
    double prev = 1e300;
    for (double c : {100.0, 1.0, 0.01, 1e-4}) {
        opts.c_reg = c;
        const double n = fit_logistic(x, y, s, opts).weights.norm();
        CHECK(n < prev);
        prev = n;
    }

    // scaling the sample weights by k is the same as scaling C by k
    opts.c_reg = 0.5;
    const auto a = fit_logistic(x, y, Eigen::VectorXd::Constant(200, 3.0), opts);
    opts.c_reg = 1.5;
    const auto b = fit_logistic(x, y, s, opts);
    CHECK((a.weights - b.weights).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(a.intercept == doctest::Approx(b.intercept).epsilon(1e-5));

    opts.c_reg = 0;
    CHECK_THROWS_AS(fit_logistic(x, y, s, opts), ParameterError);
}

TEST_CASE("decision tree") {
    const auto x = gaussian(120, 2, 7);
    const Eigen::VectorXd s = Eigen::VectorXd::Ones(120);
    const auto rows = all_rows(120);

    const DecisionTree leaf = fit_tree(x, Eigen::VectorXi::Ones(120), s, rows);
    CHECK(leaf.nodes.size() == 1);
    CHECK(leaf.predict(x.row(0).data()) == 1.0);

    // XOR of the two signs needs depth two and is fit exactly
    Eigen::VectorXi y(120);
    for (int j = 0; j < 120; ++j) y(j) = (x(j, 0) > 0) != (x(j, 1) > 0) ? 1 : 0;
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xr = x;
    const DecisionTree t = fit_tree(x, y, s, rows);
    CHECK(t.depth() >= 2);
    for (int j = 0; j < 120; ++j) CHECK(t.predict(xr.row(j).data()) == static_cast<double>(y(j)));
    for (const auto& n : t.nodes)
        if (n.feature < 0) CHECK((n.value == 0.0 || n.value == 1.0));

    std::vector<double> q{0.5, 0.5};
    CHECK(t.predict(q.data()) == 0.0);
    q = {-0.5, 0.5};
    CHECK(t.predict(q.data()) == 1.0);
}

TEST_CASE("one-vs-rest models") {
    const auto x = gaussian(150, 4, 9);
    const auto y = threshold_labels(x, 3);

    ForestOptions single;
    single.n_trees = 1;
    single.bootstrap = false;
    single.max_features = 4;
    const auto f1 = train_forest_ovr(x, y, single);
    const auto t1 = train_tree_ovr(x, y);
    const auto x2 = gaussian(40, 4, 10);
    CHECK(predict_scores(f1, x2) == predict_scores(t1, x2));

    ForestOptions fo;
    fo.n_trees = 25;
    fo.seed = 4;
    const auto fa = train_forest_ovr(x, y, fo, Exec::Serial);
    const auto fb = train_forest_ovr(x, y, fo, Exec::Parallel);
    const Eigen::MatrixXd sa = predict_scores(fa, x2);
    CHECK(sa == predict_scores(fb, x2));
    CHECK((sa.array() >= 0).all());
    CHECK((sa.array() <= 1).all());
    for (Eigen::Index i = 0; i < sa.size(); ++i) {
        const double v = sa.data()[i] * 25;
        CHECK(std::abs(v - std::round(v)) <= 1e-12);
    }
    fo.seed = 5;
    CHECK(predict_scores(train_forest_ovr(x, y, fo), x2) != sa);

    const auto la = train_logreg_ovr(x, y, {}, Exec::Serial);
    const auto lb = train_logreg_ovr(x, y, {}, Exec::Parallel);
    CHECK(predict_scores(la, x2) == predict_scores(lb, x2));
    CHECK(la.thresholds == std::vector<double>(3, 0.5));

    CHECK_THROWS_AS(predict_scores(la, gaussian(3, 5, 1)), ParameterError);
    LabelMatrix bad = y;
    bad.values.col(1).setZero();
    CHECK_THROWS_AS(train_logreg_ovr(x, bad), ParameterError);
    bad = y;
    bad.values(0, 0) = 2;
    CHECK_THROWS_AS(train_tree_ovr(x, bad), ParameterError);
    ForestOptions none;
    none.n_trees = 0;
    CHECK_THROWS_AS(train_forest_ovr(x, y, none), ParameterError);
}

TEST_CASE("model file round trip") {
    TempDir dir("ml");
    const auto x = gaussian(80, 3, 11);
    const auto y = threshold_labels(x, 2);
    ForestOptions fo;
    fo.n_trees = 5;
    for (auto m : {train_logreg_ovr(x, y), train_tree_ovr(x, y), train_forest_ovr(x, y, fo)}) {
        m.thresholds = {0.25, 0.75};
        const auto p = dir / ("m" + to_string(m.kind) + ".ovr");
        write_ovr_model(p, m, R"({"note":"test"})");
        const auto r = read_ovr_model(p);
        CHECK(r.kind == m.kind);
        CHECK(r.class_names == m.class_names);
        CHECK(r.thresholds == m.thresholds);
        CHECK(predict_scores(r, x) == predict_scores(m, x));
    }
    CHECK(parse_model_kind("forest") == ModelKind::Forest);
    CHECK(parse_model_kind("logreg") == ModelKind::Logistic);
    CHECK_FALSE(parse_model_kind("svm").has_value());

    write_file_atomic(dir / "bad.ovr", std::string_view("OVR0xxxxxxxx"));
    CHECK_THROWS_AS(read_ovr_model(dir / "bad.ovr"), IoError);
    const auto good = read_file_text(dir / ("m" + to_string(ModelKind::Tree) + ".ovr"));
    write_file_atomic(dir / "trunc.ovr", std::string_view(good).substr(0, good.size() - 3));
    std::filesystem::copy_file(dir / ("m" + to_string(ModelKind::Tree) + ".ovr.json"), dir / "trunc.ovr.json");
    CHECK_THROWS_AS(read_ovr_model(dir / "trunc.ovr"), IoError);
}
