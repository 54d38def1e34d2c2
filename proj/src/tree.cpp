#include <algorithm>
#include <numeric>

#include "roadsonar/error.hpp"
#include "roadsonar/ml.hpp"
#include "roadsonar/rng.hpp"

namespace roadsonar {

double DecisionTree::predict(const double* row) const {
    if (nodes.empty()) throw ParameterError("empty decision tree");
    int i = 0;
    while (nodes[i].feature >= 0) i = row[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
}

int DecisionTree::depth() const {
    if (nodes.empty()) return 0;
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    // children are always appended after their parent
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        best = std::max(best, d[i]);
        if (nodes[i].feature >= 0) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
    }
    return best;
}

std::size_t DecisionTree::leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature < 0; }));
}

namespace {

struct Split {
    int feature = -1;
    double threshold = 0;
    double impurity = 0; // weighted child impurity, lower is better
};

double gini_mass(double w_pos, double w_total) {
    // total weight times Gini impurity: W * (1 - p^2 - q^2) = 2 * w_pos * w_neg / W
    if (w_total <= 0) return 0;
    return 2.0 * w_pos * (w_total - w_pos) / w_total;
}

struct Builder {
    const Eigen::MatrixXd& x;
    const Eigen::VectorXi& y;
    const Eigen::VectorXd& w;
    int max_features;
    Rng rng;
    std::vector<int> order; // scratch for sorting

    // Best split of `idx` on feature f; returns false when the feature is constant on idx.
    bool best_on_feature(std::span<int> idx, int f, double w_total, double w_pos, Split& best) {
        order.assign(idx.begin(), idx.end());
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return x(a, f) < x(b, f); });
        if (x(order.front(), f) == x(order.back(), f)) return false;
        double lw = 0, lp = 0;
        for (std::size_t k = 0; k + 1 < order.size(); ++k) {
            const int r = order[k];
            lw += w(r);
            if (y(r)) lp += w(r);
            const double a = x(r, f), b = x(order[k + 1], f);
            if (a == b) continue;
            const double imp = gini_mass(lp, lw) + gini_mass(w_pos - lp, w_total - lw);
            // strict improvement only: earlier features and thresholds win ties
            if (best.feature < 0 || imp < best.impurity) {
                double t = a + (b - a) / 2.0;
                if (!(t < b)) t = a;
                best = {f, t, imp};
            }
        }
        return true;
    }
};

} // namespace

DecisionTree fit_tree(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, const Eigen::VectorXd& sample_weight,
                      std::span<const int> rows, const TreeOptions& opts) {
    const int n_features = static_cast<int>(x.cols());
    if (y.size() != x.rows() || sample_weight.size() != x.rows())
        throw ParameterError("tree inputs disagree in sample count");
    if (rows.empty()) throw ParameterError("tree needs at least one training row");
    if (n_features < 1) throw ParameterError("tree needs at least one feature");
    for (int r : rows)
        if (r < 0 || r >= x.rows()) throw ParameterError("tree row index out of range");
    const int max_features = opts.max_features <= 0 ? n_features : std::min(opts.max_features, n_features);

    Builder b{x, y, sample_weight, max_features, make_rng(opts.seed, "tree.features"), {}};
    std::vector<int> idx(rows.begin(), rows.end());
    DecisionTree tree;

    struct Pending {
        int node;
        std::size_t begin, end;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, 0, idx.size()});
    std::vector<int> features(static_cast<std::size_t>(n_features));

    while (!stack.empty()) {
        const Pending p = stack.back();
        stack.pop_back();
        std::span<int> here(idx.data() + p.begin, p.end - p.begin);
        double w_total = 0, w_pos = 0;
        for (int r : here) {
            w_total += sample_weight(r);
            if (y(r)) w_pos += sample_weight(r);
        }
        tree.nodes[p.node].value = w_total > 0 ? w_pos / w_total : 0.0;
        const bool pure = std::all_of(here.begin(), here.end(), [&](int r) { return y(r) == y(here.front()); });
        if (pure) continue;

        // Candidate features: a random draw of max_features, evaluated in ascending index order;
        // if none of them can split, the remaining features are tried in draw order.
        std::iota(features.begin(), features.end(), 0);
        if (max_features < n_features) std::shuffle(features.begin(), features.end(), b.rng);
        std::sort(features.begin(), features.begin() + max_features);
        Split best;
        bool any = false;
        for (int k = 0; k < n_features; ++k) {
            if (k >= max_features && any) break;
            any |= b.best_on_feature(here, features[static_cast<std::size_t>(k)], w_total, w_pos, best);
        }
        if (best.feature < 0) continue; // identical inputs with conflicting labels

        const auto mid = std::stable_partition(here.begin(), here.end(),
                                               [&](int r) { return x(r, best.feature) <= best.threshold; });
        const std::size_t n_left = static_cast<std::size_t>(mid - here.begin());
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& node = tree.nodes[p.node];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = left;
        node.right = left + 1;
        stack.push_back({left + 1, p.begin + n_left, p.end});
        stack.push_back({left, p.begin, p.begin + n_left});
    }
    return tree;
}

} // namespace roadsonar
