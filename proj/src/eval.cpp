#include "roadsonar/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "roadsonar/error.hpp"
#include "roadsonar/rng.hpp"

namespace roadsonar {

std::vector<JoinedPair> sync_join(std::span<const double> ref, std::span<const double> other, double tol) {
    if (!(tol >= 0)) throw ParameterError("sync tolerance must be nonnegative");
    auto check_sorted = [](std::span<const double> s, const char* name) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!std::isfinite(s[i])) throw ParameterError(std::string(name) + " stream has a non-finite timestamp");
            if (i > 0 && s[i] < s[i - 1]) throw ParameterError(std::string(name) + " stream is not sorted ascending");
        }
    };
    check_sorted(ref, "reference");
    check_sorted(other, "other");
    std::vector<JoinedPair> out;
    if (other.empty()) {
        spdlog::warn("sync_join: the other stream is empty, nothing to pair");
        return out;
    }
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const auto it = std::lower_bound(other.begin(), other.end(), ref[i]);
        std::size_t best;
        if (it == other.end()) {
            best = other.size() - 1;
        } else if (it == other.begin()) {
            best = 0;
        } else {
            const std::size_t after = static_cast<std::size_t>(it - other.begin());
            const double d_before = ref[i] - other[after - 1];
            const double d_after = other[after] - ref[i];
            best = d_before <= d_after ? after - 1 : after;
        }
        const double dt = other[best] - ref[i];
        if (std::abs(dt) <= tol) out.push_back({i, best, dt});
    }
    return out;
}

std::vector<std::string> merge_labels(std::span<const std::string> labels) {
    std::vector<std::string> out;
    for (const auto& l : labels) {
        const auto sep = l.find(" - ");
        std::string merged = sep == std::string::npos ? l : l.substr(sep + 3);
        if (std::find(out.begin(), out.end(), merged) == out.end()) out.push_back(std::move(merged));
    }
    return out;
}

LabelMatrix label_matrix(const DatasetManifest& manifest, const std::vector<std::string>& class_names) {
    LabelMatrix y;
    y.class_names = class_names;
    y.values = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(manifest.entries.size()),
                                     static_cast<Eigen::Index>(class_names.size()));
    for (std::size_t r = 0; r < manifest.entries.size(); ++r) {
        for (const auto& l : merge_labels(manifest.entries[r].labels)) {
            const auto it = std::find(class_names.begin(), class_names.end(), l);
            if (it != class_names.end()) y.values(static_cast<Eigen::Index>(r), it - class_names.begin()) = 1;
        }
    }
    return y;
}

RareClassFilter filter_rare_classes(const LabelMatrix& labels, int min_count) {
    labels.validate();
    RareClassFilter out;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index c = 0; c < labels.classes(); ++c) {
        const int count = labels.values.col(c).sum();
        if (count < min_count) {
            out.removed.push_back(labels.class_names[static_cast<std::size_t>(c)]);
        } else {
            keep.push_back(c);
            out.counts.push_back(count);
        }
    }
    out.labels.values.resize(labels.samples(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        out.labels.values.col(static_cast<Eigen::Index>(k)) = labels.values.col(keep[k]);
        out.labels.class_names.push_back(labels.class_names[static_cast<std::size_t>(keep[k])]);
    }
    return out;
}

std::uint64_t stratification_key(std::span<const int> row) {
    if (row.size() > 62) throw ParameterError("stratification key supports at most 62 classes");
    std::uint64_t key = 0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (row[i] != 0 && row[i] != 1) throw ParameterError("label rows must be binary");
        key |= static_cast<std::uint64_t>(row[i]) << i;
    }
    return key;
}

std::vector<std::uint64_t> stratification_keys(const Eigen::MatrixXi& y) {
    std::vector<std::uint64_t> keys(static_cast<std::size_t>(y.rows()));
    std::vector<int> row(static_cast<std::size_t>(y.cols()));
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        for (Eigen::Index c = 0; c < y.cols(); ++c) row[static_cast<std::size_t>(c)] = y(r, c);
        keys[static_cast<std::size_t>(r)] = stratification_key(row);
    }
    return keys;
}

void FoldPlan::validate() const {
    std::vector<char> in_test(sample_count, 0);
    for (auto i : test) {
        if (i >= sample_count) throw ParameterError("test index out of range");
        if (in_test[i]) throw ParameterError("test index repeated");
        in_test[i] = 1;
    }
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<char> seen(sample_count, 0);
        auto mark = [&](const std::vector<std::size_t>& idx, const char* what) {
            for (auto i : idx) {
                if (i >= sample_count) throw ParameterError(std::string(what) + " index out of range");
                if (in_test[i]) throw ParameterError("fold " + std::to_string(f) + " " + what + " overlaps the test set");
                if (seen[i]) throw ParameterError("fold " + std::to_string(f) + " repeats sample " + std::to_string(i));
                seen[i] = 1;
            }
        };
        mark(folds[f].train, "train");
        mark(folds[f].validation, "validation");
        for (std::size_t i = 0; i < sample_count; ++i)
            if (!in_test[i] && !seen[i]) throw ParameterError("fold " + std::to_string(f) + " misses sample " + std::to_string(i));
    }
}

FoldPlan split_dataset(std::span<const std::uint64_t> keys, std::uint64_t seed, int n_folds, double test_fraction) {
    if (n_folds < 2) throw ParameterError("need at least two folds");
    if (!(test_fraction >= 0 && test_fraction < 1)) throw ParameterError("test fraction must lie in [0, 1)");
    const std::size_t n = keys.size();
    if (n < 2 * static_cast<std::size_t>(n_folds))
        throw ParameterError("dataset of " + std::to_string(n) + " samples is too small for " + std::to_string(n_folds) +
                             " folds");
    FoldPlan plan;
    plan.seed = seed;
    plan.sample_count = n;

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    auto rng = make_rng(seed, "split.test");
    std::shuffle(all.begin(), all.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    plan.test.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::sort(plan.test.begin(), plan.test.end());
    if (n - n_test < static_cast<std::size_t>(n_folds)) throw ParameterError("too few non-test samples for the folds");

    std::map<std::uint64_t, std::vector<std::size_t>> by_key;
    for (std::size_t k = n_test; k < n; ++k) by_key[keys[all[k]]].push_back(all[k]);
    std::vector<std::vector<std::size_t>> val(static_cast<std::size_t>(n_folds));
    auto fold_rng = make_rng(seed, "split.folds");
    std::size_t next = 0; // round-robin position carried across keys keeps fold sizes balanced
    for (auto& [key, members] : by_key) {
        std::sort(members.begin(), members.end());
        std::shuffle(members.begin(), members.end(), fold_rng);
        for (auto i : members) {
            val[next].push_back(i);
            next = (next + 1) % static_cast<std::size_t>(n_folds);
        }
    }
    std::vector<char> is_test(n, 0);
    for (auto i : plan.test) is_test[i] = 1;
    for (int f = 0; f < n_folds; ++f) {
        Fold fold;
        fold.validation = std::move(val[static_cast<std::size_t>(f)]);
        std::sort(fold.validation.begin(), fold.validation.end());
        std::vector<char> in_val(n, 0);
        for (auto i : fold.validation) in_val[i] = 1;
        for (std::size_t i = 0; i < n; ++i)
            if (!is_test[i] && !in_val[i]) fold.train.push_back(i);
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

FoldPlan split_dataset(const LabelMatrix& labels, std::uint64_t seed, int n_folds, double test_fraction) {
    labels.validate();
    const auto keys = stratification_keys(labels.values);
    return split_dataset(keys, seed, n_folds, test_fraction);
}

std::string encode_fold_plan(const FoldPlan& plan) {
    nlohmann::ordered_json doc;
    doc["seed"] = plan.seed;
    doc["sample_count"] = plan.sample_count;
    doc["test"] = plan.test;
    doc["folds"] = nlohmann::ordered_json::array();
    for (const auto& f : plan.folds) doc["folds"].push_back({{"train", f.train}, {"validation", f.validation}});
    return doc.dump() + "\n";
}

FoldPlan parse_fold_plan(const std::string& json, const std::string& source) {
    FoldPlan plan;
    try {
        const auto doc = nlohmann::json::parse(json);
        plan.seed = doc.at("seed").get<std::uint64_t>();
        plan.sample_count = doc.at("sample_count").get<std::size_t>();
        plan.test = doc.at("test").get<std::vector<std::size_t>>();
        for (const auto& f : doc.at("folds"))
            plan.folds.push_back({f.at("train").get<std::vector<std::size_t>>(),
                                  f.at("validation").get<std::vector<std::size_t>>()});
    } catch (const nlohmann::json::exception& e) {
        throw IoError(source + ": malformed fold plan: " + e.what());
    }
    try {
        plan.validate();
    } catch (const ParameterError& e) {
        throw IoError(source + ": invalid fold plan: " + e.what());
    }
    return plan;
}

// ---------------------------------------------------------------------------------------

namespace {

void check_pair(const Eigen::MatrixXi& a, const Eigen::MatrixXi& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ParameterError("truth and prediction shapes differ");
    if ((a.array() != 0 && a.array() != 1).any() || (b.array() != 0 && b.array() != 1).any())
        throw ParameterError("labels and predictions must be binary");
}

ClassMetric weighted_metric(const Eigen::MatrixXi& t, const Eigen::MatrixXi& p, double (*metric)(const Confusion&)) {
    check_pair(t, p);
    ClassMetric m;
    double num = 0;
    long den = 0;
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
        const auto cm = confusion(t, p, c);
        const double v = metric(cm);
        const int support = static_cast<int>(cm.tp + cm.fn);
        m.per_class.push_back(v);
        m.support.push_back(support);
        num += v * support;
        den += support;
    }
    m.weighted = den > 0 ? num / static_cast<double>(den) : 0.0;
    return m;
}

double f1_of(const Confusion& c) {
    const double denom = 2.0 * c.tp + c.fp + c.fn;
    return denom > 0 ? 2.0 * c.tp / denom : 0.0;
}

double kappa_of(const Confusion& c) {
    const double n = static_cast<double>(c.tp + c.fp + c.fn + c.tn);
    if (n == 0) return 0.0;
    const double po = (c.tp + c.tn) / n;
    const double pe = ((c.tp + c.fn) / n) * ((c.tp + c.fp) / n) + ((c.tn + c.fp) / n) * ((c.tn + c.fn) / n);
    if (pe >= 1.0) return 0.0;
    return (po - pe) / (1.0 - pe);
}

} // namespace

Confusion confusion(const Eigen::MatrixXi& y_true, const Eigen::MatrixXi& y_pred, Eigen::Index cls) {
    Confusion c;
    for (Eigen::Index r = 0; r < y_true.rows(); ++r) {
        const int t = y_true(r, cls), p = y_pred(r, cls);
        if (t && p) ++c.tp;
        else if (!t && p) ++c.fp;
        else if (t && !p) ++c.fn;
        else ++c.tn;
    }
    return c;
}

ClassMetric f1_weighted(const Eigen::MatrixXi& y_true, const Eigen::MatrixXi& y_pred) {
    return weighted_metric(y_true, y_pred, &f1_of);
}

ClassMetric cohens_kappa_weighted(const Eigen::MatrixXi& y_true, const Eigen::MatrixXi& y_pred) {
    return weighted_metric(y_true, y_pred, &kappa_of);
}

YoudenResult youden_thresholds(const Eigen::MatrixXd& scores, const Eigen::MatrixXi& y_true) {
    if (scores.rows() != y_true.rows() || scores.cols() != y_true.cols())
        throw ParameterError("score and label shapes differ");
    YoudenResult out;
    const Eigen::Index n = scores.rows();
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
        const long pos = y_true.col(c).sum();
        const long neg = static_cast<long>(n) - pos;
        if (pos == 0 || neg == 0)
            throw ParameterError("class " + std::to_string(c) + " needs positives and negatives in the validation set");
        std::vector<std::pair<double, int>> s(static_cast<std::size_t>(n));
        for (Eigen::Index r = 0; r < n; ++r) {
            if (!std::isfinite(scores(r, c))) throw ParameterError("non-finite score");
            s[static_cast<std::size_t>(r)] = {scores(r, c), y_true(r, c)};
        }
        std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        // Sweep from the highest threshold down. Start with the candidate above every score.
        double best_t = s.front().first + 1.0;
        double best_j = 0.0;
        long tp = 0, fp = 0;
        for (std::size_t k = 0; k < s.size(); ++k) {
            if (s[k].second) ++tp;
            else ++fp;
            if (k + 1 < s.size() && s[k + 1].first == s[k].first) continue;
            if (k + 1 == s.size()) break; // no midpoint below the lowest score
            const double t = s[k + 1].first + (s[k].first - s[k + 1].first) / 2.0;
            const double j = static_cast<double>(tp) / pos - static_cast<double>(fp) / neg;
            if (j > best_j) { // strict: the higher threshold wins ties
                best_j = j;
                best_t = t;
            }
        }
        out.thresholds.push_back(best_t);
        out.j.push_back(best_j);
    }
    return out;
}

Eigen::MatrixXi apply_thresholds(const Eigen::MatrixXd& scores, std::span<const double> thresholds) {
    if (static_cast<Eigen::Index>(thresholds.size()) != scores.cols())
        throw ParameterError("threshold count does not match class count");
    Eigen::MatrixXi out(scores.rows(), scores.cols());
    for (Eigen::Index c = 0; c < scores.cols(); ++c)
        for (Eigen::Index r = 0; r < scores.rows(); ++r) out(r, c) = scores(r, c) >= thresholds[static_cast<std::size_t>(c)] ? 1 : 0;
    return out;
}

MetricsReport evaluate(const Eigen::MatrixXi& y_true, const Eigen::MatrixXi& y_pred, std::vector<std::string> class_names,
                       std::vector<double> thresholds) {
    if (static_cast<Eigen::Index>(class_names.size()) != y_true.cols())
        throw ParameterError("class name count does not match label columns");
    MetricsReport r;
    r.class_names = std::move(class_names);
    r.f1 = f1_weighted(y_true, y_pred);
    r.kappa = cohens_kappa_weighted(y_true, y_pred);
    r.thresholds = std::move(thresholds);
    return r;
}

std::string encode_metrics_json(const MetricsReport& report) {
    nlohmann::ordered_json doc;
    doc["weighted_f1"] = report.f1.weighted;
    doc["weighted_kappa"] = report.kappa.weighted;
    doc["classes"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < report.class_names.size(); ++c) {
        nlohmann::ordered_json cls;
        cls["name"] = report.class_names[c];
        cls["support"] = report.f1.support[c];
        cls["f1"] = report.f1.per_class[c];
        cls["kappa"] = report.kappa.per_class[c];
        if (c < report.thresholds.size()) cls["threshold"] = report.thresholds[c];
        doc["classes"].push_back(std::move(cls));
    }
    return doc.dump(2) + "\n";
}

AggregateRow aggregate(const std::string& model, std::span<const SplitScores> runs) {
    if (runs.empty()) throw ParameterError("nothing to aggregate");
    AggregateRow row;
    row.model = model;
    row.runs = runs.size();
    const double n = static_cast<double>(runs.size());
    auto stat = [&](double SplitScores::*field, double& mean, double& sd) {
        double s = 0;
        for (const auto& r : runs) s += r.*field;
        mean = s / n;
        double v = 0;
        for (const auto& r : runs) v += (r.*field - mean) * (r.*field - mean);
        sd = std::sqrt(v / n);
    };
    for (auto f : {&SplitScores::test_kappa, &SplitScores::val_kappa, &SplitScores::train_kappa, &SplitScores::test_f1,
                   &SplitScores::val_f1, &SplitScores::train_f1})
        stat(f, row.mean.*f, row.stddev.*f);
    return row;
}

std::string format_results_table(std::span<const AggregateRow> rows) {
    const std::vector<std::string> header{"Model", "Test κ", "Validation κ", "Training κ",
                                          "Test F1", "Validation F1", "Training F1"};
    std::vector<std::vector<std::string>> cells;
    cells.push_back(header);
    auto cell = [](double mu, double sd) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.1f%%±%.1f%%", 100 * mu, 100 * sd);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        cells.push_back({r.model, cell(r.mean.test_kappa, r.stddev.test_kappa), cell(r.mean.val_kappa, r.stddev.val_kappa),
                         cell(r.mean.train_kappa, r.stddev.train_kappa), cell(r.mean.test_f1, r.stddev.test_f1),
                         cell(r.mean.val_f1, r.stddev.val_f1), cell(r.mean.train_f1, r.stddev.train_f1)});
    }
    // display width: count code points, not bytes (κ and ± are multi-byte)
    auto width = [](const std::string& s) {
        return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char ch) { return (ch & 0xC0) != 0x80; }));
    };
    std::vector<std::size_t> w(header.size(), 0);
    for (const auto& row : cells)
        for (std::size_t c = 0; c < row.size(); ++c) w[c] = std::max(w[c], width(row[c]));
    std::string out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            if (c) out += " | ";
            out += cells[r][c] + std::string(w[c] - width(cells[r][c]), ' ');
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += '\n';
        if (r == 0) {
            for (std::size_t c = 0; c < w.size(); ++c) {
                if (c) out += "-|-";
                out += std::string(w[c], '-');
            }
            out += '\n';
        }
    }
    return out;
}

} // namespace roadsonar
