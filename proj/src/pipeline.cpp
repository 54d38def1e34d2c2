#include "roadsonar/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <mutex>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "roadsonar/error.hpp"
#include "roadsonar/fileutil.hpp"
#include "roadsonar/rng.hpp"

namespace roadsonar {

Energyscape process_recording(const PdmFrame& frame, const Waveform& templ, const ArrayGeometry& geom,
                              const CfarParams& cfar, Exec exec) {
    frame.validate();
    if (frame.channel_count() != geom.positions.size())
        throw ParameterError("recording has " + std::to_string(frame.channel_count()) + " channels, geometry has " +
                             std::to_string(geom.positions.size()));
    const auto baseband = pdm_decode(frame, templ.sample_rate, exec);
    const auto filtered = matched_filter_channels(baseband, templ, exec);
    const auto scape = build_energyscape(filtered, DirectionList::grid(), geom, exec);
    return cfar_cleanup(scape, cfar, exec);
}

std::filesystem::path scape_path_for(const std::filesystem::path& scape_dir, const std::string& entry_path) {
    auto name = std::filesystem::path(entry_path).filename();
    name.replace_extension(".scape");
    return scape_dir / name;
}

ProcessReport process_dataset(const std::filesystem::path& dataset_dir, const std::filesystem::path& scape_dir,
                              const ArrayGeometry& geom, const ChirpSpec& chirp, const CfarParams& cfar, Exec exec) {
    const auto manifest = read_manifest(dataset_dir / kManifestName);
    std::error_code ec;
    std::filesystem::create_directories(scape_dir, ec);
    if (ec || !std::filesystem::is_directory(scape_dir))
        throw IoError("cannot create output directory " + scape_dir.string() + ": " +
                      (ec ? ec.message() : std::string("not a directory")));
    const auto templ = generate_chirp(chirp);
    ProcessReport report;
    std::mutex mu;
    const long n = static_cast<long>(manifest.entries.size());
    auto one = [&](long i) {
        const auto& entry = manifest.entries[static_cast<std::size_t>(i)];
        try {
            const auto frame = read_pdm_file(dataset_dir / entry.path);
            const auto scape = process_recording(frame, templ, geom, cfar, Exec::Serial);
            write_scape_file(scape_path_for(scape_dir, entry.path), scape);
            std::lock_guard lock(mu);
            ++report.written;
            spdlog::info("[{}/{}] {}", report.written + report.failed.size(), n, entry.path);
        } catch (const std::exception& e) {
            std::lock_guard lock(mu);
            report.failed.push_back(entry.path + ": " + e.what());
            spdlog::warn("skipping {}: {}", entry.path, e.what());
        }
    };
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < n; ++i) one(i);
    } else {
        for (long i = 0; i < n; ++i) one(i);
    }
    std::sort(report.failed.begin(), report.failed.end());
    return report;
}

std::string to_string(Task t) { return t == Task::Material ? "material" : "damage"; }

std::optional<Task> parse_task(std::string_view s) {
    if (s == "material") return Task::Material;
    if (s == "damage") return Task::Damage;
    return std::nullopt;
}

TaskLabels task_labels(const DatasetManifest& manifest, Task task, int min_class_count) {
    std::vector<std::string> all;
    for (const auto& e : manifest.entries) {
        const auto merged = merge_labels(e.labels);
        all.insert(all.end(), merged.begin(), merged.end());
    }
    std::vector<std::string> names;
    for (const auto& n : canonical_class_order(all)) {
        const bool is_material = parse_material(n).has_value();
        const bool is_damage = parse_damage(n).has_value();
        if ((task == Task::Material && is_material) || (task == Task::Damage && is_damage)) names.push_back(n);
    }
    if (names.empty()) throw ParameterError("manifest has no " + to_string(task) + " labels");
    auto filtered = filter_rare_classes(label_matrix(manifest, names), min_class_count);
    for (const auto& r : filtered.removed) spdlog::warn("dropping class '{}': fewer than {} samples", r, min_class_count);
    if (filtered.labels.classes() == 0) throw ParameterError("no class has at least " + std::to_string(min_class_count) + " samples");
    return {std::move(filtered.labels), std::move(filtered.removed)};
}

// ---------------------------------------------------------------------------------------

namespace {

Eigen::MatrixXi take_rows(const Eigen::MatrixXi& m, Eigen::Index begin, Eigen::Index count) {
    return m.middleRows(begin, count);
}

bool has_both(const Eigen::MatrixXi& y) {
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const auto pos = y.col(c).sum();
        if (pos == 0 || pos == y.rows()) return false;
    }
    return true;
}

// Loads scape files in `order`, filling `pooled` row by row after subtracting `mean`.
void pooled_rows(const std::vector<std::filesystem::path>& files, const std::vector<std::size_t>& order,
                 const PipelineModel& model, RowMatrix& pooled, Exec exec) {
    const long n = static_cast<long>(order.size());
    std::exception_ptr err;
    std::mutex mu;
    auto one = [&](long k) {
        try {
            const auto scape = read_scape_file(files[order[static_cast<std::size_t>(k)]]);
            pooled.row(k) = pooled_vector(scape.values, model.mean_scape, model.pool_kernel).transpose();
        } catch (...) {
            std::lock_guard lock(mu);
            if (!err) err = std::current_exception();
        }
    };
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic)
        for (long k = 0; k < n; ++k) one(k);
    } else {
        for (long k = 0; k < n; ++k) one(k);
    }
    if (err) std::rethrow_exception(err);
}

SplitScores score_model(const Eigen::MatrixXd& scores, const Eigen::MatrixXi& y, std::span<const double> thresholds,
                        Eigen::Index n_train, Eigen::Index n_val, Eigen::Index n_test) {
    const auto pred = apply_thresholds(scores, thresholds);
    auto part = [&](Eigen::Index begin, Eigen::Index count, double& kappa, double& f1) {
        const auto t = take_rows(y, begin, count);
        const auto p = take_rows(pred, begin, count);
        kappa = cohens_kappa_weighted(t, p).weighted;
        f1 = f1_weighted(t, p).weighted;
    };
    SplitScores s;
    part(0, n_train, s.train_kappa, s.train_f1);
    part(n_train, n_val, s.val_kappa, s.val_f1);
    part(n_train + n_val, n_test, s.test_kappa, s.test_f1);
    return s;
}

} // namespace

ExperimentResult run_experiment(const std::filesystem::path& scape_dir, const DatasetManifest& manifest,
                                const ExperimentConfig& cfg, Exec exec) {
    if (cfg.seeds.empty()) throw ParameterError("experiment needs at least one seed");
    if (cfg.models.empty()) throw ParameterError("experiment needs at least one model");
    auto task = task_labels(manifest, cfg.task, cfg.min_class_count);
    const LabelMatrix& labels = task.labels;

    std::vector<std::filesystem::path> files;
    for (const auto& e : manifest.entries) {
        files.push_back(scape_path_for(scape_dir, e.path));
        if (!std::filesystem::exists(files.back())) throw IoError("missing energyscape " + files.back().string());
    }

    ExperimentResult result;
    result.class_names = labels.class_names;
    result.removed_classes = task.removed;

    for (const auto seed : cfg.seeds) {
        const auto plan = split_dataset(labels, seed, cfg.folds, cfg.test_fraction);
        for (int f = 0; f < static_cast<int>(plan.folds.size()); ++f) {
            const auto& fold = plan.folds[static_cast<std::size_t>(f)];
            // rows ordered train | validation | test
            std::vector<std::size_t> order = fold.train;
            order.insert(order.end(), fold.validation.begin(), fold.validation.end());
            order.insert(order.end(), plan.test.begin(), plan.test.end());
            const auto n_train = static_cast<Eigen::Index>(fold.train.size());
            const auto n_val = static_cast<Eigen::Index>(fold.validation.size());
            const auto n_test = static_cast<Eigen::Index>(plan.test.size());
            Eigen::MatrixXi y(static_cast<Eigen::Index>(order.size()), labels.classes());
            for (std::size_t k = 0; k < order.size(); ++k) y.row(static_cast<Eigen::Index>(k)) = labels.values.row(static_cast<Eigen::Index>(order[k]));
            if (!has_both(take_rows(y, 0, n_train)) || !has_both(take_rows(y, n_train, n_val))) {
                spdlog::warn("seed {} fold {}: a class lacks positives or negatives, fold skipped", seed, f);
                ++result.skipped_folds;
                continue;
            }
            spdlog::info("seed {} fold {}: featurizing {} train / {} validation / {} test", seed, f, n_train, n_val, n_test);

            PipelineModel model;
            model.pool_kernel = cfg.pool_kernel;
            for (Eigen::Index k = 0; k < n_train; ++k) {
                const auto s = read_scape_file(files[order[static_cast<std::size_t>(k)]]);
                if (k == 0) model.mean_scape = RowMatrix::Zero(s.rows(), s.cols());
                if (s.values.rows() != model.mean_scape.rows() || s.values.cols() != model.mean_scape.cols())
                    throw ParameterError("energyscapes differ in shape");
                model.mean_scape += s.values;
            }
            model.mean_scape /= static_cast<double>(n_train);
            const Eigen::Index dims = model.mean_scape.rows() * (model.mean_scape.cols() / cfg.pool_kernel);
            Eigen::MatrixXd x;
            {
                RowMatrix pooled(static_cast<Eigen::Index>(order.size()), dims);
                pooled_rows(files, order, model, pooled, exec);
                fit_pca(model, pooled.topRows(n_train), cfg.components);
                x = project_pooled_rows(model, pooled);
            }
            const LabelMatrix y_train{take_rows(y, 0, n_train), labels.class_names};
            const Eigen::MatrixXd x_train = x.topRows(n_train);

            for (const auto kind : cfg.models) {
                OvrModel m;
                switch (kind) {
                case ModelKind::Logistic: m = train_logreg_ovr(x_train, y_train, cfg.logreg, exec); break;
                case ModelKind::Tree: m = train_tree_ovr(x_train, y_train, std::nullopt, exec); break;
                case ModelKind::Forest: {
                    ForestOptions fo = cfg.forest;
                    fo.seed = derive_seed(seed, "experiment.forest", static_cast<std::uint64_t>(f));
                    m = train_forest_ovr(x_train, y_train, fo, exec);
                    break;
                }
                }
                const Eigen::MatrixXd scores = predict_scores(m, x);
                const auto youden = youden_thresholds(scores.middleRows(n_train, n_val), take_rows(y, n_train, n_val));
                RunRecord rec;
                rec.model = kind;
                rec.seed = seed;
                rec.fold = f;
                rec.thresholds = youden.thresholds;
                rec.scores = score_model(scores, y, youden.thresholds, n_train, n_val, n_test);
                spdlog::info("  {:<7} val F1 {:.3f} test F1 {:.3f}", to_string(kind), rec.scores.val_f1, rec.scores.test_f1);
                result.runs.push_back(std::move(rec));
            }
        }
    }
    for (const auto kind : cfg.models) {
        std::vector<SplitScores> mine;
        for (const auto& r : result.runs)
            if (r.model == kind) mine.push_back(r.scores);
        if (!mine.empty()) result.rows.push_back(aggregate(to_string(kind), mine));
    }
    return result;
}

std::string ExperimentResult::per_run_table() const {
    std::string out = "model    seed fold  test_k  val_k  train_k  test_f1  val_f1  train_f1\n";
    char buf[160];
    for (const auto& r : runs) {
        std::snprintf(buf, sizeof buf, "%-8s %4llu %4d  %6.3f %6.3f  %7.3f  %7.3f %7.3f  %8.3f\n", to_string(r.model).c_str(),
                      static_cast<unsigned long long>(r.seed), r.fold, r.scores.test_kappa, r.scores.val_kappa,
                      r.scores.train_kappa, r.scores.test_f1, r.scores.val_f1, r.scores.train_f1);
        out += buf;
    }
    return out;
}

void write_experiment_outputs(const std::filesystem::path& out_dir, const ExperimentResult& result) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw IoError("cannot create output directory " + out_dir.string() + ": " +
                      (ec ? ec.message() : std::string("not a directory")));
    using nlohmann::ordered_json;
    auto scores_json = [](const SplitScores& s) {
        return ordered_json{{"test_kappa", s.test_kappa}, {"val_kappa", s.val_kappa}, {"train_kappa", s.train_kappa},
                            {"test_f1", s.test_f1},       {"val_f1", s.val_f1},       {"train_f1", s.train_f1}};
    };
    std::string lines;
    for (const auto& r : result.runs) {
        ordered_json j;
        j["model"] = to_string(r.model);
        j["seed"] = r.seed;
        j["fold"] = r.fold;
        j["scores"] = scores_json(r.scores);
        j["thresholds"] = r.thresholds;
        lines += j.dump() + "\n";
    }
    write_file_atomic(out_dir / "runs.jsonl", lines);

    ordered_json agg;
    agg["class_names"] = result.class_names;
    agg["removed_classes"] = result.removed_classes;
    agg["skipped_folds"] = result.skipped_folds;
    agg["models"] = ordered_json::array();
    for (const auto& row : result.rows)
        agg["models"].push_back({{"model", row.model}, {"runs", row.runs}, {"mean", scores_json(row.mean)},
                                 {"std", scores_json(row.stddev)}});
    write_file_atomic(out_dir / "aggregate.json", agg.dump(2) + "\n");
    write_file_atomic(out_dir / "results.txt", result.per_run_table() + "\n" + result.aggregate_table());
}

} // namespace roadsonar
