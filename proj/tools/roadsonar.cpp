// roadsonar: batch front-end. simulate -> process -> split -> featurize -> train -> evaluate,
// or experiment for the full cross-validated protocol, plus render for inspecting scapes.
//
// Exit status: 0 when every requested output was written, 2 when some were (e.g. a few
// corrupt recordings were skipped), 1 on failure.

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "roadsonar/error.hpp"
#include "roadsonar/exec.hpp"
#include "roadsonar/fileutil.hpp"
#include "run_config.hpp"

using namespace roadsonar;
using cli::Json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitPartial = 2;

struct Command {
    CLI::App* app = nullptr;
    std::string config_file;
    std::map<std::string, std::string> overrides;
};

// Registers `--config` and `--section.key` for every key of the listed sections.
void register_keys(Command& cmd, const Json& defaults, const std::vector<std::string>& sections) {
    cmd.app->add_option("--config", cmd.config_file, "JSON config file (sections as in configs/*.json)");
    for (const auto& section : sections) {
        for (const auto& key : cli::section_keys(defaults, section)) {
            const auto dot = key.find('.');
            const auto& v = defaults[section][key.substr(dot + 1)];
            cmd.app->add_option("--" + key, cmd.overrides[key], "default: " + v.dump())->group(section);
        }
    }
}

cli::RunConfig load(const Command& cmd) {
    Json c = cli::default_config();
    if (!cmd.config_file.empty()) cli::merge_config_file(c, cmd.config_file);
    for (const auto& [key, text] : cmd.overrides)
        if (cmd.app->count("--" + key) > 0) cli::set_key(c, key, text);
    return cli::resolve(c);
}

std::vector<std::size_t> non_test_rows(const FoldPlan& plan) {
    std::set<std::size_t> test(plan.test.begin(), plan.test.end());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < plan.sample_count; ++i)
        if (!test.count(i)) rows.push_back(i);
    return rows;
}

FoldPlan read_plan(const std::filesystem::path& path) {
    return parse_fold_plan(read_file_text(path), path.string());
}

template <class M>
M select_rows(const M& m, const std::vector<std::size_t>& rows) {
    M out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
    return out;
}

// Features are stored in manifest order; this checks the id column against the manifest.
Eigen::MatrixXd load_features(const cli::RunConfig& rc, const DatasetManifest& manifest) {
    std::vector<std::string> ids;
    auto x = read_feature_csv(rc.feature_dir / "features.csv", &ids);
    if (ids.size() != manifest.entries.size())
        throw ParameterError("features.csv has " + std::to_string(ids.size()) + " rows, manifest has " +
                             std::to_string(manifest.entries.size()));
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] != manifest.entries[i].path)
            throw ParameterError("features.csv row " + std::to_string(i) + " is '" + ids[i] + "', manifest has '" +
                                 manifest.entries[i].path + "'");
    return x;
}

int cmd_simulate(const cli::RunConfig& rc) {
    const auto geom = rc.geometry();
    const auto manifest = synth_dataset(rc.dataset, rc.dataset_dir, geom, rc.chirp);
    std::map<std::string, int> hist;
    for (const auto& e : manifest.entries)
        for (const auto& l : e.labels) ++hist[l];
    std::cout << manifest.entries.size() << " recordings in " << rc.dataset_dir.string() << "\n";
    for (const auto& name : manifest.class_names) std::printf("  %-16s %5d\n", name.c_str(), hist[name]);
    return kExitOk;
}

int cmd_process(const cli::RunConfig& rc) {
    const auto report = process_dataset(rc.dataset_dir, rc.scape_dir, rc.geometry(), rc.chirp, rc.cfar);
    std::cout << report.written << " energyscapes written to " << rc.scape_dir.string() << "\n";
    if (report.failed.empty()) return kExitOk;
    std::cerr << report.failed.size() << " recording(s) failed:\n";
    for (const auto& f : report.failed) std::cerr << "  " << f << "\n";
    return report.written > 0 ? kExitPartial : kExitFailure;
}

int cmd_split(const cli::RunConfig& rc) {
    const auto manifest = read_manifest(rc.dataset_dir / kManifestName);
    const auto task = task_labels(manifest, rc.experiment.task, rc.experiment.min_class_count);
    const auto plan = split_dataset(task.labels, rc.seed, rc.experiment.folds, rc.experiment.test_fraction);
    if (rc.split_path.has_parent_path()) std::filesystem::create_directories(rc.split_path.parent_path());
    write_file_atomic(rc.split_path, encode_fold_plan(plan));
    std::cout << "test " << plan.test.size() << ", " << plan.folds.size() << " folds, validation sizes:";
    for (const auto& f : plan.folds) std::cout << " " << f.validation.size();
    std::cout << "\n";
    return kExitOk;
}

int cmd_featurize(const cli::RunConfig& rc) {
    const auto manifest = read_manifest(rc.dataset_dir / kManifestName);
    std::vector<std::filesystem::path> files;
    for (const auto& e : manifest.entries) files.push_back(scape_path_for(rc.scape_dir, e.path));

    std::vector<std::size_t> fit_rows;
    if (std::filesystem::exists(rc.split_path)) {
        const auto plan = read_plan(rc.split_path);
        if (plan.sample_count != files.size())
            throw ParameterError(rc.split_path.string() + " covers " + std::to_string(plan.sample_count) +
                                 " samples, manifest has " + std::to_string(files.size()));
        fit_rows = non_test_rows(plan);
    } else {
        spdlog::warn("no split at {}: fitting the pipeline on every sample", rc.split_path.string());
        for (std::size_t i = 0; i < files.size(); ++i) fit_rows.push_back(i);
    }
    const auto model = fit_vector_pipeline(
        fit_rows.size(), [&](std::size_t k) { return read_scape_file(files[fit_rows[k]]).values; },
        rc.experiment.components, rc.experiment.pool_kernel);

    Eigen::MatrixXd x(static_cast<Eigen::Index>(files.size()), model.n_components);
    const long n = static_cast<long>(files.size());
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
        try {
            x.row(i) = apply_vector_pipeline(model, read_scape_file(files[static_cast<std::size_t>(i)])).transpose();
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);

    std::filesystem::create_directories(rc.feature_dir);
    write_pipeline_model(rc.feature_dir / "pipeline.vpm", model);
    std::vector<std::string> ids;
    for (const auto& e : manifest.entries) ids.push_back(e.path);
    write_feature_csv(rc.feature_dir / "features.csv", x, ids);
    std::cout << files.size() << " samples x " << model.n_components << " components written to "
              << rc.feature_dir.string() << "\n";
    return kExitOk;
}

int cmd_train(const cli::RunConfig& rc) {
    const auto manifest = read_manifest(rc.dataset_dir / kManifestName);
    const auto task = task_labels(manifest, rc.experiment.task, rc.experiment.min_class_count);
    const auto x = load_features(rc, manifest);
    const auto plan = read_plan(rc.split_path);
    if (rc.train_fold >= static_cast<int>(plan.folds.size()))
        throw ParameterError("train.fold " + std::to_string(rc.train_fold) + " out of range");

    const auto rows = rc.train_fold < 0 ? non_test_rows(plan) : plan.folds[static_cast<std::size_t>(rc.train_fold)].train;
    const Eigen::MatrixXd xt = select_rows(x, rows);
    const LabelMatrix yt{select_rows(task.labels.values, rows), task.labels.class_names};
    OvrModel m;
    Json hp{{"task", to_string(rc.experiment.task)}, {"seed", rc.seed}, {"fold", rc.train_fold}};
    switch (rc.model) {
    case ModelKind::Logistic:
        m = train_logreg_ovr(xt, yt, rc.experiment.logreg);
        hp["c_reg"] = rc.experiment.logreg.c_reg;
        hp["tolerance"] = rc.experiment.logreg.tolerance;
        hp["max_iterations"] = rc.experiment.logreg.max_iterations;
        break;
    case ModelKind::Tree: m = train_tree_ovr(xt, yt); break;
    case ModelKind::Forest:
        m = train_forest_ovr(xt, yt, rc.experiment.forest);
        hp["n_trees"] = rc.experiment.forest.n_trees;
        hp["max_features"] = rc.experiment.forest.max_features;
        hp["bootstrap"] = rc.experiment.forest.bootstrap;
        break;
    }
    if (rc.train_fold >= 0) {
        const auto& val = plan.folds[static_cast<std::size_t>(rc.train_fold)].validation;
        const auto y = youden_thresholds(predict_scores(m, select_rows(x, val)), select_rows(task.labels.values, val));
        m.thresholds = y.thresholds;
    }
    hp["thresholds"] = m.thresholds;
    if (rc.model_path.has_parent_path()) std::filesystem::create_directories(rc.model_path.parent_path());
    write_ovr_model(rc.model_path, m, hp.dump(2));
    std::cout << to_string(rc.model) << " model on " << rows.size() << " samples written to " << rc.model_path.string()
              << "\n";
    return kExitOk;
}

int cmd_evaluate(const cli::RunConfig& rc) {
    const auto manifest = read_manifest(rc.dataset_dir / kManifestName);
    const auto task = task_labels(manifest, rc.experiment.task, rc.experiment.min_class_count);
    const auto x = load_features(rc, manifest);
    const auto plan = read_plan(rc.split_path);
    const auto model = read_ovr_model(rc.model_path);
    if (model.class_names != task.labels.class_names)
        throw ParameterError("model classes differ from the task classes of " + rc.dataset_dir.string());

    std::vector<std::size_t> rows;
    if (rc.evaluate_subset == "test") {
        rows = plan.test;
    } else {
        if (rc.train_fold < 0 || rc.train_fold >= static_cast<int>(plan.folds.size()))
            throw ParameterError("evaluate.subset " + rc.evaluate_subset + " needs train.fold to name a fold");
        const auto& f = plan.folds[static_cast<std::size_t>(rc.train_fold)];
        rows = rc.evaluate_subset == "train" ? f.train : f.validation;
    }
    if (rows.empty()) throw ParameterError("evaluation subset is empty");
    const auto scores = predict_scores(model, select_rows(x, rows));
    const auto pred = apply_thresholds(scores, model.thresholds);
    const auto report = evaluate(select_rows(task.labels.values, rows), pred, model.class_names, model.thresholds);
    std::filesystem::create_directories(rc.output_dir);
    write_file_atomic(rc.output_dir / "metrics.json", encode_metrics_json(report));
    std::printf("%-16s %8s %8s %8s\n", "class", "F1", "kappa", "support");
    for (std::size_t c = 0; c < report.class_names.size(); ++c)
        std::printf("%-16s %8.3f %8.3f %8d\n", report.class_names[c].c_str(), report.f1.per_class[c],
                    report.kappa.per_class[c], report.f1.support[c]);
    std::printf("%-16s %8.3f %8.3f\n", "weighted", report.f1.weighted, report.kappa.weighted);
    return kExitOk;
}

int cmd_experiment(const cli::RunConfig& rc) {
    const auto manifest = read_manifest(rc.dataset_dir / kManifestName);
    const auto result = run_experiment(rc.scape_dir, manifest, rc.experiment);
    write_experiment_outputs(rc.output_dir, result);
    std::cout << result.aggregate_table();
    if (result.runs.empty()) {
        std::cerr << "every fold was skipped\n";
        return kExitFailure;
    }
    return kExitOk;
}

// Heat colormap: black -> red -> yellow -> white, piecewise linear in thirds of [0, 1].
std::array<std::uint8_t, 3> heat(double t) {
    auto ch = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
    return {ch(3 * t), ch(3 * t - 1), ch(3 * t - 2)};
}

int cmd_render(const std::filesystem::path& input, std::filesystem::path out) {
    const auto scape = input.extension() == ".csv" ? read_scape_csv(input) : read_scape_file(input);
    if (out.empty()) out = std::filesystem::path(input).replace_extension("");
    const auto& v = scape.values;
    const double lo = v.minCoeff(), hi = v.maxCoeff();
    const double span = hi - lo;
    std::string ppm = "P6\n" + std::to_string(v.cols()) + " " + std::to_string(v.rows()) + "\n255\n";
    ppm.reserve(ppm.size() + static_cast<std::size_t>(v.size()) * 3);
    for (Eigen::Index r = 0; r < v.rows(); ++r)
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
            const auto px = heat(span > 0 ? (v(r, c) - lo) / span : 0.0);
            ppm.append(reinterpret_cast<const char*>(px.data()), 3);
        }
    auto ppm_path = out, csv_path = out;
    ppm_path += ".ppm";
    csv_path += ".csv";
    write_file_atomic(ppm_path, ppm);
    write_scape_csv(csv_path, scape);
    std::cout << v.rows() << "x" << v.cols() << " -> " << ppm_path.string() << ", " << csv_path.string() << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("roadsonar"));
    apply_thread_cap_from_env();

    CLI::App app{"3D in-air sonar road-surface classification pipeline.\n"
                 "Thread count is capped by the ROADSONAR_THREADS environment variable."};
    app.require_subcommand(1);
    app.fallthrough();
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    const Json defaults = cli::default_config();
    struct Spec {
        const char* name;
        const char* about;
        std::vector<std::string> sections;
    };
    const std::vector<Spec> specs = {
        {"simulate", "Render a synthetic dataset: PDM recordings plus manifest.jsonl",
         {"run", "paths", "simulate", "signatures", "chirp", "geometry"}},
        {"process", "Decode, matched-filter, beamform and clean every recording into an energyscape",
         {"paths", "chirp", "geometry", "cfar"}},
        {"split", "Hold out a test set and plan stratified folds", {"run", "paths", "split"}},
        {"featurize", "Fit the vector pipeline on non-test samples and project every sample",
         {"paths", "features"}},
        {"train", "Train one-vs-rest classifiers on a fold (or all non-test samples)",
         {"run", "paths", "split", "model", "train"}},
        {"evaluate", "Score a trained model on the test set or a fold", {"run", "paths", "split", "train", "evaluate"}},
        {"experiment", "Full protocol: per seed and fold, fit features, train, calibrate, score",
         {"run", "paths", "features", "split", "model", "experiment"}},
    };
    std::vector<Command> cmds;
    cmds.reserve(specs.size());
    for (const auto& s : specs) {
        // options bind to members, so register on the element in its final place
        auto& c = cmds.emplace_back();
        c.app = app.add_subcommand(s.name, s.about);
        register_keys(c, defaults, s.sections);
    }
    auto* render = app.add_subcommand("render", "Write an energyscape as a PPM heatmap (black-red-yellow-white) plus CSV");
    std::string render_in, render_out;
    render->add_option("scape", render_in, "energyscape file (.scape or .csv)")->required();
    render->add_option("-o,--out", render_out, "output path without extension (default: input without extension)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitFailure;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (render->parsed()) return cmd_render(render_in, render_out);
        for (std::size_t i = 0; i < cmds.size(); ++i) {
            if (!cmds[i].app->parsed()) continue;
            const auto rc = load(cmds[i]);
            const std::string name = specs[i].name;
            if (name == "simulate") return cmd_simulate(rc);
            if (name == "process") return cmd_process(rc);
            if (name == "split") return cmd_split(rc);
            if (name == "featurize") return cmd_featurize(rc);
            if (name == "train") return cmd_train(rc);
            if (name == "evaluate") return cmd_evaluate(rc);
            if (name == "experiment") return cmd_experiment(rc);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}
