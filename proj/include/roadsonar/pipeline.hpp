#pragma once

// End-to-end orchestration shared by the command-line front-end and the acceptance checks:
// recording -> energyscape processing, task label extraction, and the cross-validated experiment.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "roadsonar/beamform.hpp"
#include "roadsonar/eval.hpp"
#include "roadsonar/features.hpp"
#include "roadsonar/ml.hpp"
#include "roadsonar/signal.hpp"
#include "roadsonar/simulate.hpp"

namespace roadsonar {

/// PDM decode -> matched filter -> delay-and-sum + envelope -> CFAR cleanup.
Energyscape process_recording(const PdmFrame& frame, const Waveform& templ, const ArrayGeometry& geom,
                              const CfarParams& cfar = {}, Exec exec = Exec::Parallel);

/// "rec_00001.pdm" -> <scape_dir>/rec_00001.scape
std::filesystem::path scape_path_for(const std::filesystem::path& scape_dir, const std::string& entry_path);

struct ProcessReport {
    std::size_t written = 0;
    std::vector<std::string> failed; // "<path>: <reason>"
};

/// Processes every manifest entry of `dataset_dir` into `scape_dir`. Unreadable recordings are
/// skipped and reported.
ProcessReport process_dataset(const std::filesystem::path& dataset_dir, const std::filesystem::path& scape_dir,
                              const ArrayGeometry& geom, const ChirpSpec& chirp = {}, const CfarParams& cfar = {},
                              Exec exec = Exec::Parallel);

enum class Task { Material, Damage };
std::string to_string(Task t);
std::optional<Task> parse_task(std::string_view s);

struct TaskLabels {
    LabelMatrix labels;
    std::vector<std::string> removed; // classes dropped for having too few samples
};

/// Label matrix restricted to the task's classes (materials or damages), rare classes removed.
TaskLabels task_labels(const DatasetManifest& manifest, Task task, int min_class_count = 100);

struct ExperimentConfig {
    Task task = Task::Material;
    std::vector<std::uint64_t> seeds{0, 1};
    int folds = 10;
    double test_fraction = 0.1;
    int min_class_count = 100;
    int pool_kernel = kPoolKernel;
    int components = kComponents;
    std::vector<ModelKind> models{ModelKind::Logistic, ModelKind::Tree, ModelKind::Forest};
    LogisticOptions logreg;
    ForestOptions forest; // seed is derived per run
};

struct RunRecord {
    ModelKind model = ModelKind::Logistic;
    std::uint64_t seed = 0;
    int fold = 0;
    SplitScores scores;
    std::vector<double> thresholds;
};

struct ExperimentResult {
    std::vector<std::string> class_names;
    std::vector<std::string> removed_classes;
    std::vector<RunRecord> runs;
    std::vector<AggregateRow> rows; // one per enabled model, in config order
    int skipped_folds = 0;

    std::string per_run_table() const;
    std::string aggregate_table() const { return format_results_table(rows); }
};

/// Split -> per-fold vector pipeline -> train -> Youden calibration on validation -> scores on
/// train/validation/test, repeated for every seed. Energyscapes are streamed from `scape_dir`.
ExperimentResult run_experiment(const std::filesystem::path& scape_dir, const DatasetManifest& manifest,
                                const ExperimentConfig& cfg, Exec exec = Exec::Parallel);

/// runs.jsonl, aggregate.json, results.txt
void write_experiment_outputs(const std::filesystem::path& out_dir, const ExperimentResult& result);

} // namespace roadsonar
