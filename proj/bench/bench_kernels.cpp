// Serial reference vs OpenMP kernels. Argument 0 = Exec::Serial, 1 = Exec::Parallel.
// Thread count follows OMP_NUM_THREADS / ROADSONAR_THREADS.

#include <random>

#include <benchmark/benchmark.h>

#include "roadsonar/beamform.hpp"
#include "roadsonar/exec.hpp"
#include "roadsonar/ml.hpp"
#include "roadsonar/signal.hpp"
#include "roadsonar/simulate.hpp"

using namespace roadsonar;

namespace {

Exec exec_of(const benchmark::State& s) { return s.range(0) ? Exec::Parallel : Exec::Serial; }

struct Fixture {
    ArrayGeometry geom = default_geometry();
    Waveform chirp = generate_chirp();
    PdmFrame frame;
    std::vector<Waveform> baseband, filtered;
    Energyscape scape;

    Fixture() {
        const auto scene = make_scene(Material::Element, {}, 1);
        auto echoes = render_echoes(scene, geom, chirp, 20.0, 1);
        double peak = 0;
        for (const auto& ch : echoes)
            for (double v : ch.samples) peak = std::max(peak, std::abs(v));
        for (auto& ch : echoes) {
            for (auto& v : ch.samples) v *= 0.5 / peak;
            frame.channels.push_back(pdm_encode(ch));
        }
        baseband = pdm_decode(frame);
        filtered = matched_filter_channels(baseband, chirp);
        scape = build_energyscape(filtered, DirectionList::grid(), geom);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

void BM_PdmDecode(benchmark::State& state) {
    const auto& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(pdm_decode(f.frame, kBasebandRateHz, exec_of(state)));
}

void BM_MatchedFilter(benchmark::State& state) {
    const auto& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(matched_filter_channels(f.baseband, f.chirp, exec_of(state)));
}

void BM_Energyscape(benchmark::State& state) {
    const auto& f = fixture();
    const auto dirs = DirectionList::grid();
    for (auto _ : state) benchmark::DoNotOptimize(build_energyscape(f.filtered, dirs, f.geom, exec_of(state)));
}

void BM_Cfar(benchmark::State& state) {
    const auto& f = fixture();
    for (auto _ : state) benchmark::DoNotOptimize(cfar_cleanup(f.scape, {}, exec_of(state)));
}

void BM_ForestTrain(benchmark::State& state) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    Eigen::MatrixXd x(400, 64);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    LabelMatrix y;
    y.class_names = {"a", "b", "c"};
    y.values.resize(400, 3);
    for (int j = 0; j < 400; ++j)
        for (int c = 0; c < 3; ++c) y.values(j, c) = x(j, c) + 0.3 * g(rng) > 0 ? 1 : 0;
    ForestOptions opts;
    opts.n_trees = 30;
    for (auto _ : state) benchmark::DoNotOptimize(train_forest_ovr(x, y, opts, exec_of(state)));
}

} // namespace

BENCHMARK(BM_PdmDecode)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MatchedFilter)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Energyscape)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Cfar)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForestTrain)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
    apply_thread_cap_from_env();
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
