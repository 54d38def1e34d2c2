#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "roadsonar/error.hpp"
#include "roadsonar/fileutil.hpp"
#include "roadsonar/pipeline.hpp"
#include "roadsonar/simulate.hpp"
#include "test_util.hpp"

using namespace roadsonar;

namespace {

bool same_scene(const Scene& a, const Scene& b) {
    if (a.reflectors.size() != b.reflectors.size() || a.material != b.material || a.damages != b.damages) return false;
    for (std::size_t i = 0; i < a.reflectors.size(); ++i) {
        const auto &p = a.reflectors[i], &q = b.reflectors[i];
        if (p.azimuth_deg != q.azimuth_deg || p.elevation_deg != q.elevation_deg || p.range_m != q.range_m ||
            p.amplitude != q.amplitude)
            return false;
    }
    return true;
}

std::size_t argmax_abs(const std::vector<double>& v) {
    std::size_t k = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[k])) k = i;
    return k;
}

// Best accuracy of a single threshold separating two samples of a statistic.
double threshold_accuracy(std::vector<double> a, std::vector<double> b) {
    std::vector<std::pair<double, int>> all;
    for (double x : a) all.push_back({x, 0});
    for (double x : b) all.push_back({x, 1});
    std::sort(all.begin(), all.end());
    const double n = static_cast<double>(all.size());
    double best = 0;
    // cut after position k: below -> one class, above -> the other (either orientation)
    for (std::size_t k = 0; k <= all.size(); ++k) {
        double below_a = 0, above_b = 0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (i < k && all[i].second == 0) ++below_a;
            if (i >= k && all[i].second == 1) ++above_b;
        }
        const double acc = (below_a + above_b) / n;
        best = std::max({best, acc, 1 - acc});
    }
    return best;
}

} // namespace

TEST_CASE("scenes are deterministic per seed") {
    const std::vector<Damage> dmg{Damage::Pothole};
    for (auto m : kAllMaterials) {
        CHECK(same_scene(make_scene(m, {}, 5), make_scene(m, {}, 5)));
        CHECK(same_scene(make_scene(m, dmg, 5), make_scene(m, dmg, 5)));
        CHECK_FALSE(same_scene(make_scene(m, {}, 5), make_scene(m, {}, 6)));
    }
}

TEST_CASE("material base fields follow their signatures") {
    const SignatureConfig cfg;
    const auto a = make_scene(Material::Asphalt, {}, 1);
    CHECK(a.reflectors.size() == static_cast<std::size_t>(cfg.asphalt_count));
    CHECK(a.reflectors.size() >= 200);

    const auto c = make_scene(Material::Concrete, {}, 1);
    CHECK(c.reflectors.size() == static_cast<std::size_t>(cfg.concrete_count) + 1);
    int specular = 0;
    for (const auto& r : c.reflectors) specular += r.amplitude == cfg.specular_amplitude && r.range_m == cfg.specular_range_m;
    CHECK(specular == 1);

    for (auto m : kAllMaterials)
        for (const auto& r : make_scene(m, {}, 2).reflectors) {
            CHECK(std::abs(r.azimuth_deg) <= 90);
            CHECK(std::abs(r.elevation_deg) <= 90);
            CHECK(r.range_m > 0);
            CHECK(r.amplitude >= 0);
        }
}

TEST_CASE("element azimuth histogram is periodic") {
    const SignatureConfig cfg;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto s = make_scene(Material::Element, {}, seed);
        // 1-degree histogram over [-90, 90)
        std::vector<double> h(180, 0.0);
        for (const auto& r : s.reflectors) h[static_cast<std::size_t>(std::clamp(std::floor(r.azimuth_deg) + 90, 0.0, 179.0))] += 1;
        double mean = 0;
        for (double v : h) mean += v;
        mean /= 180;
        for (auto& v : h) v -= mean;
        auto ac = [&](std::size_t lag) {
            double s = 0;
            for (std::size_t i = 0; i + lag < h.size(); ++i) s += h[i] * h[i + lag];
            return s;
        };
        const double zero = ac(0);
        double secondary = 0;
        for (std::size_t lag = 5; lag < 90; ++lag) secondary = std::max(secondary, ac(lag) / zero);
        CHECK(secondary >= 0.5);
        CHECK(ac(static_cast<std::size_t>(cfg.element_spacing_deg)) / zero >= 0.5);
    }
}

TEST_CASE("damages add their signatures on top of the base field") {
    const SignatureConfig cfg;
    const auto base = make_scene(Material::Concrete, {}, 9);
    CHECK(base.damages.empty());
    CHECK(base.labels() == std::vector<std::string>{"Concrete"});
    const std::vector<Damage> pd{Damage::Pothole};
    const auto p = make_scene(Material::Concrete, pd, 9);
    CHECK(p.reflectors.size() == base.reflectors.size() + static_cast<std::size_t>(cfg.pothole_edge_count));
    CHECK(p.labels() == std::vector<std::string>{"Concrete", "Pothole"});
    const std::vector<Damage> both{Damage::Patch, Damage::AlligatorCrack};
    const auto b = make_scene(Material::Asphalt, both, 9);
    CHECK(b.damages == std::vector<Damage>{Damage::AlligatorCrack, Damage::Patch});
    CHECK(b.labels() == std::vector<std::string>{"Asphalt", "Alligator Crack", "Patch"});
    const std::vector<Damage> ck{Damage::Crack};
    CHECK(make_scene(Material::Element, ck, 4).reflectors.size() ==
          make_scene(Material::Element, {}, 4).reflectors.size() + static_cast<std::size_t>(cfg.crack_count));
}

TEST_CASE("rendered echoes: travel time and spreading") {
    const auto g = default_geometry();
    const auto chirp = generate_chirp();
    Scene s;
    s.reflectors = {{0, 0, 1.715, 1.0}};
    const auto ch = render_echoes(s, g, chirp, INFINITY, 0);
    REQUIRE(ch.size() == 32);
    CHECK(ch[0].size() == kRecordLength);
    for (std::size_t m = 0; m < 32; ++m) {
        const auto& p = g.positions[m];
        const Vec3 r{0, 0, 1.715};
        const double expect = (1.715 + (r - p).norm()) / 343.0 * kBasebandRateHz;
        const auto mf = matched_filter(ch[m], chirp);
        CHECK(std::abs(static_cast<double>(argmax_abs(mf.samples)) - expect) <= 1.0);
    }
    CHECK(2 * 1.715 / 343.0 * kBasebandRateHz == doctest::Approx(4500));

    // echo energy is insensitive to the sub-sample arrival phase, unlike the peak sample
    auto amplitude = [&](double range) {
        Scene one;
        one.reflectors = {{0, 0, range, 1.0}};
        const auto w = render_echoes(one, g, chirp, INFINITY, 0);
        double e = 0;
        for (double v : w[0].samples) e += v * v;
        return std::sqrt(e);
    };
    CHECK(amplitude(1.0) / amplitude(2.0) == doctest::Approx(4.0).epsilon(0.01));

    const auto again = render_echoes(s, g, chirp, INFINITY, 0);
    for (std::size_t m = 0; m < 32; ++m) CHECK(again[m].samples == ch[m].samples);
    const auto noisy1 = render_echoes(s, g, chirp, 20, 7), noisy2 = render_echoes(s, g, chirp, 20, 7);
    CHECK(noisy1[3].samples == noisy2[3].samples);
    CHECK(noisy1[3].samples != ch[3].samples);

    CHECK(render_echoes(s, g, chirp, INFINITY, 0, kRecordLength, Exec::Serial)[5].samples == ch[5].samples);

    Scene far;
    far.reflectors = {{0, 0, 7.0, 1.0}};
    CHECK_THROWS_AS(render_echoes(far, g, chirp, INFINITY, 0), ParameterError);
}

TEST_CASE("manifest encoding round trip and canonical class order") {
    DatasetManifest m;
    m.entries = {{"rec_00000.pdm", 0.1, {"Asphalt"}}, {"rec_00001.pdm", 0.2, {"Element", "Pothole", "Crack"}}};
    m.class_names = {"Asphalt", "Element", "Pothole", "Crack"};
    const auto back = parse_manifest(encode_manifest(m));
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[1].path == "rec_00001.pdm");
    CHECK(back.entries[1].timestamp_s == 0.2);
    CHECK(back.entries[1].labels == m.entries[1].labels);
    CHECK(back.class_names == m.class_names);
    CHECK(canonical_class_order({"Pothole", "Zebra", "Asphalt", "Crack", "Asphalt", "Alpha"}) ==
          std::vector<std::string>{"Asphalt", "Pothole", "Crack", "Alpha", "Zebra"});
    CHECK_THROWS(parse_manifest("{not json}\n"));
}

TEST_CASE("synthetic dataset: counts, labels, determinism, readable files") {
    TempDir a("ds_a"), b("ds_b");
    DatasetSpec spec;
    spec.material_counts = {{Material::Asphalt, 3}, {Material::Concrete, 3}, {Material::Element, 3}};
    spec.damage_counts = {{Damage::Pothole, 2}};
    spec.seed = 4;
    spec.record_length = 8192;
    const auto g = default_geometry();
    const auto m = synth_dataset(spec, a.path, g);
    synth_dataset(spec, b.path, g);
    REQUIRE(m.entries.size() == 11);
    std::map<std::string, int> hist;
    for (const auto& e : m.entries)
        for (const auto& l : e.labels) ++hist[l];
    CHECK(hist["Pothole"] == 2);
    CHECK(hist["Asphalt"] + hist["Concrete"] + hist["Element"] == 11);

    CHECK(read_file_text(a / kManifestName) == read_file_text(b / kManifestName));
    double prev = 0;
    for (const auto& e : m.entries) {
        CHECK(e.timestamp_s > prev);
        CHECK(e.timestamp_s - prev == doctest::Approx(0.1).epsilon(0.11));
        prev = e.timestamp_s;
        const auto frame = read_pdm_file(a / e.path);
        CHECK(frame.channel_count() == 32);
        CHECK(frame.bits_per_channel() == 81920);
        CHECK(frame.sample_rate == kPdmRateHz);
        CHECK(read_file_bytes(a / e.path) == read_file_bytes(b / e.path));
    }
    CHECK(read_manifest(a / kManifestName).entries.size() == 11);

    DatasetSpec ten;
    ten.material_counts = {{Material::Asphalt, 10}, {Material::Concrete, 10}, {Material::Element, 10}};
    ten.record_length = 8192;
    TempDir c("ds_c");
    const auto t = synth_dataset(ten, c.path, g);
    std::map<std::string, int> th;
    for (const auto& e : t.entries)
        for (const auto& l : e.labels) ++th[l];
    CHECK(t.entries.size() == 30);
    CHECK(th["Asphalt"] == 10);
    CHECK(th["Concrete"] == 10);
    CHECK(th["Element"] == 10);

    std::filesystem::create_directories(c / "blocker");
    write_file_atomic(c / "blocker" / "file", std::string_view("x"));
    CHECK_THROWS_AS(synth_dataset(ten, c / "blocker" / "file" / "sub", g), IoError);
}

TEST_CASE("material base fields are separable by band statistics of the energyscape") {
    TempDir ds("sep_ds"), sc("sep_sc");
    DatasetSpec spec;
    spec.material_counts = {{Material::Asphalt, 34}, {Material::Concrete, 33}, {Material::Element, 33}};
    spec.seed = 11;
    const auto g = default_geometry();
    const auto m = synth_dataset(spec, ds.path, g);
    const auto report = process_dataset(ds.path, sc.path, g);
    REQUIRE(report.failed.empty());

    // mean cleaned intensity over all directions inside a range band
    auto band = [](const Energyscape& s, double r0, double r1) {
        const auto c0 = static_cast<Eigen::Index>(r0 / s.range_resolution);
        const auto c1 = static_cast<Eigen::Index>(r1 / s.range_resolution);
        return s.values.middleCols(c0, c1 - c0).mean();
    };
    std::map<std::string, std::vector<double>> mid, far;
    for (const auto& e : m.entries) {
        const auto s = read_scape_file(scape_path_for(sc.path, e.path));
        mid[e.labels[0]].push_back(band(s, 1.6, 2.2));
        far[e.labels[0]].push_back(band(s, 2.2, 3.0));
    }
    const std::vector<std::string> names{"Asphalt", "Concrete", "Element"};
    for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t j = i + 1; j < names.size(); ++j) {
            const auto &a = names[i], &b = names[j];
            const double acc = std::max(threshold_accuracy(mid[a], mid[b]), threshold_accuracy(far[a], far[b]));
            INFO(a << " vs " << b << ": " << acc);
            CHECK(acc >= 0.9);
        }
}
