#include "roadsonar/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "roadsonar/error.hpp"
#include "roadsonar/fileutil.hpp"
#include "roadsonar/rng.hpp"

namespace roadsonar {

std::string_view to_string(Material m) noexcept {
    switch (m) {
    case Material::Asphalt: return "Asphalt";
    case Material::Concrete: return "Concrete";
    case Material::Element: return "Element";
    }
    return "?";
}

std::string_view to_string(Damage d) noexcept {
    switch (d) {
    case Damage::AlligatorCrack: return "Alligator Crack";
    case Damage::Pothole: return "Pothole";
    case Damage::Crack: return "Crack";
    case Damage::Patch: return "Patch";
    }
    return "?";
}

std::optional<Material> parse_material(std::string_view s) noexcept {
    for (auto m : kAllMaterials)
        if (to_string(m) == s) return m;
    return std::nullopt;
}

std::optional<Damage> parse_damage(std::string_view s) noexcept {
    for (auto d : kAllDamages)
        if (to_string(d) == s) return d;
    if (s == "AlligatorCrack") return Damage::AlligatorCrack;
    return std::nullopt;
}

std::vector<std::string> Scene::labels() const {
    std::vector<std::string> out{std::string(to_string(material))};
    for (auto d : damages) out.emplace_back(to_string(d));
    return out;
}

namespace {

double clamp_angle(double a) { return std::clamp(a, -90.0, 90.0); }

struct FieldSampler {
    const SignatureConfig& cfg;
    Rng& rng;

    double azimuth() { return std::uniform_real_distribution<double>(-cfg.field_azimuth_deg, cfg.field_azimuth_deg)(rng); }
    double elevation() {
        return std::uniform_real_distribution<double>(-cfg.field_elevation_deg, cfg.field_elevation_deg)(rng);
    }
    double range() { return std::uniform_real_distribution<double>(cfg.range_min_m, cfg.range_max_m)(rng); }
    double range(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
    double normal(double mu, double sigma) { return std::normal_distribution<double>(mu, sigma)(rng); }
};

void add_base_field(Scene& scene, const SignatureConfig& cfg, Rng& rng) {
    FieldSampler f{cfg, rng};
    auto& out = scene.reflectors;
    switch (scene.material) {
    case Material::Asphalt:
        for (int i = 0; i < cfg.asphalt_count; ++i) {
            const double az = f.azimuth(), el = f.elevation();
            const double r = f.range(cfg.asphalt_range_min_m, cfg.asphalt_range_max_m);
            out.push_back({az, el, r, std::abs(f.normal(cfg.asphalt_amplitude, cfg.asphalt_amplitude_sigma))});
        }
        break;
    case Material::Concrete:
        for (int i = 0; i < cfg.concrete_count; ++i) {
            const double az = f.azimuth(), el = f.elevation();
            const double r = f.range(cfg.concrete_range_min_m, cfg.concrete_range_max_m);
            out.push_back({az, el, r, f.uniform(cfg.concrete_amplitude_min, cfg.concrete_amplitude_max)});
        }
        out.push_back({cfg.specular_azimuth_deg, cfg.specular_elevation_deg, cfg.specular_range_m, cfg.specular_amplitude});
        break;
    case Material::Element: {
        // joint lines at offset + k * spacing inside the field
        const bool alt = std::bernoulli_distribution(cfg.element_alt_probability)(rng);
        const double r_lo = alt ? cfg.element_alt_range_min_m : cfg.element_range_min_m;
        const double r_hi = alt ? cfg.element_alt_range_max_m : cfg.element_range_max_m;
        const double offset = cfg.element_offset_deg;
        const double first =
            offset - cfg.element_spacing_deg * std::floor((offset + cfg.field_azimuth_deg) / cfg.element_spacing_deg);
        for (double line = first; line <= cfg.field_azimuth_deg; line += cfg.element_spacing_deg) {
            for (int i = 0; i < cfg.element_per_line; ++i) {
                const double az = clamp_angle(line + f.normal(0.0, cfg.element_jitter_deg));
                const double el = f.elevation();
                const double r = f.range(r_lo, r_hi);
                out.push_back({az, el, r, cfg.element_amplitude});
            }
        }
        break;
    }
    }
}

void add_damage(Scene& scene, Damage d, const SignatureConfig& cfg, Rng& rng) {
    FieldSampler f{cfg, rng};
    auto& out = scene.reflectors;
    switch (d) {
    case Damage::Pothole: {
        const double az0 = f.uniform(-cfg.field_azimuth_deg + cfg.pothole_radius_deg, cfg.field_azimuth_deg - cfg.pothole_radius_deg);
        const double el0 = f.uniform(-cfg.field_elevation_deg + cfg.pothole_radius_deg, cfg.field_elevation_deg - cfg.pothole_radius_deg);
        const double r0 = f.range();
        for (int k = 0; k < cfg.pothole_edge_count; ++k) {
            const double theta = 2 * std::numbers::pi * k / cfg.pothole_edge_count;
            out.push_back({clamp_angle(az0 + cfg.pothole_radius_deg * std::cos(theta)),
                           clamp_angle(el0 + cfg.pothole_radius_deg * std::sin(theta)), r0 + f.uniform(-0.02, 0.02),
                           cfg.pothole_amplitude});
        }
        break;
    }
    case Damage::Crack: {
        const double az0 = f.azimuth(), el0 = f.elevation(), r0 = f.range();
        const double theta = f.uniform(0.0, std::numbers::pi);
        for (int k = 0; k < cfg.crack_count; ++k) {
            const double t = cfg.crack_length_deg * (static_cast<double>(k) / std::max(1, cfg.crack_count - 1) - 0.5);
            out.push_back({clamp_angle(az0 + t * std::cos(theta)), clamp_angle(el0 + t * std::sin(theta)), r0,
                           cfg.crack_amplitude});
        }
        break;
    }
    case Damage::AlligatorCrack: {
        const double az0 = f.azimuth(), el0 = f.elevation(), r0 = f.range();
        const double span = cfg.alligator_cell_deg * (cfg.alligator_chains - 1);
        for (int chain = 0; chain < cfg.alligator_chains; ++chain) {
            const double across = -span / 2 + cfg.alligator_cell_deg * chain;
            for (int k = 0; k < cfg.alligator_per_chain; ++k) {
                const double along = span * (static_cast<double>(k) / std::max(1, cfg.alligator_per_chain - 1) - 0.5);
                out.push_back({clamp_angle(az0 + along), clamp_angle(el0 + across), r0, cfg.alligator_amplitude});
                out.push_back({clamp_angle(az0 + across), clamp_angle(el0 + along), r0, cfg.alligator_amplitude});
            }
        }
        break;
    }
    case Damage::Patch: {
        const double half = cfg.patch_size_deg / 2;
        const double az0 = f.uniform(-cfg.field_azimuth_deg + half, cfg.field_azimuth_deg - half);
        const double el0 = f.uniform(-cfg.field_elevation_deg + half, cfg.field_elevation_deg - half);
        for (int k = 0; k < cfg.patch_count; ++k) {
            const double az = az0 + f.uniform(-half, half), el = el0 + f.uniform(-half, half);
            out.push_back({clamp_angle(az), clamp_angle(el), f.range(), cfg.patch_amplitude});
        }
        break;
    }
    }
}

// Band-limited oversampled copy of the template (Lanczos kernel, a = 8), read back by
// linear interpolation for fractional-delay placement.
class OversampledTemplate {
public:
    static constexpr int kFactor = 16;
    static constexpr int kLobes = 8;

    explicit OversampledTemplate(const Waveform& w) : length_(w.size()) {
        const long m = static_cast<long>(w.size());
        table_.resize(static_cast<std::size_t>(m > 0 ? (m - 1) * kFactor + 1 : 0));
        for (std::size_t j = 0; j < table_.size(); ++j) {
            const double t = static_cast<double>(j) / kFactor;
            if (j % kFactor == 0) {
                table_[j] = w.samples[j / kFactor];
                continue;
            }
            const long base = static_cast<long>(std::floor(t));
            double acc = 0;
            for (long k = base - kLobes + 1; k <= base + kLobes; ++k) {
                if (k < 0 || k >= m) continue;
                acc += w.samples[static_cast<std::size_t>(k)] * lanczos(t - static_cast<double>(k));
            }
            table_[j] = acc;
        }
    }

    std::size_t length() const noexcept { return length_; }

    /// Template value at fractional sample position t in [0, length-1].
    double at(double t) const noexcept {
        const double pos = t * kFactor;
        const auto i = static_cast<std::size_t>(pos);
        if (i + 1 >= table_.size()) return table_.empty() ? 0.0 : table_.back();
        const double frac = pos - static_cast<double>(i);
        return table_[i] + (table_[i + 1] - table_[i]) * frac;
    }

private:
    static double lanczos(double x) noexcept {
        if (x == 0) return 1.0;
        if (std::abs(x) >= kLobes) return 0.0;
        const double px = std::numbers::pi * x;
        return kLobes * std::sin(px) * std::sin(px / kLobes) / (px * px);
    }

    std::size_t length_;
    std::vector<double> table_;
};

struct EchoPath {
    Vec3 position;
    double amplitude;
};

void render_channel(const std::vector<EchoPath>& paths, const Vec3& mic, const OversampledTemplate& tmpl, double fs,
                    double c, std::vector<double>& out) {
    const long n = static_cast<long>(out.size());
    const double last = static_cast<double>(tmpl.length()) - 1.0;
    for (const auto& e : paths) {
        const double dist = e.position.norm() + (e.position - mic).norm();
        const double onset = dist / c * fs;
        const long first = static_cast<long>(std::ceil(onset));
        for (long i = std::max(0L, first); i < n; ++i) {
            const double t = static_cast<double>(i) - onset;
            if (t > last) break;
            out[static_cast<std::size_t>(i)] += e.amplitude * tmpl.at(t);
        }
    }
}

} // namespace

Scene make_scene(Material material, std::span<const Damage> damages, std::uint64_t seed, const SignatureConfig& cfg) {
    Scene scene;
    scene.material = material;
    scene.seed = seed;
    std::set<Damage> unique(damages.begin(), damages.end());
    scene.damages.assign(unique.begin(), unique.end());
    auto base_rng = make_rng(seed, "scene.base");
    add_base_field(scene, cfg, base_rng);
    for (auto d : scene.damages) {
        auto rng = make_rng(seed, "scene.damage", static_cast<std::uint64_t>(d));
        add_damage(scene, d, cfg, rng);
    }
    return scene;
}

std::vector<Waveform> render_echoes(const Scene& scene, const ArrayGeometry& geom, const Waveform& chirp, double snr_db,
                                    std::uint64_t seed, std::size_t record_length, Exec exec) {
    geom.validate();
    chirp.validate();
    if (scene.reflectors.empty()) throw ParameterError("scene has no reflectors");
    if (record_length == 0) throw ParameterError("record length must be positive");
    const double fs = chirp.sample_rate;
    const double c = geom.speed_of_sound;
    const double max_range = c * (static_cast<double>(record_length) / fs) / 2;

    std::vector<EchoPath> paths;
    paths.reserve(scene.reflectors.size());
    double strongest = 0;
    for (const auto& r : scene.reflectors) {
        if (!(r.range_m > 0)) throw ParameterError("reflector range must be positive");
        if (r.range_m > max_range)
            throw ParameterError("reflector at " + std::to_string(r.range_m) + " m is beyond the unambiguous range of " +
                                 std::to_string(max_range) + " m");
        if (!(r.amplitude >= 0)) throw ParameterError("reflector amplitude must be nonnegative");
        const Direction dir{r.azimuth_deg, r.elevation_deg};
        dir.validate();
        const double amp = r.amplitude / (r.range_m * r.range_m);
        strongest = std::max(strongest, amp);
        paths.push_back({dir.unit_vector() * r.range_m, amp});
    }

    const OversampledTemplate tmpl(chirp);
    const long mics = static_cast<long>(geom.positions.size());
    std::vector<Waveform> out(geom.positions.size(), Waveform{std::vector<double>(record_length, 0.0), fs});
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (long m = 0; m < mics; ++m) render_channel(paths, geom.positions[m], tmpl, fs, c, out[m].samples);
    } else {
        for (long m = 0; m < mics; ++m) render_channel(paths, geom.positions[m], tmpl, fs, c, out[m].samples);
    }

    if (std::isfinite(snr_db) && strongest > 0) {
        const double sigma = strongest / std::pow(10.0, snr_db / 20.0);
        auto rng = make_rng(seed, "render.noise");
        std::normal_distribution<double> noise(0.0, sigma);
        for (auto& ch : out)
            for (auto& v : ch.samples) v += noise(rng);
    }
    return out;
}

// ---------------------------------------------------------------------------------------

std::vector<std::string> canonical_class_order(std::vector<std::string> names) {
    auto rank = [](const std::string& s) -> std::pair<int, std::string> {
        if (auto m = parse_material(s)) return {static_cast<int>(*m), ""};
        if (auto d = parse_damage(s)) return {10 + static_cast<int>(*d), ""};
        return {100, s};
    };
    std::sort(names.begin(), names.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
}

std::string encode_manifest(const DatasetManifest& manifest) {
    std::string out;
    for (const auto& e : manifest.entries) {
        nlohmann::ordered_json j;
        j["path"] = e.path;
        j["timestamp_s"] = e.timestamp_s;
        j["labels"] = e.labels;
        out += j.dump();
        out += '\n';
    }
    return out;
}

DatasetManifest parse_manifest(std::string_view jsonl, const std::string& source) {
    DatasetManifest m;
    std::vector<std::string> all;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.path = j.at("path").get<std::string>();
            e.timestamp_s = j.at("timestamp_s").get<double>();
            e.labels = j.at("labels").get<std::vector<std::string>>();
            all.insert(all.end(), e.labels.begin(), e.labels.end());
            m.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw IoError(source + ":" + std::to_string(line_no) + ": malformed manifest entry: " + ex.what());
        }
    }
    m.class_names = canonical_class_order(std::move(all));
    return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    return parse_manifest(read_file_text(path), path.string());
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    write_file_atomic(path, encode_manifest(manifest));
}

DatasetManifest synth_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir, const ArrayGeometry& geom,
                              const ChirpSpec& chirp_spec, Exec exec) {
    struct Plan {
        Material material;
        std::vector<Damage> damages;
    };
    std::vector<Plan> plan;
    for (auto m : kAllMaterials) {
        auto it = spec.material_counts.find(m);
        if (it == spec.material_counts.end()) continue;
        if (it->second < 0) throw ParameterError("dataset counts must be nonnegative");
        for (int i = 0; i < it->second; ++i) plan.push_back({m, {}});
    }
    for (auto d : kAllDamages) {
        auto it = spec.damage_counts.find(d);
        if (it == spec.damage_counts.end()) continue;
        if (it->second < 0) throw ParameterError("dataset counts must be nonnegative");
        for (int i = 0; i < it->second; ++i) plan.push_back({Material::Asphalt, {d}});
    }
    if (plan.empty()) throw ParameterError("dataset spec requests no samples");

    // materials and extra damages for damage samples, drawn serially for determinism
    auto mix_rng = make_rng(spec.seed, "dataset.mix");
    for (auto& p : plan) {
        if (p.damages.empty()) continue;
        p.material = kAllMaterials[std::uniform_int_distribution<int>(0, 2)(mix_rng)];
        if (std::uniform_real_distribution<double>(0, 1)(mix_rng) < spec.extra_damage_probability) {
            Damage extra = kAllDamages[std::uniform_int_distribution<int>(0, 3)(mix_rng)];
            if (extra != p.damages.front()) p.damages.push_back(extra);
        }
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw IoError("cannot create dataset directory " + out_dir.string() + ": " +
                      (ec ? ec.message() : std::string("not a directory")));

    const auto chirp = generate_chirp(chirp_spec);
    DatasetManifest manifest;
    manifest.entries.resize(plan.size());
    auto time_rng = make_rng(spec.seed, "dataset.time");
    std::uniform_real_distribution<double> jitter(-spec.timestamp_jitter_s, spec.timestamp_jitter_s);
    double t = 0;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        t += 1.0 / spec.frame_rate_hz + jitter(time_rng);
        char name[32];
        std::snprintf(name, sizeof name, "rec_%05zu.pdm", i);
        manifest.entries[i].path = name;
        manifest.entries[i].timestamp_s = t;
    }

    auto make_one = [&](std::size_t i) {
        const auto& p = plan[i];
        const auto scene = make_scene(p.material, p.damages, derive_seed(spec.seed, "dataset.scene", i), spec.signatures);
        auto echoes = render_echoes(scene, geom, chirp, spec.snr_db, derive_seed(spec.seed, "dataset.noise", i),
                                    spec.record_length, Exec::Serial);
        double peak = 0;
        for (const auto& ch : echoes)
            for (double v : ch.samples) peak = std::max(peak, std::abs(v));
        const double gain = peak > 0 ? spec.peak_level / peak : 1.0;
        PdmFrame frame;
        frame.sample_rate = chirp.sample_rate * spec.oversample;
        for (auto& ch : echoes) {
            for (auto& v : ch.samples) v *= gain;
            frame.channels.push_back(pdm_encode(ch, spec.oversample));
        }
        write_pdm_file(out_dir / manifest.entries[i].path, frame);
        manifest.entries[i].labels = scene.labels();
    };

    const long n = static_cast<long>(plan.size());
    if (exec == Exec::Parallel) {
        std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < n; ++i) {
            try {
                make_one(static_cast<std::size_t>(i));
            } catch (...) {
#pragma omp critical(roadsonar_synth_failure)
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
    } else {
        for (long i = 0; i < n; ++i) make_one(static_cast<std::size_t>(i));
    }

    std::vector<std::string> all;
    for (const auto& e : manifest.entries) all.insert(all.end(), e.labels.begin(), e.labels.end());
    manifest.class_names = canonical_class_order(std::move(all));
    write_manifest(out_dir / kManifestName, manifest);
    spdlog::debug("synthesized {} recordings into {}", manifest.entries.size(), out_dir.string());
    return manifest;
}

} // namespace roadsonar
