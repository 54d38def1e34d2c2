#pragma once

// Synthetic road scenes rendered to microphone signals and PDM recordings.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "roadsonar/beamform.hpp"
#include "roadsonar/signal.hpp"

namespace roadsonar {

enum class Material { Asphalt, Concrete, Element };
/// An empty damage set means "None".
enum class Damage { AlligatorCrack, Pothole, Crack, Patch };

inline constexpr Material kAllMaterials[] = {Material::Asphalt, Material::Concrete, Material::Element};
inline constexpr Damage kAllDamages[] = {Damage::AlligatorCrack, Damage::Pothole, Damage::Crack, Damage::Patch};

std::string_view to_string(Material m) noexcept;
std::string_view to_string(Damage d) noexcept;
std::optional<Material> parse_material(std::string_view s) noexcept;
std::optional<Damage> parse_damage(std::string_view s) noexcept;

struct Reflector {
    double azimuth_deg = 0;
    double elevation_deg = 0;
    double range_m = 1;
    double amplitude = 1;
};

struct Scene {
    std::vector<Reflector> reflectors;
    Material material = Material::Asphalt;
    std::vector<Damage> damages; // sorted, unique
    std::uint64_t seed = 0;

    /// Material name followed by damage names, in enum order.
    std::vector<std::string> labels() const;
};

/// All reflector-field parameters in one place. Angles in degrees, ranges in meters,
/// amplitudes dimensionless (before 1/r^2 spreading).
struct SignatureConfig {
    // extent of the road patch seen by the sensor
    double field_azimuth_deg = 70;
    double field_elevation_deg = 70;
    double range_min_m = 1.0;
    double range_max_m = 3.0;

    // Asphalt: dense fine speckle
    double asphalt_range_min_m = 1.0;
    double asphalt_range_max_m = 3.0;
    int asphalt_count = 1500;
    double asphalt_amplitude = 0.05;
    double asphalt_amplitude_sigma = 0.015;

    // Concrete: sparse strong speckle plus one specular return; a smooth surface only
    // backscatters at steep incidence, so returns stay at near range
    double concrete_range_min_m = 1.0;
    double concrete_range_max_m = 1.6;
    int concrete_count = 30;
    double concrete_amplitude_min = 0.2;
    double concrete_amplitude_max = 0.5;
    double specular_azimuth_deg = 0;
    double specular_elevation_deg = -30;
    double specular_range_m = 1.2;
    double specular_amplitude = 1.0;

    // Element: paver joints as reflector lines at a fixed azimuth spacing. An optional second
    // laying pattern puts the joints in another range band (off by default).
    double element_spacing_deg = 30;
    double element_offset_deg = 0;
    int element_per_line = 200;
    double element_amplitude = 0.15;
    double element_jitter_deg = 1.0;
    double element_range_min_m = 1.0;
    double element_range_max_m = 2.2;
    double element_alt_range_min_m = 2.2;
    double element_alt_range_max_m = 3.0;
    double element_alt_probability = 0.0;

    // Pothole: ring of strong edge reflectors
    int pothole_edge_count = 24;
    double pothole_radius_deg = 6;
    double pothole_amplitude = 0.6;

    // Crack: collinear chain
    int crack_count = 16;
    double crack_length_deg = 40;
    double crack_amplitude = 0.3;

    // Alligator crack: grid of chains
    int alligator_chains = 3;
    int alligator_per_chain = 8;
    double alligator_cell_deg = 8;
    double alligator_amplitude = 0.25;

    // Patch: region with altered speckle density
    double patch_size_deg = 30;
    int patch_count = 80;
    double patch_amplitude = 0.1;
};

/// Deterministic reflector field for a material plus damages.
Scene make_scene(Material material, std::span<const Damage> damages, std::uint64_t seed,
                 const SignatureConfig& cfg = {});

/// Per-microphone echoes: emitter at the origin, path (|r| + |r - p_i|)/c, amplitude / range^2,
/// fractional-delay chirp copies summed per channel, then white noise with standard deviation
/// (strongest echo amplitude) / 10^(snr_db/20). snr_db = +inf disables noise.
std::vector<Waveform> render_echoes(const Scene& scene, const ArrayGeometry& geom, const Waveform& chirp,
                                    double snr_db, std::uint64_t seed, std::size_t record_length = kRecordLength,
                                    Exec exec = Exec::Parallel);

struct ManifestEntry {
    std::string path; // relative to the manifest directory
    double timestamp_s = 0;
    std::vector<std::string> labels;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names; // canonical order of every label present
};

struct DatasetSpec {
    std::map<Material, int> material_counts;  // samples without damage, per material
    std::map<Damage, int> damage_counts;      // samples carrying this damage; material drawn uniformly
    double extra_damage_probability = 0.0;    // chance a damage sample carries one more damage
    double snr_db = 20.0;
    std::uint64_t seed = 0;
    double frame_rate_hz = 10.0;
    double timestamp_jitter_s = 0.01;
    double peak_level = 0.5;                  // per-recording gain so the peak sample has this magnitude
    int oversample = kDefaultOversample;
    std::size_t record_length = kRecordLength;
    SignatureConfig signatures;
};

inline constexpr const char* kManifestName = "manifest.jsonl";

/// Writes one PDM file per sample plus manifest.jsonl into `out_dir`.
DatasetManifest synth_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir,
                              const ArrayGeometry& geom, const ChirpSpec& chirp = {}, Exec exec = Exec::Parallel);

/// Manifest as JSON lines: {"path", "timestamp_s", "labels"}.
std::string encode_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view jsonl, const std::string& source = "<memory>");
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Sorts label names: materials, then damages (enum order), then anything else alphabetically.
std::vector<std::string> canonical_class_order(std::vector<std::string> names);

} // namespace roadsonar
