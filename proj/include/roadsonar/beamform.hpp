#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "roadsonar/exec.hpp"
#include "roadsonar/signal.hpp"

namespace roadsonar {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kSpeedOfSound = 343.0;

struct Vec3 {
    double x = 0, y = 0, z = 0;
    double dot(const Vec3& o) const noexcept { return x * o.x + y * o.y + z * o.z; }
    Vec3 operator-(const Vec3& o) const noexcept { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const noexcept { return {x * s, y * s, z * s}; }
    double norm() const noexcept;
};

struct ArrayGeometry {
    std::vector<Vec3> positions; // meters
    double speed_of_sound = kSpeedOfSound;

    /// 32 distinct positions, positive speed of sound.
    void validate() const;
    double aperture() const; // largest pairwise distance
};

/// 32 positions by dart-throwing Poisson-disc sampling (8 mm minimum spacing) on an
/// 80 mm x 80 mm plane at z = 0. The shipped default uses seed 0.
ArrayGeometry default_geometry(std::uint64_t seed = 0);

/// Angles in degrees. Unit vector u = (cos el sin az, sin el, cos el cos az); z is boresight.
struct Direction {
    double azimuth_deg = 0;
    double elevation_deg = 0;

    void validate() const;
    Vec3 unit_vector() const;
};

/// Ordered beam directions. For the default grid, index = az_index * elevation_count + el_index,
/// i.e. elevation is the minor (fastest-cycling) index.
struct DirectionList {
    std::vector<Direction> directions;
    int azimuth_count = 0;
    int elevation_count = 0;

    /// Uniform grid over [-90, 90] degrees inclusive on both axes; 13 x 7 = 91 by default.
    static DirectionList grid(int azimuth_count = 13, int elevation_count = 7);

    std::size_t size() const noexcept { return directions.size(); }
    std::size_t index_of(int az_index, int el_index) const noexcept {
        return static_cast<std::size_t>(az_index) * static_cast<std::size_t>(elevation_count) +
               static_cast<std::size_t>(el_index);
    }
};

/// Direction x range intensity matrix.
struct Energyscape {
    RowMatrix values;
    DirectionList directions; // empty when unknown (e.g. loaded with a non-default row count)
    double range_resolution = 0.0; // meters per column

    Eigen::Index rows() const noexcept { return values.rows(); }
    Eigen::Index cols() const noexcept { return values.cols(); }
};

/// Far-field arrival lateness per microphone: -(p_i . u)/c shifted so the minimum is 0.
std::vector<double> steering_delays(const ArrayGeometry& geom, const Direction& dir);

/// Advances channel i by round(delay_i * fs) samples, sums, divides by the channel count.
/// Output length equals input length; the tail is zero-padded.
Waveform delay_and_sum(std::span<const Waveform> channels, std::span<const double> delays);

/// Per direction: delay-and-sum (re-referenced so column k is two-way time k/fs at the array
/// origin), then envelope. Rows follow `dirs` order.
Energyscape build_energyscape(std::span<const Waveform> channels, const DirectionList& dirs,
                              const ArrayGeometry& geom, Exec exec = Exec::Parallel);

struct CfarParams {
    int guard = 4;
    int train = 16;
    double min_floor = 1e-12;
};

/// Each cell divided by the mean of its training cells along range (train cells on each side
/// beyond `guard` cells, truncated at the row ends); the divisor is clamped below by min_floor.
Energyscape cfar_cleanup(const Energyscape& scape, const CfarParams& params = {}, Exec exec = Exec::Parallel);

// Geometry config: JSON {"speed_of_sound": c, "positions": [[x,y,z], ... 32 rows]} in meters.
ArrayGeometry read_geometry_file(const std::filesystem::path& path);
void write_geometry_file(const std::filesystem::path& path, const ArrayGeometry& geom);

// Energyscape dump: u32 rows, u32 cols, f32 range_resolution, then row-major f32 values,
// all little-endian. A CSV alternative carries one row per direction.
std::vector<std::uint8_t> encode_scape_file(const Energyscape& scape);
Energyscape decode_scape_file(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");
void write_scape_file(const std::filesystem::path& path, const Energyscape& scape);
Energyscape read_scape_file(const std::filesystem::path& path);
void write_scape_csv(const std::filesystem::path& path, const Energyscape& scape);
Energyscape read_scape_csv(const std::filesystem::path& path);

} // namespace roadsonar
