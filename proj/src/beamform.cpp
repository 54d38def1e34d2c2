#include "roadsonar/beamform.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "roadsonar/error.hpp"
#include "roadsonar/rng.hpp"

namespace roadsonar {

namespace {

constexpr double deg2rad(double d) noexcept { return d * std::numbers::pi / 180.0; }

} // namespace

double Vec3::norm() const noexcept { return std::sqrt(dot(*this)); }

void ArrayGeometry::validate() const {
    if (positions.size() != kChannelCount)
        throw ParameterError("array geometry needs exactly " + std::to_string(kChannelCount) + " positions, got " +
                             std::to_string(positions.size()));
    if (!(speed_of_sound > 0)) throw ParameterError("speed of sound must be positive");
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto& p = positions[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            throw ParameterError("array geometry has a non-finite position");
        for (std::size_t j = 0; j < i; ++j)
            if ((p - positions[j]).norm() == 0) throw ParameterError("array geometry has duplicate positions");
    }
}

double ArrayGeometry::aperture() const {
    double best = 0;
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (std::size_t j = 0; j < i; ++j) best = std::max(best, (positions[i] - positions[j]).norm());
    return best;
}

ArrayGeometry default_geometry(std::uint64_t seed) {
    constexpr double half_side = 0.040;
    constexpr double min_spacing = 0.008;
    auto rng = make_rng(seed, "geometry");
    std::uniform_real_distribution<double> coord(-half_side, half_side);
    ArrayGeometry geom;
    while (geom.positions.size() < kChannelCount) {
        const Vec3 candidate{coord(rng), coord(rng), 0.0};
        const bool ok = std::all_of(geom.positions.begin(), geom.positions.end(),
                                    [&](const Vec3& p) { return (p - candidate).norm() >= min_spacing; });
        if (ok) geom.positions.push_back(candidate);
    }
    return geom;
}

void Direction::validate() const {
    if (!(std::abs(azimuth_deg) <= 90.0) || !(std::abs(elevation_deg) <= 90.0))
        throw ParameterError("direction angles must lie within [-90, 90] degrees");
}

Vec3 Direction::unit_vector() const {
    const double az = deg2rad(azimuth_deg), el = deg2rad(elevation_deg);
    return {std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az)};
}

DirectionList DirectionList::grid(int azimuth_count, int elevation_count) {
    if (azimuth_count < 1 || elevation_count < 1) throw ParameterError("direction grid needs at least one angle per axis");
    auto axis = [](int n, int i) { return n == 1 ? 0.0 : -90.0 + 180.0 * i / (n - 1); };
    DirectionList list;
    list.azimuth_count = azimuth_count;
    list.elevation_count = elevation_count;
    for (int a = 0; a < azimuth_count; ++a)
        for (int e = 0; e < elevation_count; ++e) list.directions.push_back({axis(azimuth_count, a), axis(elevation_count, e)});
    return list;
}

std::vector<double> steering_delays(const ArrayGeometry& geom, const Direction& dir) {
    dir.validate();
    const Vec3 u = dir.unit_vector();
    std::vector<double> delays(geom.positions.size());
    for (std::size_t i = 0; i < delays.size(); ++i) delays[i] = -geom.positions[i].dot(u) / geom.speed_of_sound;
    const double lo = *std::min_element(delays.begin(), delays.end());
    for (auto& d : delays) d -= lo;
    return delays;
}

namespace {

void check_channels(std::span<const Waveform> channels) {
    if (channels.empty()) throw ParameterError("no channels to beamform");
    const auto n = channels.front().size();
    const auto fs = channels.front().sample_rate;
    for (const auto& ch : channels) {
        if (ch.size() != n) throw ParameterError("beamformer channels differ in length");
        if (ch.sample_rate != fs) throw ParameterError("beamformer channels differ in sample rate");
    }
}

// out[n] = sum_i x_i[n + shift_i] / count; shifts may be negative, out-of-range samples are zero.
void sum_shifted(std::span<const Waveform> channels, std::span<const long> shifts, std::vector<double>& out) {
    const long n = static_cast<long>(channels.front().size());
    out.assign(static_cast<std::size_t>(n), 0.0);
    for (std::size_t c = 0; c < channels.size(); ++c) {
        const long s = shifts[c];
        const long lo = std::max(0L, -s);
        const long hi = std::min(n, n - s);
        const double* src = channels[c].samples.data();
        for (long i = lo; i < hi; ++i) out[static_cast<std::size_t>(i)] += src[i + s];
    }
    const double count = static_cast<double>(channels.size());
    for (auto& v : out) v /= count;
}

} // namespace

Waveform delay_and_sum(std::span<const Waveform> channels, std::span<const double> delays) {
    check_channels(channels);
    if (delays.size() != channels.size()) throw ParameterError("delay count does not match channel count");
    const double fs = channels.front().sample_rate;
    std::vector<long> shifts(delays.size());
    for (std::size_t i = 0; i < delays.size(); ++i) {
        if (!(delays[i] >= 0)) throw ParameterError("delay-and-sum delays must be nonnegative");
        shifts[i] = std::lround(delays[i] * fs);
    }
    Waveform out{{}, fs};
    sum_shifted(channels, shifts, out.samples);
    return out;
}

namespace {

// Integer shifts referenced to the array origin: channel i is advanced by round(tau_i * fs)
// where tau_i = -(p_i . u)/c is the plane-wave arrival offset relative to the origin.
std::vector<long> origin_shifts(const ArrayGeometry& geom, const Direction& dir, double fs) {
    const auto delays = steering_delays(geom, dir);
    const Vec3 u = dir.unit_vector();
    double max_proj = -1e300;
    for (const auto& p : geom.positions) max_proj = std::max(max_proj, p.dot(u));
    const double min_tau = -max_proj / geom.speed_of_sound;
    std::vector<long> shifts(delays.size());
    for (std::size_t i = 0; i < delays.size(); ++i) shifts[i] = std::lround((delays[i] + min_tau) * fs);
    return shifts;
}

void energyscape_row(std::span<const Waveform> channels, const ArrayGeometry& geom, const Direction& dir,
                     double* row) {
    const double fs = channels.front().sample_rate;
    const auto shifts = origin_shifts(geom, dir, fs);
    Waveform summed{{}, fs};
    sum_shifted(channels, shifts, summed.samples);
    const auto env = envelope(summed);
    std::copy(env.samples.begin(), env.samples.end(), row);
}

} // namespace

Energyscape build_energyscape(std::span<const Waveform> channels, const DirectionList& dirs, const ArrayGeometry& geom,
                              Exec exec) {
    check_channels(channels);
    if (channels.size() != geom.positions.size()) throw ParameterError("channel count does not match array geometry");
    const long rows = static_cast<long>(dirs.size());
    const long cols = static_cast<long>(channels.front().size());
    Energyscape scape;
    scape.values.resize(rows, cols);
    scape.directions = dirs;
    scape.range_resolution = geom.speed_of_sound / (2.0 * channels.front().sample_rate);
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic)
        for (long r = 0; r < rows; ++r) energyscape_row(channels, geom, dirs.directions[r], scape.values.row(r).data());
    } else {
        for (long r = 0; r < rows; ++r) energyscape_row(channels, geom, dirs.directions[r], scape.values.row(r).data());
    }
    return scape;
}

namespace {

void cfar_row(const double* in, double* out, long n, const CfarParams& p) {
    for (long i = 0; i < n; ++i) {
        double sum = 0;
        long count = 0;
        for (long k = i - p.guard - p.train; k < i - p.guard; ++k) {
            if (k < 0) continue;
            sum += in[k];
            ++count;
        }
        for (long k = i + p.guard + 1; k <= i + p.guard + p.train; ++k) {
            if (k >= n) break;
            sum += in[k];
            ++count;
        }
        const double mean = sum / static_cast<double>(count);
        out[i] = in[i] / std::max(mean, p.min_floor);
    }
}

} // namespace

Energyscape cfar_cleanup(const Energyscape& scape, const CfarParams& params, Exec exec) {
    if (params.train < 1) throw ParameterError("CFAR needs at least one training cell");
    if (params.guard < 0) throw ParameterError("CFAR guard count must be nonnegative");
    if (!(params.min_floor > 0)) throw ParameterError("CFAR min_floor must be positive");
    const long window = 2L * (params.guard + params.train) + 1;
    const long rows = scape.rows(), cols = scape.cols();
    if (cols < window)
        throw ParameterError("CFAR window of " + std::to_string(window) + " cells exceeds row length " +
                             std::to_string(cols));
    Energyscape out;
    out.directions = scape.directions;
    out.range_resolution = scape.range_resolution;
    out.values.resize(rows, cols);
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (long r = 0; r < rows; ++r) cfar_row(scape.values.row(r).data(), out.values.row(r).data(), cols, params);
    } else {
        for (long r = 0; r < rows; ++r) cfar_row(scape.values.row(r).data(), out.values.row(r).data(), cols, params);
    }
    return out;
}

} // namespace roadsonar
