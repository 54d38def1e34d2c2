#pragma once

// Per-channel time-domain stages: chirp synthesis, 1-bit PDM coding, pulse
// compression and envelope detection.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "roadsonar/exec.hpp"

namespace roadsonar {

inline constexpr std::size_t kChannelCount = 32;
inline constexpr double kPdmRateHz = 4.5e6;
inline constexpr double kBasebandRateHz = 450e3;
inline constexpr std::size_t kBitsPerChannel = 163840;
inline constexpr std::size_t kRecordLength = 16384;
inline constexpr int kDefaultOversample = 10;

struct Waveform {
    std::vector<double> samples;
    double sample_rate = kBasebandRateHz;

    std::size_t size() const noexcept { return samples.size(); }
    /// Throws ParameterError on a non-positive rate or non-finite samples.
    void validate() const;
};

struct ChirpSpec {
    double f_start_hz = 20e3;
    double f_end_hz = 50e3;
    double duration_s = 2.5e-3;
    double sample_rate_hz = kBasebandRateHz;

    void validate() const;
    std::size_t sample_count() const;
    /// f(t) = f0 f1 T / (f1 T + (f0 - f1) t)
    double instantaneous_frequency(double t) const;
    /// Integral of 2*pi*f(t) from 0 to t.
    double phase(double t) const;
};

/// One bit per element (0 or 1).
using PdmBits = std::vector<std::uint8_t>;

struct PdmFrame {
    std::vector<PdmBits> channels;
    double sample_rate = kPdmRateHz;

    std::size_t channel_count() const noexcept { return channels.size(); }
    std::size_t bits_per_channel() const noexcept { return channels.empty() ? 0 : channels.front().size(); }
    /// All channels equal length, positive rate, bits in {0,1}.
    void validate() const;
};

/// Hyperbolic (linear-period) chirp, unit amplitude.
Waveform generate_chirp(const ChirpSpec& spec = {});

/// First-order sigma-delta modulation of the linearly interpolated, `oversample`-times
/// upsampled input. Output holds size() * oversample bits.
PdmBits pdm_encode(const Waveform& w, int oversample = kDefaultOversample);

/// Decodes every channel: bits -> +/-1, four cascaded moving averages of length D
/// (D = frame rate / output rate, must be integral), decimation by D with the
/// filter's group delay removed, then a 3-tap droop compensator.
std::vector<Waveform> pdm_decode(const PdmFrame& frame, double output_rate_hz = kBasebandRateHz,
                                 Exec exec = Exec::Parallel);
Waveform pdm_decode_channel(std::span<const std::uint8_t> bits, double input_rate_hz,
                            double output_rate_hz = kBasebandRateHz);

/// Cross-correlation with `templ`; out[k] = sum_m signal[k+m] * templ[m], same length as
/// `signal`. Frequency-domain evaluation above 4096 samples.
Waveform matched_filter(const Waveform& signal, const Waveform& templ);
std::vector<Waveform> matched_filter_channels(std::span<const Waveform> channels, const Waveform& templ,
                                              Exec exec = Exec::Parallel);

/// Magnitude of the analytic signal.
Waveform envelope(const Waveform& signal);

/// Shifts by `k` samples (positive = later in time), zero-filling vacated samples.
Waveform shift_samples(const Waveform& w, long k);

// PDM file: "PDM1", u32 channel count, u64 bits per channel, u32 sample rate (Hz),
// little-endian, then channel-major bit-packed payload (LSB first, each channel
// padded to a byte boundary).
std::vector<std::uint8_t> encode_pdm_file(const PdmFrame& frame);
PdmFrame decode_pdm_file(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");
void write_pdm_file(const std::filesystem::path& path, const PdmFrame& frame);
PdmFrame read_pdm_file(const std::filesystem::path& path);

} // namespace roadsonar
