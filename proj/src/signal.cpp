#include "roadsonar/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fft.hpp"
#include "roadsonar/error.hpp"

namespace roadsonar {

namespace {

constexpr std::size_t kDirectCorrelationLimit = 4096;
// 3-tap droop compensator [-a, 1 + 2a, -a]; flattens the CIC^4 passband to within ~1%
// over 20-50 kHz at 450 kHz output rate.
constexpr double kDroopTap = 0.18;

} // namespace

void Waveform::validate() const {
    if (!(sample_rate > 0) || !std::isfinite(sample_rate)) throw ParameterError("waveform sample rate must be positive");
    for (double v : samples)
        if (!std::isfinite(v)) throw ParameterError("waveform contains non-finite samples");
}

void ChirpSpec::validate() const {
    if (!(sample_rate_hz > 0)) throw ParameterError("chirp sample rate must be positive");
    const double nyquist = sample_rate_hz / 2;
    if (!(f_start_hz > 0 && f_start_hz < nyquist)) throw ParameterError("chirp f_start must lie in (0, fs/2)");
    if (!(f_end_hz > 0 && f_end_hz < nyquist)) throw ParameterError("chirp f_end must lie in (0, fs/2)");
    if (!(duration_s > 0)) throw ParameterError("chirp duration must be positive");
}

std::size_t ChirpSpec::sample_count() const {
    return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
}

double ChirpSpec::instantaneous_frequency(double t) const {
    return f_start_hz * f_end_hz * duration_s / (f_end_hz * duration_s + (f_start_hz - f_end_hz) * t);
}

double ChirpSpec::phase(double t) const {
    const double f0 = f_start_hz, f1 = f_end_hz, T = duration_s;
    if (f0 == f1) return 2 * std::numbers::pi * f0 * t;
    const double k = f0 * f1 * T / (f0 - f1);
    return 2 * std::numbers::pi * k * std::log((f1 * T + (f0 - f1) * t) / (f1 * T));
}

void PdmFrame::validate() const {
    if (!(sample_rate > 0)) throw ParameterError("PDM sample rate must be positive");
    if (channels.empty()) throw ParameterError("PDM frame has no channels");
    const std::size_t n = channels.front().size();
    for (const auto& ch : channels) {
        if (ch.size() != n) throw ParameterError("PDM channels differ in length");
        for (auto b : ch)
            if (b > 1) throw ParameterError("PDM bit values must be 0 or 1");
    }
}

Waveform generate_chirp(const ChirpSpec& spec) {
    spec.validate();
    Waveform w;
    w.sample_rate = spec.sample_rate_hz;
    w.samples.resize(spec.sample_count());
    for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = std::sin(spec.phase(static_cast<double>(i) / spec.sample_rate_hz));
    return w;
}

PdmBits pdm_encode(const Waveform& w, int oversample) {
    w.validate();
    if (oversample < 2) throw ParameterError("PDM oversample factor must be >= 2");
    for (double v : w.samples)
        if (std::abs(v) > 1.0) throw ParameterError("PDM encoder input amplitude exceeds 1");

    const std::size_t n = w.size();
    PdmBits bits(n * static_cast<std::size_t>(oversample));
    double acc = 0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = w.samples[i];
        const double b = (i + 1 < n) ? w.samples[i + 1] : a;
        for (int j = 0; j < oversample; ++j) {
            acc += a + (b - a) * j / oversample;
            const bool one = acc >= 0;
            acc -= one ? 1.0 : -1.0;
            bits[k++] = one ? 1 : 0;
        }
    }
    return bits;
}

namespace {

int decimation_factor(double input_rate, double output_rate) {
    if (!(input_rate > 0) || !(output_rate > 0)) throw ParameterError("PDM rates must be positive");
    const double ratio = input_rate / output_rate;
    const double r = std::round(ratio);
    if (r < 1 || std::abs(ratio - r) > 1e-9 * ratio)
        throw ParameterError("PDM decimation factor " + std::to_string(ratio) + " is not an integer");
    return static_cast<int>(r);
}

// Four cascaded boxes of length d, normalized to unit DC gain. Length 4(d-1)+1.
std::vector<double> cic_kernel(int d) {
    std::vector<double> h{1.0};
    for (int stage = 0; stage < 4; ++stage) {
        std::vector<double> next(h.size() + static_cast<std::size_t>(d) - 1, 0.0);
        for (std::size_t i = 0; i < h.size(); ++i)
            for (int j = 0; j < d; ++j) next[i + static_cast<std::size_t>(j)] += h[i];
        h = std::move(next);
    }
    const double norm = std::pow(static_cast<double>(d), 4);
    for (auto& v : h) v /= norm;
    return h;
}

} // namespace

Waveform pdm_decode_channel(std::span<const std::uint8_t> bits, double input_rate_hz, double output_rate_hz) {
    const int d = decimation_factor(input_rate_hz, output_rate_hz);
    const auto h = cic_kernel(d);
    const long center = 2L * (d - 1); // group delay of the cascade, in input samples
    const long n_in = static_cast<long>(bits.size());
    const std::size_t n_out = bits.size() / static_cast<std::size_t>(d);

    std::vector<double> raw(n_out);
    for (std::size_t n = 0; n < n_out; ++n) {
        const long base = static_cast<long>(n) * d - center;
        double acc = 0;
        for (std::size_t k = 0; k < h.size(); ++k) {
            const long idx = base + static_cast<long>(k);
            if (idx < 0 || idx >= n_in) continue;
            acc += bits[static_cast<std::size_t>(idx)] ? h[k] : -h[k];
        }
        raw[n] = acc;
    }

    Waveform out;
    out.sample_rate = output_rate_hz;
    out.samples.resize(n_out);
    for (std::size_t n = 0; n < n_out; ++n) {
        const double prev = raw[n == 0 ? 0 : n - 1];
        const double next = raw[n + 1 < n_out ? n + 1 : n];
        out.samples[n] = (1 + 2 * kDroopTap) * raw[n] - kDroopTap * (prev + next);
    }
    return out;
}

std::vector<Waveform> pdm_decode(const PdmFrame& frame, double output_rate_hz, Exec exec) {
    frame.validate();
    decimation_factor(frame.sample_rate, output_rate_hz);
    const long n = static_cast<long>(frame.channel_count());
    std::vector<Waveform> out(frame.channel_count());
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (long c = 0; c < n; ++c) out[c] = pdm_decode_channel(frame.channels[c], frame.sample_rate, output_rate_hz);
    } else {
        for (long c = 0; c < n; ++c) out[c] = pdm_decode_channel(frame.channels[c], frame.sample_rate, output_rate_hz);
    }
    return out;
}

namespace {

void check_matched_inputs(const Waveform& signal, const Waveform& templ) {
    if (signal.sample_rate != templ.sample_rate) throw ParameterError("matched filter: sample-rate mismatch");
    if (templ.size() > signal.size()) throw ParameterError("matched filter: template longer than signal");
    if (templ.size() == 0) throw ParameterError("matched filter: empty template");
}

Waveform correlate_direct(const Waveform& signal, const Waveform& templ) {
    const std::size_t n = signal.size(), m = templ.size();
    Waveform out{std::vector<double>(n, 0.0), signal.sample_rate};
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t len = std::min(m, n - k);
        double acc = 0;
        for (std::size_t j = 0; j < len; ++j) acc += signal.samples[k + j] * templ.samples[j];
        out.samples[k] = acc;
    }
    return out;
}

Waveform correlate_spectral(const Waveform& signal, std::span<const detail::Complex> templ_spec, std::size_t fft_len) {
    auto spec = detail::rfft(signal.samples, fft_len);
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= std::conj(templ_spec[i]);
    auto full = detail::irfft(spec, fft_len);
    full.resize(signal.size());
    return {std::move(full), signal.sample_rate};
}

} // namespace

Waveform matched_filter(const Waveform& signal, const Waveform& templ) {
    check_matched_inputs(signal, templ);
    if (signal.size() <= kDirectCorrelationLimit) return correlate_direct(signal, templ);
    const std::size_t len = detail::next_pow2(signal.size() + templ.size() - 1);
    const auto tspec = detail::rfft(templ.samples, len);
    return correlate_spectral(signal, tspec, len);
}

std::vector<Waveform> matched_filter_channels(std::span<const Waveform> channels, const Waveform& templ, Exec exec) {
    for (const auto& ch : channels) check_matched_inputs(ch, templ);
    std::vector<Waveform> out(channels.size());
    const long n = static_cast<long>(channels.size());
    if (n == 0) return out;
    std::size_t max_len = 0;
    for (const auto& ch : channels) max_len = std::max(max_len, ch.size());
    if (max_len <= kDirectCorrelationLimit) {
        for (long c = 0; c < n; ++c) out[c] = correlate_direct(channels[c], templ);
        return out;
    }
    const std::size_t len = detail::next_pow2(max_len + templ.size() - 1);
    const auto tspec = detail::rfft(templ.samples, len);
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (long c = 0; c < n; ++c) out[c] = correlate_spectral(channels[c], tspec, len);
    } else {
        for (long c = 0; c < n; ++c) out[c] = correlate_spectral(channels[c], tspec, len);
    }
    return out;
}

Waveform envelope(const Waveform& signal) {
    const std::size_t n = signal.size();
    if (n < 8) throw ParameterError("envelope: input shorter than 8 samples");
    auto half = detail::rfft(signal.samples, n);
    std::vector<detail::Complex> full(n, detail::Complex{});
    full[0] = half[0];
    const std::size_t upper = (n % 2 == 0) ? n / 2 : (n + 1) / 2;
    for (std::size_t k = 1; k < upper; ++k) full[k] = 2.0 * half[k];
    if (n % 2 == 0) full[n / 2] = half[n / 2];
    const auto analytic = detail::ifft(full);
    Waveform out{std::vector<double>(n), signal.sample_rate};
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = std::abs(analytic[i]);
    return out;
}

Waveform shift_samples(const Waveform& w, long k) {
    const long n = static_cast<long>(w.size());
    Waveform out{std::vector<double>(w.size(), 0.0), w.sample_rate};
    for (long i = 0; i < n; ++i) {
        const long src = i - k;
        if (src >= 0 && src < n) out.samples[static_cast<std::size_t>(i)] = w.samples[static_cast<std::size_t>(src)];
    }
    return out;
}

} // namespace roadsonar
