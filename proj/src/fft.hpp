#pragma once

// Thin RAII layer over FFTW. Plans are cached per size and created under a lock;
// execution uses the new-array interface, which FFTW documents as thread-safe.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace roadsonar::detail {

using Complex = std::complex<double>;

/// Forward real transform of `x` zero-padded (or truncated) to `n`; returns n/2 + 1 bins.
std::vector<Complex> rfft(std::span<const double> x, std::size_t n);

/// Inverse of rfft for length n, normalized by 1/n.
std::vector<double> irfft(std::span<const Complex> spectrum, std::size_t n);

/// Inverse complex transform of length spectrum.size(), normalized by 1/n.
std::vector<Complex> ifft(std::span<const Complex> spectrum);

std::size_t next_pow2(std::size_t n) noexcept;

} // namespace roadsonar::detail
