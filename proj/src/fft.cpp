#include "fft.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

#include <fftw3.h>

namespace roadsonar::detail {
namespace {

struct FftwDeleter {
    void operator()(void* p) const noexcept { fftw_free(p); }
};

template <class T>
using FftwPtr = std::unique_ptr<T[], FftwDeleter>;

template <class T>
FftwPtr<T> fftw_buffer(std::size_t n) {
    auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * std::max<std::size_t>(n, 1)));
    if (p == nullptr) throw std::bad_alloc();
    return FftwPtr<T>(p);
}

enum class PlanKind { R2C, C2R, C2CBackward };

class PlanCache {
public:
    ~PlanCache() {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

    fftw_plan get(PlanKind kind, std::size_t n) {
        std::lock_guard lock(mutex_);
        const auto key = std::make_pair(kind, n);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        const int len = static_cast<int>(n);
        fftw_plan plan = nullptr;
        switch (kind) {
        case PlanKind::R2C: {
            auto in = fftw_buffer<double>(n);
            auto out = fftw_buffer<fftw_complex>(n / 2 + 1);
            plan = fftw_plan_dft_r2c_1d(len, in.get(), out.get(), FFTW_ESTIMATE);
            break;
        }
        case PlanKind::C2R: {
            auto in = fftw_buffer<fftw_complex>(n / 2 + 1);
            auto out = fftw_buffer<double>(n);
            plan = fftw_plan_dft_c2r_1d(len, in.get(), out.get(), FFTW_ESTIMATE);
            break;
        }
        case PlanKind::C2CBackward: {
            auto in = fftw_buffer<fftw_complex>(n);
            auto out = fftw_buffer<fftw_complex>(n);
            plan = fftw_plan_dft_1d(len, in.get(), out.get(), FFTW_BACKWARD, FFTW_ESTIMATE);
            break;
        }
        }
        if (plan == nullptr) throw std::runtime_error("FFTW plan creation failed");
        plans_.emplace(key, plan);
        return plan;
    }

private:
    std::mutex mutex_;
    std::map<std::pair<PlanKind, std::size_t>, fftw_plan> plans_;
};

PlanCache& plans() {
    static PlanCache cache;
    return cache;
}

} // namespace

std::size_t next_pow2(std::size_t n) noexcept {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

std::vector<Complex> rfft(std::span<const double> x, std::size_t n) {
    auto plan = plans().get(PlanKind::R2C, n);
    auto in = fftw_buffer<double>(n);
    auto out = fftw_buffer<fftw_complex>(n / 2 + 1);
    const std::size_t m = std::min(n, x.size());
    std::copy_n(x.data(), m, in.get());
    std::fill(in.get() + m, in.get() + n, 0.0);
    fftw_execute_dft_r2c(plan, in.get(), out.get());
    std::vector<Complex> result(n / 2 + 1);
    std::memcpy(result.data(), out.get(), sizeof(fftw_complex) * result.size());
    return result;
}

std::vector<double> irfft(std::span<const Complex> spectrum, std::size_t n) {
    auto plan = plans().get(PlanKind::C2R, n);
    auto in = fftw_buffer<fftw_complex>(n / 2 + 1);
    auto out = fftw_buffer<double>(n);
    std::memcpy(in.get(), spectrum.data(), sizeof(fftw_complex) * (n / 2 + 1));
    fftw_execute_dft_c2r(plan, in.get(), out.get()); // destroys `in`
    std::vector<double> result(out.get(), out.get() + n);
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : result) v *= scale;
    return result;
}

std::vector<Complex> ifft(std::span<const Complex> spectrum) {
    const std::size_t n = spectrum.size();
    auto plan = plans().get(PlanKind::C2CBackward, n);
    auto in = fftw_buffer<fftw_complex>(n);
    auto out = fftw_buffer<fftw_complex>(n);
    std::memcpy(in.get(), spectrum.data(), sizeof(fftw_complex) * n);
    fftw_execute_dft(plan, in.get(), out.get());
    std::vector<Complex> result(n);
    std::memcpy(result.data(), out.get(), sizeof(fftw_complex) * n);
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : result) v *= scale;
    return result;
}

} // namespace roadsonar::detail
