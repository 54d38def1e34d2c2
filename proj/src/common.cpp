#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>

#include <omp.h>

#include "roadsonar/error.hpp"
#include "roadsonar/exec.hpp"
#include "roadsonar/fileutil.hpp"
#include "roadsonar/rng.hpp"

namespace roadsonar {

int apply_thread_cap_from_env() {
    if (const char* v = std::getenv(kThreadCapEnv); v != nullptr && *v != '\0') {
        char* end = nullptr;
        const long n = std::strtol(v, &end, 10);
        if (end != v && n > 0) omp_set_num_threads(static_cast<int>(n));
    }
    return omp_get_max_threads();
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(splitmix64(root) ^ fnv1a(purpose)) ^ index);
}

// ---------------------------------------------------------------------------------------

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing: " + std::strerror(errno));
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<std::uint8_t> buf(size);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!in) throw IoError("read failed for " + path.string());
    return buf;
}

std::string read_file_text(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

void ByteWriter::put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void ByteWriter::put_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(u);
}

void ByteWriter::put_f64(double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(u);
}

void ByteReader::need(std::size_t n) const {
    if (remaining() < n) throw IoError(source_ + ": truncated file (need " + std::to_string(n) + " more bytes)");
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
}

std::string ByteReader::get_bytes(std::size_t n) {
    auto s = take(n);
    return {s.begin(), s.end()};
}

std::uint32_t ByteReader::get_u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
    return v;
}

std::uint64_t ByteReader::get_u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
}

float ByteReader::get_f32() {
    const std::uint32_t u = get_u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

double ByteReader::get_f64() {
    const std::uint64_t u = get_u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

} // namespace roadsonar
