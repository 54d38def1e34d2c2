#include <cmath>

#include "roadsonar/error.hpp"
#include "roadsonar/fileutil.hpp"
#include "roadsonar/signal.hpp"

namespace roadsonar {

namespace {
constexpr std::string_view kPdmMagic = "PDM1";
}

std::vector<std::uint8_t> encode_pdm_file(const PdmFrame& frame) {
    frame.validate();
    const double rate = std::round(frame.sample_rate);
    if (rate != frame.sample_rate || rate > 4294967295.0)
        throw ParameterError("PDM sample rate must be an integral Hz value representable as u32");
    const std::size_t bits = frame.bits_per_channel();
    const std::size_t bytes_per_channel = (bits + 7) / 8;

    ByteWriter w;
    w.buffer().reserve(20 + bytes_per_channel * frame.channel_count());
    w.put_bytes(kPdmMagic);
    w.put_u32(static_cast<std::uint32_t>(frame.channel_count()));
    w.put_u64(bits);
    w.put_u32(static_cast<std::uint32_t>(rate));
    auto& buf = w.buffer();
    for (const auto& ch : frame.channels) {
        const std::size_t start = buf.size();
        buf.resize(start + bytes_per_channel, 0);
        for (std::size_t i = 0; i < bits; ++i)
            if (ch[i]) buf[start + i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    return std::move(buf);
}

PdmFrame decode_pdm_file(std::span<const std::uint8_t> bytes, const std::string& source) {
    ByteReader r(bytes, source);
    if (r.get_bytes(4) != kPdmMagic) throw IoError(source + ": not a PDM1 file (bad magic)");
    const std::uint32_t channels = r.get_u32();
    const std::uint64_t bits = r.get_u64();
    const std::uint32_t rate = r.get_u32();
    if (channels == 0 || rate == 0) throw IoError(source + ": PDM header has zero channels or rate");
    const std::uint64_t bytes_per_channel = (bits + 7) / 8;
    if (r.remaining() != bytes_per_channel * channels)
        throw IoError(source + ": PDM payload size does not match header");

    PdmFrame frame;
    frame.sample_rate = rate;
    frame.channels.resize(channels);
    for (auto& ch : frame.channels) {
        auto packed = r.take(bytes_per_channel);
        ch.resize(bits);
        for (std::size_t i = 0; i < bits; ++i) ch[i] = (packed[i / 8] >> (i % 8)) & 1u;
    }
    return frame;
}

void write_pdm_file(const std::filesystem::path& path, const PdmFrame& frame) {
    write_file_atomic(path, encode_pdm_file(frame));
}

PdmFrame read_pdm_file(const std::filesystem::path& path) {
    return decode_pdm_file(read_file_bytes(path), path.string());
}

} // namespace roadsonar
