#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "roadsonar/beamform.hpp"
#include "roadsonar/error.hpp"
#include "roadsonar/fileutil.hpp"

namespace roadsonar {

using nlohmann::json;

ArrayGeometry read_geometry_file(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file_text(path));
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": invalid geometry JSON: " + e.what());
    }
    ArrayGeometry geom;
    try {
        geom.speed_of_sound = doc.value("speed_of_sound", kSpeedOfSound);
        for (const auto& row : doc.at("positions")) {
            if (row.size() != 3) throw IoError(path.string() + ": geometry rows need x, y, z");
            geom.positions.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>()});
        }
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed geometry: " + e.what());
    }
    geom.validate();
    return geom;
}

void write_geometry_file(const std::filesystem::path& path, const ArrayGeometry& geom) {
    json doc;
    doc["speed_of_sound"] = geom.speed_of_sound;
    doc["positions"] = json::array();
    for (const auto& p : geom.positions) doc["positions"].push_back({p.x, p.y, p.z});
    write_file_atomic(path, doc.dump(2) + "\n");
}

std::vector<std::uint8_t> encode_scape_file(const Energyscape& scape) {
    ByteWriter w;
    w.buffer().reserve(12 + 4 * static_cast<std::size_t>(scape.values.size()));
    w.put_u32(static_cast<std::uint32_t>(scape.rows()));
    w.put_u32(static_cast<std::uint32_t>(scape.cols()));
    w.put_f32(static_cast<float>(scape.range_resolution));
    const double* v = scape.values.data();
    for (Eigen::Index i = 0; i < scape.values.size(); ++i) w.put_f32(static_cast<float>(v[i]));
    return std::move(w.buffer());
}

namespace {

DirectionList directions_for_rows(Eigen::Index rows) {
    const auto def = DirectionList::grid();
    return static_cast<Eigen::Index>(def.size()) == rows ? def : DirectionList{};
}

} // namespace

Energyscape decode_scape_file(std::span<const std::uint8_t> bytes, const std::string& source) {
    ByteReader r(bytes, source);
    const std::uint32_t rows = r.get_u32();
    const std::uint32_t cols = r.get_u32();
    const float res = r.get_f32();
    if (r.remaining() != 4ULL * rows * cols) throw IoError(source + ": energyscape payload size does not match header");
    Energyscape scape;
    scape.values.resize(rows, cols);
    scape.range_resolution = res;
    double* v = scape.values.data();
    for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * cols; ++i) v[i] = r.get_f32();
    scape.directions = directions_for_rows(rows);
    return scape;
}

void write_scape_file(const std::filesystem::path& path, const Energyscape& scape) {
    write_file_atomic(path, encode_scape_file(scape));
}

Energyscape read_scape_file(const std::filesystem::path& path) {
    return decode_scape_file(read_file_bytes(path), path.string());
}

// CSV layout: first line "# range_resolution=<m>", then one comma-separated row per direction.
void write_scape_csv(const std::filesystem::path& path, const Energyscape& scape) {
    std::string text = "# range_resolution=" + std::to_string(scape.range_resolution) + "\n";
    char buf[32];
    for (Eigen::Index r = 0; r < scape.rows(); ++r) {
        for (Eigen::Index c = 0; c < scape.cols(); ++c) {
            if (c) text += ',';
            // f32 precision, shortest round-trip form
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, static_cast<float>(scape.values(r, c)));
            text.append(buf, end);
        }
        text += '\n';
    }
    write_file_atomic(path, text);
}

Energyscape read_scape_csv(const std::filesystem::path& path) {
    std::istringstream in(read_file_text(path));
    Energyscape scape;
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# range_resolution=", 0) == 0) {
            scape.range_resolution = std::stod(line.substr(19));
            continue;
        }
        std::vector<double> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const auto next = line.find(',', pos);
            const auto field = line.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
            float v = 0;
            auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
            if (ec != std::errc()) throw IoError(path.string() + ": bad number '" + field + "'");
            row.push_back(v);
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size()) throw IoError(path.string() + ": ragged CSV rows");
        rows.push_back(std::move(row));
    }
    scape.values.resize(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) scape.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    scape.directions = directions_for_rows(scape.rows());
    return scape;
}

} // namespace roadsonar
