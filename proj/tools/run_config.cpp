#include "run_config.hpp"

#include <cmath>
#include <limits>

#include "roadsonar/error.hpp"
#include "roadsonar/fileutil.hpp"

namespace roadsonar::cli {

namespace {

// Scene signature fields, exposed one-to-one under "signatures.".
#define ROADSONAR_SIGNATURE_FIELDS(X)                                                                      \
    X(field_azimuth_deg) X(field_elevation_deg) X(range_min_m) X(range_max_m) X(asphalt_range_min_m)     \
    X(asphalt_range_max_m) X(asphalt_count) X(asphalt_amplitude) X(asphalt_amplitude_sigma)              \
    X(concrete_range_min_m) X(concrete_range_max_m) X(concrete_count) X(concrete_amplitude_min)          \
    X(concrete_amplitude_max) X(specular_azimuth_deg) X(specular_elevation_deg) X(specular_range_m)      \
    X(specular_amplitude) X(element_spacing_deg) X(element_offset_deg) X(element_per_line)               \
    X(element_amplitude) X(element_jitter_deg) X(element_range_min_m) X(element_range_max_m)             \
    X(element_alt_range_min_m) X(element_alt_range_max_m) X(element_alt_probability)                     \
    X(pothole_edge_count) X(pothole_radius_deg) X(pothole_amplitude) X(crack_count) X(crack_length_deg)  \
    X(crack_amplitude) X(alligator_chains) X(alligator_per_chain) X(alligator_cell_deg)                  \
    X(alligator_amplitude) X(patch_size_deg) X(patch_count) X(patch_amplitude)

std::string damage_key(Damage d) {
    switch (d) {
    case Damage::AlligatorCrack: return "alligator_crack";
    case Damage::Pothole: return "pothole";
    case Damage::Crack: return "crack";
    case Damage::Patch: return "patch";
    }
    return {};
}

std::string material_key(Material m) {
    switch (m) {
    case Material::Asphalt: return "asphalt";
    case Material::Concrete: return "concrete";
    case Material::Element: return "element";
    }
    return {};
}

bool compatible(const Json& slot, const Json& v) {
    if (slot.is_boolean()) return v.is_boolean();
    if (slot.is_number_integer()) return v.is_number_integer();
    if (slot.is_number()) return v.is_number();
    if (slot.is_string()) return v.is_string();
    if (slot.is_array()) return v.is_array();
    return false;
}

const Json& at(const Json& c, const char* section, const char* key) {
    const std::string dotted = std::string(section) + "." + key;
    if (!c.contains(section) || !c[section].contains(key)) throw ParameterError("missing config key " + dotted);
    return c[section][key];
}

template <class T>
T num(const Json& c, const char* section, const char* key) {
    const auto& v = at(c, section, key);
    if (!v.is_number()) throw ParameterError(std::string("config key ") + section + "." + key + " must be a number");
    if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer())
            throw ParameterError(std::string("config key ") + section + "." + key + " must be an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (v.get<long long>() < 0)
                throw ParameterError(std::string("config key ") + section + "." + key + " must be non-negative");
        }
    } else {
        if (!std::isfinite(v.get<double>()))
            throw ParameterError(std::string("config key ") + section + "." + key + " must be finite");
    }
    return v.get<T>();
}

std::string str(const Json& c, const char* section, const char* key) {
    const auto& v = at(c, section, key);
    if (!v.is_string()) throw ParameterError(std::string("config key ") + section + "." + key + " must be a string");
    return v.get<std::string>();
}

} // namespace

Json default_config() {
    Json c;
    c["run"] = {{"seed", 0}, {"task", "material"}};
    c["paths"] = {{"dataset", "data"},           {"scapes", "work/scapes"},     {"features", "work/features"},
                  {"model", "work/model.ovr"},   {"split", "work/split.json"},  {"output", "work/out"}};

    const DatasetSpec ds;
    Json sim;
    for (const auto m : kAllMaterials) sim[material_key(m)] = 150;
    for (const auto d : kAllDamages) sim[damage_key(d)] = 0;
    sim["extra_damage_probability"] = ds.extra_damage_probability;
    sim["snr_db"] = ds.snr_db;
    sim["frame_rate_hz"] = ds.frame_rate_hz;
    sim["timestamp_jitter_s"] = ds.timestamp_jitter_s;
    sim["peak_level"] = ds.peak_level;
    sim["oversample"] = ds.oversample;
    sim["record_length"] = ds.record_length;
    c["simulate"] = sim;

    const SignatureConfig sig;
    Json js;
#define X(f) js[#f] = sig.f;
    ROADSONAR_SIGNATURE_FIELDS(X)
#undef X
    c["signatures"] = js;

    const ChirpSpec ch;
    c["chirp"] = {{"f_start_hz", ch.f_start_hz}, {"f_end_hz", ch.f_end_hz}, {"duration_s", ch.duration_s}};
    c["geometry"] = {{"seed", 0}, {"file", ""}};
    const CfarParams cf;
    c["cfar"] = {{"guard", cf.guard}, {"train", cf.train}, {"min_floor", cf.min_floor}};
    c["features"] = {{"pool_kernel", kPoolKernel}, {"components", kComponents}};
    c["split"] = {{"folds", 10}, {"test_fraction", 0.1}, {"min_class_count", 100}};
    const LogisticOptions lo;
    const ForestOptions fo;
    c["model"] = {{"kind", "forest"},           {"c_reg", lo.c_reg},           {"tolerance", lo.tolerance},
                  {"max_iterations", lo.max_iterations}, {"n_trees", fo.n_trees}, {"max_features", fo.max_features},
                  {"bootstrap", fo.bootstrap}};
    c["train"] = {{"fold", -1}};
    c["evaluate"] = {{"subset", "test"}};
    c["experiment"] = {{"seeds", Json::array({0, 1})}, {"models", Json::array({"logreg", "tree", "forest"})}};
    return c;
}

std::vector<std::string> section_keys(const Json& config, const std::string& section) {
    std::vector<std::string> out;
    for (const auto& [k, v] : config.at(section).items()) out.push_back(section + "." + k);
    return out;
}

void merge_config(Json& config, const Json& overlay, const std::string& source) {
    if (!overlay.is_object()) throw ParameterError(source + ": config must be a JSON object");
    for (const auto& [section, body] : overlay.items()) {
        if (!config.contains(section)) throw ParameterError(source + ": unknown config section '" + section + "'");
        if (!body.is_object()) throw ParameterError(source + ": section '" + section + "' must be an object");
        for (const auto& [key, value] : body.items()) {
            if (!config[section].contains(key))
                throw ParameterError(source + ": unknown config key '" + section + "." + key + "'");
            auto& slot = config[section][key];
            if (!compatible(slot, value))
                throw ParameterError(source + ": config key '" + section + "." + key + "' has the wrong type");
            slot = value;
        }
    }
}

void merge_config_file(Json& config, const std::filesystem::path& path) {
    const auto text = read_file_text(path);
    Json overlay;
    try {
        overlay = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ParameterError(path.string() + ": " + e.what());
    }
    merge_config(config, overlay, path.string());
}

void set_key(Json& config, const std::string& dotted, const std::string& text) {
    const auto dot = dotted.find('.');
    if (dot == std::string::npos) throw ParameterError("config key '" + dotted + "' needs a section");
    const auto section = dotted.substr(0, dot);
    const auto key = dotted.substr(dot + 1);
    if (!config.contains(section) || !config[section].contains(key))
        throw ParameterError("unknown config key '" + dotted + "'");
    const auto& slot = config[section][key];
    Json value;
    if (slot.is_string()) {
        value = text;
    } else {
        try {
            value = Json::parse(text);
        } catch (const Json::parse_error&) {
            throw ParameterError("cannot parse value '" + text + "' for " + dotted);
        }
        if (slot.is_number_float() && value.is_number()) value = value.get<double>();
    }
    merge_config(config, Json{{section, {{key, value}}}}, "--" + dotted);
}

ArrayGeometry RunConfig::geometry() const {
    if (!geometry_file.empty()) return read_geometry_file(geometry_file);
    return default_geometry(geometry_seed);
}

RunConfig resolve(const Json& c) {
    RunConfig r;
    r.seed = num<std::uint64_t>(c, "run", "seed");
    const auto task = parse_task(str(c, "run", "task"));
    if (!task) throw ParameterError("run.task must be 'material' or 'damage'");
    r.experiment.task = *task;

    r.dataset_dir = str(c, "paths", "dataset");
    r.scape_dir = str(c, "paths", "scapes");
    r.feature_dir = str(c, "paths", "features");
    r.model_path = str(c, "paths", "model");
    r.split_path = str(c, "paths", "split");
    r.output_dir = str(c, "paths", "output");

    auto& ds = r.dataset;
    for (const auto m : kAllMaterials) {
        const auto k = material_key(m);
        const int n = num<int>(c, "simulate", k.c_str());
        if (n < 0) throw ParameterError("simulate." + k + " must be non-negative");
        if (n > 0) ds.material_counts[m] = n;
    }
    for (const auto d : kAllDamages) {
        const auto k = damage_key(d);
        const int n = num<int>(c, "simulate", k.c_str());
        if (n < 0) throw ParameterError("simulate." + k + " must be non-negative");
        if (n > 0) ds.damage_counts[d] = n;
    }
    ds.extra_damage_probability = num<double>(c, "simulate", "extra_damage_probability");
    ds.snr_db = num<double>(c, "simulate", "snr_db");
    ds.frame_rate_hz = num<double>(c, "simulate", "frame_rate_hz");
    ds.timestamp_jitter_s = num<double>(c, "simulate", "timestamp_jitter_s");
    ds.peak_level = num<double>(c, "simulate", "peak_level");
    ds.oversample = num<int>(c, "simulate", "oversample");
    ds.record_length = num<std::size_t>(c, "simulate", "record_length");
    ds.seed = r.seed;
#define X(f) ds.signatures.f = num<decltype(ds.signatures.f)>(c, "signatures", #f);
    ROADSONAR_SIGNATURE_FIELDS(X)
#undef X

    r.chirp.f_start_hz = num<double>(c, "chirp", "f_start_hz");
    r.chirp.f_end_hz = num<double>(c, "chirp", "f_end_hz");
    r.chirp.duration_s = num<double>(c, "chirp", "duration_s");
    r.chirp.validate();

    r.geometry_seed = num<std::uint64_t>(c, "geometry", "seed");
    r.geometry_file = str(c, "geometry", "file");

    r.cfar.guard = num<int>(c, "cfar", "guard");
    r.cfar.train = num<int>(c, "cfar", "train");
    r.cfar.min_floor = num<double>(c, "cfar", "min_floor");
    if (r.cfar.guard < 0 || r.cfar.train < 1 || !(r.cfar.min_floor > 0))
        throw ParameterError("cfar needs guard >= 0, train >= 1 and min_floor > 0");

    auto& ex = r.experiment;
    ex.pool_kernel = num<int>(c, "features", "pool_kernel");
    ex.components = num<int>(c, "features", "components");
    if (ex.pool_kernel < 1 || ex.components < 1) throw ParameterError("features.pool_kernel and features.components must be >= 1");
    ex.folds = num<int>(c, "split", "folds");
    ex.test_fraction = num<double>(c, "split", "test_fraction");
    ex.min_class_count = num<int>(c, "split", "min_class_count");
    if (ex.folds < 2) throw ParameterError("split.folds must be >= 2");
    if (!(ex.test_fraction >= 0 && ex.test_fraction < 1)) throw ParameterError("split.test_fraction must lie in [0, 1)");

    const auto kind = parse_model_kind(str(c, "model", "kind"));
    if (!kind) throw ParameterError("model.kind must be one of logreg, tree, forest");
    r.model = *kind;
    ex.logreg.c_reg = num<double>(c, "model", "c_reg");
    ex.logreg.tolerance = num<double>(c, "model", "tolerance");
    ex.logreg.max_iterations = num<int>(c, "model", "max_iterations");
    if (!(ex.logreg.c_reg > 0)) throw ParameterError("model.c_reg must be positive");
    ex.forest.n_trees = num<int>(c, "model", "n_trees");
    ex.forest.max_features = num<int>(c, "model", "max_features");
    if (ex.forest.n_trees < 1 || ex.forest.max_features < 0)
        throw ParameterError("model.n_trees must be >= 1 and model.max_features >= 0");
    const auto& bs = at(c, "model", "bootstrap");
    if (!bs.is_boolean()) throw ParameterError("model.bootstrap must be true or false");
    ex.forest.bootstrap = bs.get<bool>();
    ex.forest.seed = r.seed;

    r.train_fold = num<int>(c, "train", "fold");
    r.evaluate_subset = str(c, "evaluate", "subset");
    if (r.evaluate_subset != "test" && r.evaluate_subset != "validation" && r.evaluate_subset != "train")
        throw ParameterError("evaluate.subset must be test, validation or train");

    const auto& seeds = at(c, "experiment", "seeds");
    ex.seeds.clear();
    for (const auto& s : seeds) {
        if (!s.is_number_integer() || s.get<long long>() < 0) throw ParameterError("experiment.seeds must be non-negative integers");
        ex.seeds.push_back(s.get<std::uint64_t>());
    }
    if (ex.seeds.empty()) throw ParameterError("experiment.seeds must not be empty");
    ex.models.clear();
    for (const auto& m : at(c, "experiment", "models")) {
        const auto k = m.is_string() ? parse_model_kind(m.get<std::string>()) : std::nullopt;
        if (!k) throw ParameterError("experiment.models entries must be logreg, tree or forest");
        ex.models.push_back(*k);
    }
    if (ex.models.empty()) throw ParameterError("experiment.models must not be empty");
    return r;
}

} // namespace roadsonar::cli
