#include "diffedit/config.hpp"

#include <fstream>
#include <set>

#include "diffedit/error.hpp"
#include "diffedit/tensor_io.hpp"

namespace diffedit {

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& known, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + " config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ConfigError(std::string("unknown ") + what + " key '" + key + "'");
    }
}

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

} // namespace

Json to_json(const ScheduleParams& p) {
    return {{"t_train", p.t_train}, {"beta_min", p.beta_min}, {"beta_max", p.beta_max},
            {"infer_steps", p.infer_steps}};
}

ScheduleParams schedule_from_json(const Json& j) {
    reject_unknown(j, {"t_train", "beta_min", "beta_max", "infer_steps"}, "schedule");
    ScheduleParams p;
    read_opt(j, "t_train", p.t_train);
    read_opt(j, "beta_min", p.beta_min);
    read_opt(j, "beta_max", p.beta_max);
    read_opt(j, "infer_steps", p.infer_steps);
    return p;
}

Json to_json(const SamplerConfig& c) {
    return {{"n", c.n},
            {"guidance_stride", c.guidance_stride},
            {"tau_sde", c.tau_sde},
            {"tau_tt", c.tau_tt},
            {"U", c.U},
            {"eta1", c.eta1},
            {"eta2", c.eta2},
            {"guidance_lr", c.guidance_lr},
            {"cfg_scale", c.cfg_scale},
            {"gamma", c.gamma},
            {"rng_seed", c.rng_seed},
            {"visual_xattn", c.visual_xattn}};
}

SamplerConfig sampler_from_json(const Json& j) {
    reject_unknown(j,
                   {"n", "guidance_stride", "tau_sde", "tau_tt", "U", "eta1", "eta2", "guidance_lr", "cfg_scale",
                    "gamma", "rng_seed", "visual_xattn"},
                   "sampler");
    SamplerConfig c;
    read_opt(j, "n", c.n);
    read_opt(j, "guidance_stride", c.guidance_stride);
    read_opt(j, "tau_sde", c.tau_sde);
    read_opt(j, "tau_tt", c.tau_tt);
    read_opt(j, "U", c.U);
    read_opt(j, "eta1", c.eta1);
    read_opt(j, "eta2", c.eta2);
    read_opt(j, "guidance_lr", c.guidance_lr);
    read_opt(j, "cfg_scale", c.cfg_scale);
    read_opt(j, "gamma", c.gamma);
    read_opt(j, "rng_seed", c.rng_seed);
    read_opt(j, "visual_xattn", c.visual_xattn);
    return c;
}

Json region_map_json(const std::vector<RegionPair>& pairs) {
    Json arr = Json::array();
    for (const auto& p : pairs) arr.push_back({{p.src_row, p.src_col}, {p.dst_row, p.dst_col}});
    return arr;
}

void save_edit_spec(const std::filesystem::path& json_path, const EditSpec& spec) {
    std::filesystem::path mask_name = json_path.stem().string() + ".mask.tnsr";
    save_tnsr(json_path.parent_path() / mask_name, spec.mask);
    Json j{{"task", to_string(spec.task)}, {"mask", mask_name.string()}, {"region_map", region_map_json(spec.region_map)}};
    if (spec.reference_id) j["reference_id"] = *spec.reference_id;
    write_json(json_path, j);
}

EditSpec load_edit_spec(const std::filesystem::path& json_path) {
    Json j = read_json(json_path);
    reject_unknown(j, {"task", "mask", "region_map", "reference_id"}, "edit spec");
    EditSpec spec;
    try {
        spec.task = parse_edit_task(j.at("task").get<std::string>());
        std::filesystem::path mask = j.at("mask").get<std::string>();
        if (mask.is_relative()) mask = json_path.parent_path() / mask;
        spec.mask = load_tnsr(mask);
        for (const auto& p : j.value("region_map", Json::array())) {
            spec.region_map.push_back({p.at(0).at(0).get<int>(), p.at(0).at(1).get<int>(), p.at(1).at(0).get<int>(),
                                       p.at(1).at(1).get<int>()});
        }
        if (j.contains("reference_id")) spec.reference_id = j["reference_id"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(json_path.string() + ": malformed edit spec: " + e.what());
    }
    return spec;
}

Json to_json(const StepLog& s) {
    return {{"index", s.index},         {"t", s.t},
            {"t_prev", s.t_prev},       {"guided", s.guided},
            {"iterations", s.iterations}, {"sde", s.sde},
            {"sigma_in", s.sigma_in},   {"sigma_out", s.sigma_out},
            {"e_edit", s.e_edit},       {"e_content", s.e_content}};
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace diffedit
