#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "diffedit/guidance.hpp"
#include "diffedit/sampler.hpp"
#include "diffedit/schedule.hpp"

namespace diffedit {

using Json = nlohmann::json;

// JSON keys are the struct field names. Missing keys keep their defaults;
// unknown keys are a ConfigError so typos do not pass silently.
Json to_json(const ScheduleParams& p);
ScheduleParams schedule_from_json(const Json& j);

Json to_json(const SamplerConfig& c);
SamplerConfig sampler_from_json(const Json& j);

/// The mask is written next to the JSON as a TNSR file; `mask` holds its path
/// relative to the JSON's directory.
void save_edit_spec(const std::filesystem::path& json_path, const EditSpec& spec);
EditSpec load_edit_spec(const std::filesystem::path& json_path);
Json region_map_json(const std::vector<RegionPair>& pairs);

Json to_json(const StepLog& s);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

} // namespace diffedit
