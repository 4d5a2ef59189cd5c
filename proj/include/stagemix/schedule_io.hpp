#pragma once

// JSON documents for schedules and registries, plus exposure report rendering.
//
//   schedule: {"id": "B", "stages": [{"index": 1, "steps": 1000,
//              "distribution": {"LLaVA-Pretrain": 1.0}}, ...]}
//   registry: {"datasets": [{"name": "AI2D", "group": "D2-reasoning", "size": 12413}, ...]}

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "stagemix/error.hpp"
#include "stagemix/format.hpp"
#include "stagemix/schedule.hpp"

namespace stagemix {

using Json = nlohmann::ordered_json;

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline Json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

namespace detail {

template <typename T>
T require_field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ParseError(where + ": field '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

inline std::uint64_t require_count(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  const Json& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
    throw ParseError(where + ": field '" + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

}  // namespace detail

inline ScheduleCondition schedule_from_json(const Json& j) {
  ScheduleCondition cond;
  cond.id = detail::require_field<std::string>(j, "id", "schedule");
  const Json& stages = j.contains("stages") ? j.at("stages") : Json();
  if (!stages.is_array()) throw ParseError("schedule: 'stages' must be an array");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string where = "schedule stages[" + std::to_string(i) + "]";
    StagePlan plan;
    plan.index = detail::require_field<int>(stages[i], "index", where);
    plan.steps = detail::require_count(stages[i], "steps", where);
    const Json& dist = stages[i].contains("distribution") ? stages[i].at("distribution") : Json();
    if (!dist.is_object()) throw ParseError(where + ": 'distribution' must be an object");
    for (const auto& [name, p] : dist.items()) {
      if (!p.is_number()) throw ParseError(where + ": probability of '" + name + "' is not a number");
      const std::string canonical = canonical_dataset_name(name);
      if (plan.distribution.contains(canonical))
        throw ParseError(where + ": dataset '" + canonical + "' listed twice");
      plan.distribution.emplace(canonical, p.get<double>());
    }
    cond.stages.push_back(std::move(plan));
  }
  return cond;
}

inline Json schedule_to_json(const ScheduleCondition& cond) {
  Json stages = Json::array();
  for (const StagePlan& s : cond.stages) {
    Json dist = Json::object();
    for (const auto& [name, p] : s.distribution) dist[name] = p;
    stages.push_back({{"index", s.index}, {"steps", s.steps}, {"distribution", std::move(dist)}});
  }
  return {{"id", cond.id}, {"stages", std::move(stages)}};
}

inline ScheduleCondition load_schedule(const std::string& path) {
  return schedule_from_json(parse_json_text(read_text_file(path), path));
}

inline Registry registry_from_json(const Json& j) {
  const Json& list = (j.is_object() && j.contains("datasets")) ? j.at("datasets") : Json();
  if (!list.is_array()) throw ParseError("registry: 'datasets' must be an array");
  std::vector<DatasetSource> sources;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string where = "registry datasets[" + std::to_string(i) + "]";
    DatasetSource s;
    s.name = canonical_dataset_name(detail::require_field<std::string>(list[i], "name", where));
    const auto group_text = detail::require_field<std::string>(list[i], "group", where);
    const auto group = parse_group(group_text);
    if (!group) throw ParseError(where + ": unknown group '" + group_text + "'");
    s.group = *group;
    s.size = detail::require_count(list[i], "size", where);
    sources.push_back(std::move(s));
  }
  try {
    return Registry(std::move(sources));
  } catch (const PreconditionError& e) {
    throw ParseError(e.what());
  }
}

inline Json registry_to_json(const Registry& registry) {
  Json list = Json::array();
  for (const DatasetSource& s : registry.sources())
    list.push_back({{"name", s.name}, {"group", std::string(to_string(s.group))}, {"size", s.size}});
  return {{"datasets", std::move(list)}};
}

inline Registry load_registry(const std::string& path) {
  return registry_from_json(parse_json_text(read_text_file(path), path));
}

inline Json exposure_to_json(const ExposureComparison& cmp) {
  auto rows = [&](const std::vector<ExposureDeviation>& list) {
    Json out = Json::array();
    for (const auto& d : list) {
      out.push_back({{"key", d.key}, {"exposure", d.values}, {"min", d.min}, {"max", d.max},
                     {"deviation", d.deviation}, {"flagged", d.flagged}});
    }
    return out;
  };
  Json ids = Json::array();
  Json budgets = Json::array();
  for (const auto& c : cmp.conditions) {
    ids.push_back(c.condition);
    budgets.push_back(c.post_alignment_steps);
  }
  return {{"conditions", std::move(ids)}, {"warn_threshold", cmp.warn_threshold}, {"totals_match", cmp.totals_match},
          {"post_alignment_steps", std::move(budgets)}, {"datasets", rows(cmp.datasets)}, {"groups", rows(cmp.groups)}};
}

inline std::string render_validation(const ValidationResult& v) {
  if (v.ok()) return "ok\n";
  std::string out;
  for (const Violation& violation : v.violations) out += "violation [" + violation.rule + "] " + violation.message + "\n";
  return out;
}

inline Json validation_to_json(const ValidationResult& v) {
  Json list = Json::array();
  for (const Violation& violation : v.violations) {
    Json item = {{"rule", violation.rule}, {"message", violation.message}};
    item["stage"] = violation.stage ? Json(*violation.stage) : Json(nullptr);
    list.push_back(std::move(item));
  }
  return {{"ok", v.ok()}, {"violations", std::move(list)}};
}

/// Aligned text table: one exposure column per condition, then min, max and
/// relative deviation. Flagged rows end in " !".
inline std::string render_exposure(const ExposureComparison& cmp) {
  std::string out = "Expected exposure (steps, post-alignment stages)\n";
  auto row = [&](const std::string& label, const std::vector<std::string>& cells, bool flag) {
    out += pad_right(label, 16);
    for (const auto& c : cells) out += pad_left(c, 12);
    out += flag ? " !\n" : "\n";
  };
  std::vector<std::string> header;
  for (const auto& c : cmp.conditions) header.push_back(c.condition);
  if (cmp.conditions.size() > 1) header.insert(header.end(), {"min", "max", "deviation"});
  row("dataset", header, false);
  auto emit = [&](const ExposureDeviation& d) {
    std::vector<std::string> cells;
    for (double v : d.values) cells.push_back(fixed(v, 3));
    if (cmp.conditions.size() > 1) cells.insert(cells.end(), {fixed(d.min, 3), fixed(d.max, 3), fixed(d.deviation, 4)});
    row(d.key, cells, d.flagged);
  };
  for (const auto& d : cmp.datasets) emit(d);
  out += "\n";
  row("group", header, false);
  for (const auto& d : cmp.groups) emit(d);
  std::vector<std::string> totals;
  for (const auto& c : cmp.conditions) totals.push_back(std::to_string(c.post_alignment_steps));
  out += "\n";
  row("budget", totals, false);
  if (cmp.conditions.size() > 1) {
    out += "warn threshold " + fixed(cmp.warn_threshold, 2) + (cmp.totals_match ? "" : "; post-alignment budgets differ") + "\n";
  }
  return out;
}

}  // namespace stagemix
