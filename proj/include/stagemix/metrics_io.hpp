#pragma once

// Eval-log reader and export re-import.
//
// Eval log, one record per line; "condition" is optional and groups records
// for comparison tables:
//   {"condition":"B","step":4000,"task":"AI2D","score":76.0}

#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stagemix/dynamics_io.hpp"
#include "stagemix/metrics.hpp"
#include "stagemix/schedule_io.hpp"

namespace stagemix {

/// Snapshots per condition, each list ordered by step. Records without a
/// condition field fall under `default_condition`.
using EvalLog = std::map<std::string, std::vector<EvalSnapshot>>;

inline EvalLog read_eval_log(std::istream& in, const std::string& where = "eval log",
                             const std::string& default_condition = "") {
  std::map<std::string, std::map<std::uint64_t, EvalSnapshot>> grouped;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = detail::trim(line);
    if (view.empty()) continue;
    const std::string at = where + ":" + std::to_string(line_no);
    const Json j = parse_json_text(std::string(view), at);
    const std::string condition =
        j.contains("condition") ? detail::require_field<std::string>(j, "condition", at) : default_condition;
    const std::uint64_t step = detail::require_count(j, "step", at);
    const auto task_name = detail::require_field<std::string>(j, "task", at);
    const auto task = parse_task(task_name);
    if (!task) throw ParseError(at + ": unknown task '" + task_name + "'");
    Score score;
    try {
      score = Score::from_double(detail::require_field<double>(j, "score", at));
    } catch (const PreconditionError& e) {
      throw ParseError(at + ": " + e.what());
    }
    EvalSnapshot& snap = grouped[condition][step];
    snap.step = step;
    if (!snap.scores.emplace(*task, score).second)
      throw ParseError(at + ": duplicate " + task_name + " score at step " + std::to_string(step));
  }
  EvalLog out;
  for (auto& [condition, by_step] : grouped) {
    auto& list = out[condition];
    for (auto& [step, snap] : by_step) list.push_back(std::move(snap));
  }
  return out;
}

inline void write_eval_log(std::ostream& out, const std::string& condition, const std::vector<EvalSnapshot>& snaps) {
  for (const EvalSnapshot& s : snaps) {
    for (const auto& [task, score] : s.scores) {
      Json j = Json::object();
      if (!condition.empty()) j["condition"] = condition;
      j["step"] = s.step;
      j["task"] = std::string(to_string(task));
      j["score"] = score.value();
      out << j.dump() << "\n";
    }
  }
}

/// Row of a re-imported comparison export: task scores plus the aggregate cells as written.
struct ImportedComparisonRow {
  std::string condition;
  EvalSnapshot snapshot;
  std::array<std::string, 8> cells;
};

inline std::vector<ImportedComparisonRow> import_comparison_csv(std::istream& in) {
  std::vector<ImportedComparisonRow> rows;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = detail::trim(line);
    if (view.empty() || view.starts_with("condition,")) continue;
    const std::string at = "comparison export:" + std::to_string(line_no);
    std::vector<std::string> fields;
    std::stringstream ss{std::string(view)};
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 9) throw ParseError(at + ": expected 9 columns");
    ImportedComparisonRow row{fields[0], {}, {}};
    for (std::size_t i = 0; i < 8; ++i) row.cells[i] = fields[i + 1];
    const std::array<std::pair<Task, std::size_t>, 5> task_columns = {
        {{Task::GeneralVal, 0}, {Task::Ai2d, 1}, {Task::ChartQa, 2}, {Task::TextVqa, 4}, {Task::DocVqa, 5}}};
    for (const auto& [task, col] : task_columns)
      row.snapshot.scores[task] = Score::from_double(detail::parse_number<double>(row.cells[col], at));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json capability_to_json(const CapabilityScores& s) {
  return {{"general", s.general.value()},
          {"reasoning", s.reasoning.value()},
          {"detail", s.detail.value()},
          {"overall", s.overall.value()}};
}

}  // namespace stagemix
