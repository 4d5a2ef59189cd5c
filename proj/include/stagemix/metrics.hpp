#pragma once

// Capability aggregates over the five validation tasks, condition comparison
// tables and capability trajectories.
//
// Task scores carry one decimal and are held as integer tenths. Aggregates are
// exact fractions of tenths (denominators 1, 2 or 5), so a value such as
// (72.6 + 73.5) / 2 = 73.05 is stored exactly and renders as "73.1" under
// half-away-from-zero rounding. Rounding happens only when rendering.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stagemix/error.hpp"
#include "stagemix/format.hpp"

namespace stagemix {

enum class Task { GeneralVal, Ai2d, ChartQa, TextVqa, DocVqa };

inline constexpr std::array<Task, 5> kAllTasks = {Task::GeneralVal, Task::Ai2d, Task::ChartQa, Task::TextVqa,
                                                  Task::DocVqa};

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::GeneralVal: return "General-Val";
    case Task::Ai2d: return "AI2D";
    case Task::ChartQa: return "ChartQA";
    case Task::TextVqa: return "TextVQA";
    case Task::DocVqa: return "DocVQA";
  }
  return "?";
}

inline std::optional<Task> parse_task(std::string_view name) {
  for (Task t : kAllTasks)
    if (to_string(t) == name) return t;
  return std::nullopt;
}

/// A validation score in tenths of a point (73.4 -> 734).
struct Score {
  std::int64_t tenths = 0;

  /// Accepts values with at most one decimal in [0, 100].
  static Score from_double(double value) {
    if (!std::isfinite(value) || value < 0.0 || value > 100.0)
      throw PreconditionError("score " + shortest(value) + " is outside [0, 100]");
    const double scaled = value * 10.0;
    const double rounded = std::round(scaled);
    if (std::abs(scaled - rounded) > 1e-6)
      throw PreconditionError("score " + shortest(value) + " has more than one decimal");
    return Score{static_cast<std::int64_t>(rounded)};
  }

  double value() const noexcept { return static_cast<double>(tenths) / 10.0; }

  friend auto operator<=>(const Score&, const Score&) = default;
};

/// Exact mean of `count` scores, kept as a sum of tenths.
class ExactMean {
 public:
  constexpr ExactMean() = default;
  constexpr ExactMean(std::int64_t sum_tenths, std::int64_t count) : sum_(sum_tenths), count_(count) {}

  constexpr std::int64_t sum_tenths() const noexcept { return sum_; }
  constexpr std::int64_t count() const noexcept { return count_; }

  double value() const noexcept { return static_cast<double>(sum_) / (10.0 * static_cast<double>(count_)); }

  /// One decimal, half away from zero.
  std::string render() const {
    const std::int64_t mag = std::llabs(sum_);
    const std::int64_t tenths = (2 * mag + count_) / (2 * count_);
    std::string out = sum_ < 0 && tenths != 0 ? "-" : "";
    return out + std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
  }

  /// Exact decimal expansion; terminates because count divides a power of ten here.
  std::string exact() const {
    std::int64_t num = std::llabs(sum_);
    std::int64_t den = 10 * count_;
    std::string out = sum_ < 0 ? "-" : "";
    out += std::to_string(num / den);
    num %= den;
    if (num == 0) return out;
    out += ".";
    for (int digits = 0; num != 0 && digits < 12; ++digits) {
      num *= 10;
      out += static_cast<char>('0' + num / den);
      num %= den;
    }
    return out;
  }

  friend bool operator==(const ExactMean& a, const ExactMean& b) noexcept {
    return a.sum_ * b.count_ == b.sum_ * a.count_;
  }
  friend auto operator<=>(const ExactMean& a, const ExactMean& b) noexcept {
    return a.sum_ * b.count_ <=> b.sum_ * a.count_;
  }

 private:
  std::int64_t sum_ = 0;
  std::int64_t count_ = 1;
};

struct EvalSnapshot {
  std::uint64_t step = 0;
  std::map<Task, Score> scores;

  bool aggregable() const noexcept { return scores.size() == kAllTasks.size(); }

  Score at(Task t) const {
    auto it = scores.find(t);
    if (it == scores.end())
      throw PreconditionError("snapshot at step " + std::to_string(step) + " is missing task " +
                              std::string(to_string(t)));
    return it->second;
  }
};

/// General, Reasoning, Detail (rendered "OCR") and Overall.
struct CapabilityScores {
  ExactMean general;
  ExactMean reasoning;
  ExactMean detail;
  ExactMean overall;

  friend bool operator==(const CapabilityScores&, const CapabilityScores&) = default;
};

inline CapabilityScores aggregate(const EvalSnapshot& snapshot) {
  const auto g = snapshot.at(Task::GeneralVal).tenths;
  const auto a = snapshot.at(Task::Ai2d).tenths;
  const auto c = snapshot.at(Task::ChartQa).tenths;
  const auto t = snapshot.at(Task::TextVqa).tenths;
  const auto d = snapshot.at(Task::DocVqa).tenths;
  return {ExactMean(g, 1), ExactMean(a + c, 2), ExactMean(t + d, 2), ExactMean(g + a + c + t + d, 5)};
}

struct CapabilityTrajectory {
  std::vector<std::uint64_t> steps;
  std::vector<CapabilityScores> scores;
};

inline CapabilityTrajectory trajectory(const std::vector<EvalSnapshot>& snapshots) {
  CapabilityTrajectory out;
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    if (i > 0 && snapshots[i].step <= snapshots[i - 1].step)
      throw PreconditionError("trajectory: snapshots must be ordered by strictly increasing step");
    out.steps.push_back(snapshots[i].step);
    out.scores.push_back(aggregate(snapshots[i]));
  }
  return out;
}

/// First step whose overall score reaches `fraction` of the final overall score.
inline std::optional<std::uint64_t> convergence_step(const CapabilityTrajectory& traj, double fraction = 0.95) {
  if (traj.steps.empty()) throw PreconditionError("convergence step: empty series");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw PreconditionError("convergence step: fraction must lie in (0, 1]");
  const double target = fraction * traj.scores.back().overall.value();
  for (std::size_t i = 0; i < traj.steps.size(); ++i)
    if (traj.scores[i].overall.value() >= target) return traj.steps[i];
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Condition comparison

enum class Column { GeneralVal, Ai2d, ChartQa, Reasoning, TextVqa, DocVqa, Ocr, Overall };

inline constexpr std::array<Column, 8> kAllColumns = {Column::GeneralVal, Column::Ai2d,    Column::ChartQa,
                                                      Column::Reasoning,  Column::TextVqa, Column::DocVqa,
                                                      Column::Ocr,        Column::Overall};

inline std::string_view to_string(Column c) {
  static constexpr std::array<std::string_view, 8> kNames = {"General-Val", "AI2D",   "ChartQA", "Reasoning",
                                                             "TextVQA",     "DocVQA", "OCR",     "Overall"};
  return kNames[static_cast<std::size_t>(c)];
}

inline ExactMean column_value(const EvalSnapshot& snapshot, const CapabilityScores& caps, Column c) {
  switch (c) {
    case Column::GeneralVal: return caps.general;
    case Column::Ai2d: return {snapshot.at(Task::Ai2d).tenths, 1};
    case Column::ChartQa: return {snapshot.at(Task::ChartQa).tenths, 1};
    case Column::Reasoning: return caps.reasoning;
    case Column::TextVqa: return {snapshot.at(Task::TextVqa).tenths, 1};
    case Column::DocVqa: return {snapshot.at(Task::DocVqa).tenths, 1};
    case Column::Ocr: return caps.detail;
    case Column::Overall: return caps.overall;
  }
  return {};
}

struct ComparisonRow {
  std::string condition;
  EvalSnapshot snapshot;
  CapabilityScores scores;
  std::array<ExactMean, 8> values;
  std::array<bool, 8> best{};
};

struct ConditionComparison {
  std::vector<ComparisonRow> rows;  // ordered by condition id
};

/// Best markers compare unrounded values; every tied maximum is marked.
inline ConditionComparison comparison_table(const std::map<std::string, EvalSnapshot>& rows) {
  if (rows.empty()) throw PreconditionError("comparison table: no conditions");
  ConditionComparison out;
  for (const auto& [condition, snapshot] : rows) {
    if (!snapshot.aggregable())
      throw PreconditionError("comparison table: condition '" + condition + "' lacks some task scores");
    ComparisonRow row{condition, snapshot, aggregate(snapshot), {}, {}};
    for (Column c : kAllColumns) row.values[static_cast<std::size_t>(c)] = column_value(snapshot, row.scores, c);
    out.rows.push_back(std::move(row));
  }
  for (std::size_t c = 0; c < kAllColumns.size(); ++c) {
    ExactMean best = out.rows.front().values[c];
    for (const auto& row : out.rows) best = std::max(best, row.values[c]);
    for (auto& row : out.rows) row.best[c] = row.values[c] == best;
  }
  return out;
}

/// Aligned text table with one decimal; best cells carry a trailing '*'.
inline std::string render_comparison(const ConditionComparison& cmp) {
  std::string out = pad_right("Condition", 10);
  std::array<std::size_t, 8> widths{};
  for (Column c : kAllColumns) {
    const auto i = static_cast<std::size_t>(c);
    widths[i] = std::max<std::size_t>(to_string(c).size(), 5) + 2;
    out += pad_left(std::string(to_string(c)), widths[i]) + " ";
  }
  out.pop_back();
  out += "\n";
  for (const auto& row : cmp.rows) {
    std::string line = pad_right(row.condition, 10);
    for (std::size_t i = 0; i < kAllColumns.size(); ++i)
      line += pad_left(row.values[i].render(), widths[i]) + (row.best[i] ? "*" : " ");
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  out += "* best in column (ties marked on every tied condition)\n";
  return out;
}

/// Lossless export: condition followed by the eight columns as exact decimals.
inline std::string export_comparison_csv(const ConditionComparison& cmp) {
  std::string out = "condition";
  for (Column c : kAllColumns) out += "," + std::string(to_string(c));
  out += "\n";
  for (const auto& row : cmp.rows) {
    out += row.condition;
    for (const auto& v : row.values) out += "," + v.exact();
    out += "\n";
  }
  return out;
}

/// Lossless export: step, general, reasoning, detail, overall.
inline std::string export_trajectory_csv(const CapabilityTrajectory& traj) {
  std::string out = "step,general,reasoning,detail,overall\n";
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const auto& s = traj.scores[i];
    out += std::to_string(traj.steps[i]) + "," + s.general.exact() + "," + s.reasoning.exact() + "," +
           s.detail.exact() + "," + s.overall.exact() + "\n";
  }
  return out;
}

}  // namespace stagemix
