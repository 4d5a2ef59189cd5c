#pragma once

// Multi-stage data-organization schedules: dataset registries, per-stage
// categorical sampling plans, structural validation and expected-exposure
// accounting. Stage 1 is the alignment stage; every stage with index >= 2 is
// post-alignment and counts toward exposure.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stagemix/error.hpp"
#include "stagemix/format.hpp"

namespace stagemix {

enum class DataGroup { Alignment, General, Reasoning, Ocr };

inline constexpr std::array<DataGroup, 4> kAllGroups = {DataGroup::Alignment, DataGroup::General,
                                                        DataGroup::Reasoning, DataGroup::Ocr};

inline std::string_view to_string(DataGroup g) {
  switch (g) {
    case DataGroup::Alignment: return "D0-alignment";
    case DataGroup::General: return "D1-general";
    case DataGroup::Reasoning: return "D2-reasoning";
    case DataGroup::Ocr: return "D3-ocr";
  }
  return "?";
}

/// Accepts the canonical names and the bare "D0".."D3" forms.
inline std::optional<DataGroup> parse_group(std::string_view text) {
  for (DataGroup g : kAllGroups) {
    const std::string_view canonical = to_string(g);
    if (text == canonical || text == canonical.substr(0, 2)) return g;
  }
  return std::nullopt;
}

struct DatasetSource {
  std::string name;
  DataGroup group = DataGroup::General;
  std::uint64_t size = 1;

  friend bool operator==(const DatasetSource&, const DatasetSource&) = default;
};

/// Immutable set of datasets kept in lexicographic name order. That order is
/// the canonical dataset ordering used everywhere (sampling CDF, reports).
class Registry {
 public:
  Registry() = default;

  explicit Registry(std::vector<DatasetSource> sources) : sources_(std::move(sources)) {
    std::sort(sources_.begin(), sources_.end(),
              [](const DatasetSource& a, const DatasetSource& b) { return a.name < b.name; });
    for (std::size_t i = 0; i < sources_.size(); ++i) {
      if (sources_[i].name.empty()) throw PreconditionError("registry: empty dataset name");
      if (sources_[i].size < 1)
        throw PreconditionError("registry: dataset '" + sources_[i].name + "' has size 0");
      if (i > 0 && sources_[i].name == sources_[i - 1].name)
        throw PreconditionError("registry: duplicate dataset name '" + sources_[i].name + "'");
    }
  }

  std::span<const DatasetSource> sources() const noexcept { return sources_; }
  std::size_t size() const noexcept { return sources_.size(); }

  const DatasetSource* find(std::string_view name) const noexcept {
    auto it = std::lower_bound(sources_.begin(), sources_.end(), name,
                               [](const DatasetSource& s, std::string_view n) { return s.name < n; });
    return (it != sources_.end() && it->name == name) ? &*it : nullptr;
  }

  /// Position of `name` in canonical order, or npos.
  std::size_t index_of(std::string_view name) const noexcept {
    const DatasetSource* s = find(name);
    return s ? static_cast<std::size_t>(s - sources_.data()) : npos;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  friend bool operator==(const Registry&, const Registry&) = default;

 private:
  std::vector<DatasetSource> sources_;
};

namespace datasets {
inline constexpr const char* kLlavaPretrain = "LLaVA-Pretrain";
inline constexpr const char* kShareGpt4v = "ShareGPT4V";
inline constexpr const char* kAi2d = "AI2D";
inline constexpr const char* kChartQa = "ChartQA";
inline constexpr const char* kTextVqa = "TextVQA";
inline constexpr const char* kDocVqa = "DocVQA";
}  // namespace datasets

/// Maps the short labels used in schedule tables (S4V, TXT, DOC) to registry names.
inline std::string canonical_dataset_name(std::string_view name) {
  if (name == "S4V") return datasets::kShareGpt4v;
  if (name == "TXT") return datasets::kTextVqa;
  if (name == "DOC") return datasets::kDocVqa;
  return std::string(name);
}

/// The six-dataset pool behind the built-in conditions. Only the LLaVA-Pretrain
/// size (558K) is fixed by the source study; the others are the public train-split
/// sizes and only matter for instance indexing.
inline Registry paper_registry() {
  using namespace datasets;
  return Registry({{kLlavaPretrain, DataGroup::Alignment, 558128},
                   {kShareGpt4v, DataGroup::General, 102025},
                   {kAi2d, DataGroup::Reasoning, 12413},
                   {kChartQa, DataGroup::Reasoning, 28299},
                   {kTextVqa, DataGroup::Ocr, 34602},
                   {kDocVqa, DataGroup::Ocr, 39463}});
}

struct StagePlan {
  int index = 1;
  std::uint64_t steps = 0;
  std::map<std::string, double> distribution;

  friend bool operator==(const StagePlan&, const StagePlan&) = default;
};

struct ScheduleCondition {
  std::string id;
  std::vector<StagePlan> stages;

  std::uint64_t total_steps() const noexcept {
    std::uint64_t total = 0;
    for (const auto& s : stages) total += s.steps;
    return total;
  }

  std::uint64_t post_alignment_steps() const noexcept {
    std::uint64_t total = 0;
    for (const auto& s : stages)
      if (s.index >= 2) total += s.steps;
    return total;
  }

  friend bool operator==(const ScheduleCondition&, const ScheduleCondition&) = default;
};

inline constexpr double kProbabilitySumTolerance = 1e-9;

struct Violation {
  std::optional<int> stage;
  std::string rule;
  std::string message;
};

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }
};

namespace detail {

inline void add_violation(ValidationResult& r, std::optional<int> stage, std::string rule, std::string what) {
  std::string message = stage ? "stage " + std::to_string(*stage) + ": " + what : what;
  r.violations.push_back({stage, std::move(rule), std::move(message)});
}

inline bool is_builtin_id(std::string_view id) {
  return id == "A" || id == "B" || id == "C" || id == "D";
}

}  // namespace detail

/// Registry-independent rules: stage numbering and probability sanity.
inline ValidationResult validate_structure(const ScheduleCondition& cond) {
  ValidationResult r;
  if (cond.id.empty()) detail::add_violation(r, std::nullopt, "condition-id", "condition id is empty");
  if (cond.stages.size() < 2)
    detail::add_violation(r, std::nullopt, "stage-count",
                          "at least two stages required, found " + std::to_string(cond.stages.size()));
  for (std::size_t i = 0; i < cond.stages.size(); ++i) {
    const StagePlan& stage = cond.stages[i];
    const int expected = static_cast<int>(i) + 1;
    if (stage.index != expected)
      detail::add_violation(r, stage.index, "stage-index",
                            "stage indices must be consecutive from 1; expected " + std::to_string(expected));
    if (stage.distribution.empty()) {
      detail::add_violation(r, stage.index, "empty-distribution", "distribution is empty");
      continue;
    }
    double sum = 0.0;
    for (const auto& [name, p] : stage.distribution) {
      if (!(p >= 0.0 && p <= 1.0))
        detail::add_violation(r, stage.index, "probability-range",
                              "probability of '" + name + "' is " + shortest(p) + ", outside [0, 1]");
      sum += p;
    }
    if (!(std::abs(sum - 1.0) <= kProbabilitySumTolerance))
      detail::add_violation(r, stage.index, "probability-sum", "probability sum " + shortest(sum) + " ≠ 1");
  }
  return r;
}

/// Full check against a registry. Violations are data; nothing here throws.
inline ValidationResult validate_condition(const ScheduleCondition& cond, const Registry& registry) {
  ValidationResult r = validate_structure(cond);
  for (const StagePlan& stage : cond.stages) {
    for (const auto& [name, p] : stage.distribution) {
      const DatasetSource* source = registry.find(name);
      if (source == nullptr) {
        detail::add_violation(r, stage.index, "unknown-dataset", "dataset '" + name + "' is not in the registry");
        continue;
      }
      if (stage.index == 1 && p > 0.0 && source->group != DataGroup::Alignment)
        detail::add_violation(r, stage.index, "stage1-support",
                              "stage-1 support must be D0 only ('" + name + "' is " +
                                  std::string(to_string(source->group)) + ")");
    }
  }
  if (detail::is_builtin_id(cond.id) && !(registry == paper_registry())) {
    // Sizes may differ between installations; the names and groups may not.
    const Registry expected = paper_registry();
    bool same = registry.size() == expected.size();
    for (std::size_t i = 0; same && i < expected.size(); ++i) {
      same = registry.sources()[i].name == expected.sources()[i].name &&
             registry.sources()[i].group == expected.sources()[i].group;
    }
    if (!same)
      detail::add_violation(r, std::nullopt, "builtin-registry",
                            "built-in condition " + cond.id +
                                " requires exactly the six paper datasets with their groups");
  }
  return r;
}

/// Table presets A (direct mixture), B (curriculum), C (balanced), D (reverse
/// curriculum). `steps` are T1, T2, T3; the source study leaves them unstated.
inline ScheduleCondition builtin_condition(std::string_view id, std::array<std::uint64_t, 3> steps) {
  using namespace datasets;
  using Dist = std::map<std::string, double>;
  const Dist alignment{{kLlavaPretrain, 1.0}};
  const Dist mixture{{kShareGpt4v, 0.50}, {kAi2d, 0.13}, {kChartQa, 0.13}, {kTextVqa, 0.12}, {kDocVqa, 0.12}};
  const Dist coarse{{kShareGpt4v, 0.70}, {kAi2d, 0.15}, {kChartQa, 0.15}};
  const Dist specialized{{kShareGpt4v, 0.20}, {kAi2d, 0.10}, {kChartQa, 0.10}, {kTextVqa, 0.30}, {kDocVqa, 0.30}};
  const Dist balanced{{kShareGpt4v, 0.20}, {kAi2d, 0.20}, {kChartQa, 0.20}, {kTextVqa, 0.20}, {kDocVqa, 0.20}};

  auto make = [&](const Dist& stage2, const Dist& stage3) {
    return ScheduleCondition{std::string(id),
                             {StagePlan{1, steps[0], alignment}, StagePlan{2, steps[1], stage2},
                              StagePlan{3, steps[2], stage3}}};
  };
  if (id == "A") return make(mixture, mixture);
  if (id == "B") return make(coarse, specialized);
  if (id == "C") return make(balanced, balanced);
  if (id == "D") return make(specialized, coarse);
  throw PreconditionError("unknown built-in condition '" + std::string(id) + "' (expected A, B, C or D)");
}

/// Expected exposure, in sampling steps, of each dataset over post-alignment stages.
struct ConditionExposure {
  std::string condition;
  std::map<std::string, double> per_dataset;
  std::uint64_t post_alignment_steps = 0;

  double of(const std::string& name) const {
    auto it = per_dataset.find(name);
    return it == per_dataset.end() ? 0.0 : it->second;
  }
};

/// E(d) = sum over stages s >= 2 of T_s * pi_s(d). Datasets that appear in any
/// stage (including stage 1) are listed, possibly with zero exposure.
inline ConditionExposure compute_exposure(const ScheduleCondition& cond) {
  if (const auto v = validate_structure(cond); !v.ok())
    throw PreconditionError("invalid condition '" + cond.id + "': " + v.violations.front().message);
  ConditionExposure out{cond.id, {}, cond.post_alignment_steps()};
  for (const StagePlan& stage : cond.stages) {
    for (const auto& [name, p] : stage.distribution) {
      double& e = out.per_dataset[name];
      if (stage.index >= 2) e += static_cast<double>(stage.steps) * p;
    }
  }
  return out;
}

struct ExposureDeviation {
  std::string key;  // dataset name or group label
  double min = 0.0;
  double max = 0.0;
  double deviation = 0.0;  // (max - min) / max, 0/0 -> 0
  bool flagged = false;
  std::vector<double> values;  // one per compared condition, in input order
};

struct ExposureComparison {
  std::vector<ConditionExposure> conditions;
  std::vector<ExposureDeviation> datasets;  // registry order
  std::vector<ExposureDeviation> groups;    // D1, D2, D3
  double warn_threshold = 0.10;
  bool totals_match = true;
};

inline constexpr double kDefaultWarnThreshold = 0.10;

namespace detail {

inline ExposureDeviation deviation_of(std::string key, std::span<const double> values, double threshold) {
  ExposureDeviation d;
  d.key = std::move(key);
  d.values.assign(values.begin(), values.end());
  if (values.empty()) return d;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  d.min = *lo;
  d.max = *hi;
  d.deviation = d.max > 0.0 ? (d.max - d.min) / d.max : 0.0;
  d.flagged = d.deviation > threshold;
  return d;
}

}  // namespace detail

/// Advisory comparison of exposure budgets across conditions. Throws only when
/// a condition does not fit `registry`; mismatched budgets are reported, not rejected.
inline ExposureComparison compare_exposure(std::span<const ScheduleCondition> conds, const Registry& registry,
                                           double warn_threshold = kDefaultWarnThreshold) {
  if (conds.empty()) throw PreconditionError("compare_exposure: no conditions given");
  ExposureComparison out;
  out.warn_threshold = warn_threshold;
  for (const auto& cond : conds) {
    const ValidationResult v = validate_condition(cond, registry);
    if (!v.ok())
      throw PreconditionError("condition '" + cond.id + "' does not fit the registry: " +
                              v.violations.front().message);
    out.conditions.push_back(compute_exposure(cond));
    if (out.conditions.back().post_alignment_steps != out.conditions.front().post_alignment_steps)
      out.totals_match = false;
  }
  std::vector<double> values;
  for (const DatasetSource& source : registry.sources()) {
    values.clear();
    for (const auto& e : out.conditions) values.push_back(e.of(source.name));
    out.datasets.push_back(detail::deviation_of(source.name, values, warn_threshold));
  }
  for (DataGroup g : {DataGroup::General, DataGroup::Reasoning, DataGroup::Ocr}) {
    values.clear();
    for (const auto& e : out.conditions) {
      double sum = 0.0;
      for (const DatasetSource& source : registry.sources())
        if (source.group == g) sum += e.of(source.name);
      values.push_back(sum);
    }
    out.groups.push_back(detail::deviation_of(std::string(to_string(g)), values, warn_threshold));
  }
  return out;
}

}  // namespace stagemix
