#pragma once

// Synthetic training logs with known ground truth, for exercising the dynamics
// and metrics pipelines end to end. The models are illustrative test plumbing:
// nothing here is fitted to real training runs.
//
// Loss: within stage s (first step t0), l_t = a_s * exp(-k_s (t - t0)) + n_s z_t,
// z_t standard normal, plus injected spikes of multiplier * n_s (multiplier * 1
// when n_s = 0). Losses are clamped at 0.
//
// Capability: with X_G(t) the cumulative expected steps spent on group G up to
// step t, capability c = base + (ceil - base)(1 - exp(-sum_G alpha_cG X_G / scale)),
// plus optional Gaussian noise, clamped to [0, ceil]. Task scores follow their
// capability with fixed offsets (General-Val +0, AI2D +0.5, ChartQA -0.5,
// TextVQA -0.5, DocVQA +0.5) and are rounded to one decimal.
//
// Gaussian draws use Box-Muller over Philox, so outputs are reproducible for a
// given seed on a given libm.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stagemix/dynamics.hpp"
#include "stagemix/error.hpp"
#include "stagemix/metrics.hpp"
#include "stagemix/philox.hpp"
#include "stagemix/schedule.hpp"

namespace stagemix {

struct LossStageSpec {
  std::uint64_t steps = 0;
  double start_level = 1.0;
  double decay = 0.0;  // per-step exponential rate
  double noise = 0.0;  // standard deviation of additive Gaussian noise
};

struct SpikeInjection {
  std::uint64_t step = 0;
  double multiplier = 0.0;
};

struct LossTraceSpec {
  std::vector<LossStageSpec> stages;
  std::vector<SpikeInjection> injections;

  std::uint64_t total_steps() const noexcept {
    std::uint64_t total = 0;
    for (const auto& s : stages) total += s.steps;
    return total;
  }
};

struct SyntheticLoss {
  LossTrace trace;
  std::vector<std::uint64_t> injected_steps;  // sorted
  std::vector<double> transition_ratios;      // noiseless, one per boundary between non-empty stages
};

inline void validate(const LossTraceSpec& spec) {
  if (spec.stages.empty()) throw PreconditionError("loss spec: at least one stage required");
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const auto& s = spec.stages[i];
    const std::string at = "loss spec stage " + std::to_string(i + 1);
    if (!(std::isfinite(s.start_level) && s.start_level >= 0.0))
      throw PreconditionError(at + ": start level must be finite and >= 0");
    if (!(std::isfinite(s.decay) && s.decay >= 0.0)) throw PreconditionError(at + ": decay must be finite and >= 0");
    if (!(std::isfinite(s.noise) && s.noise >= 0.0)) throw PreconditionError(at + ": noise scale must be >= 0");
  }
  const std::uint64_t total = spec.total_steps();
  for (const auto& inj : spec.injections) {
    if (inj.step < 1 || inj.step > total)
      throw PreconditionError("loss spec: injection step " + std::to_string(inj.step) + " is outside 1.." +
                              std::to_string(total));
    if (!std::isfinite(inj.multiplier)) throw PreconditionError("loss spec: injection multiplier must be finite");
  }
}

inline SyntheticLoss synth_loss(const LossTraceSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::vector<double> boost(spec.total_steps() + 1, 0.0);
  SyntheticLoss out;
  for (const auto& inj : spec.injections) {
    boost[inj.step] += inj.multiplier;
    out.injected_steps.push_back(inj.step);
  }
  std::sort(out.injected_steps.begin(), out.injected_steps.end());
  out.injected_steps.erase(std::unique(out.injected_steps.begin(), out.injected_steps.end()),
                           out.injected_steps.end());

  PhiloxStream noise(seed, 0x5EED, 1);
  std::vector<LossRecord> records;
  records.reserve(spec.total_steps());
  std::uint64_t t = 0;
  double previous_end = -1.0;  // noiseless loss at the last step of the previous non-empty stage
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const LossStageSpec& stage = spec.stages[s];
    if (stage.steps == 0) continue;
    if (previous_end >= 0.0) out.transition_ratios.push_back((stage.start_level - previous_end) / previous_end);
    for (std::uint64_t i = 0; i < stage.steps; ++i) {
      ++t;
      double loss = stage.start_level * std::exp(-stage.decay * static_cast<double>(i));
      if (stage.noise > 0.0) loss += stage.noise * noise.next_gaussian();
      if (boost[t] != 0.0) loss += boost[t] * (stage.noise > 0.0 ? stage.noise : 1.0);
      records.push_back({t, static_cast<int>(s) + 1, std::max(loss, 0.0)});
    }
    previous_end = stage.start_level * std::exp(-stage.decay * static_cast<double>(stage.steps - 1));
  }
  out.trace = LossTrace(std::move(records));
  return out;
}

// ---------------------------------------------------------------------------

enum class Capability { General, Reasoning, Detail };

struct CapabilityCurve {
  double baseline = 0.0;
  double ceiling = 100.0;
  std::array<double, 4> transfer{};  // alpha per group D0..D3
};

struct CapabilityModelSpec {
  std::array<CapabilityCurve, 3> curves;  // general, reasoning, detail
  double exposure_scale = 1000.0;
  std::uint64_t eval_interval = 100;
  double noise = 0.0;
};

/// Noise-included, unrounded capability values behind one snapshot.
struct CapabilityTruth {
  std::uint64_t step = 0;
  double general = 0.0;
  double reasoning = 0.0;
  double detail = 0.0;

  double overall() const noexcept { return (general + 2.0 * reasoning + 2.0 * detail) / 5.0; }
};

struct SyntheticCapability {
  std::vector<EvalSnapshot> snapshots;
  std::vector<CapabilityTruth> truth;
};

inline void validate(const CapabilityModelSpec& model) {
  for (const auto& c : model.curves) {
    if (!(std::isfinite(c.baseline) && std::isfinite(c.ceiling)) || c.baseline > c.ceiling || c.ceiling > 100.0 ||
        c.baseline < 0.0)
      throw PreconditionError("capability model: need 0 <= baseline <= ceiling <= 100");
    for (double a : c.transfer)
      if (!std::isfinite(a)) throw PreconditionError("capability model: transfer coefficients must be finite");
  }
  if (!(model.exposure_scale > 0.0)) throw PreconditionError("capability model: exposure scale must be positive");
  if (model.eval_interval < 1) throw PreconditionError("capability model: eval interval must be >= 1");
  if (!(model.noise >= 0.0)) throw PreconditionError("capability model: noise scale must be >= 0");
}

/// Expected cumulative steps per group (D0..D3) after the first `step` steps of `cond`.
inline std::array<double, 4> cumulative_group_exposure(const ScheduleCondition& cond, const Registry& registry,
                                                       std::uint64_t step) {
  std::array<double, 4> exposure{};
  std::uint64_t start = 0;
  for (const StagePlan& stage : cond.stages) {
    const std::uint64_t taken = step > start ? std::min(step - start, stage.steps) : 0;
    start += stage.steps;
    if (taken == 0) continue;
    for (const auto& [name, p] : stage.distribution) {
      const DatasetSource* source = registry.find(name);
      if (source != nullptr) exposure[static_cast<std::size_t>(source->group)] += static_cast<double>(taken) * p;
    }
  }
  return exposure;
}

namespace detail {

inline double round_tenth(double v) { return std::round(v * 10.0) / 10.0; }  // std::round is half away from zero

}  // namespace detail

inline SyntheticCapability synth_capability(const ScheduleCondition& cond, const Registry& registry,
                                            const CapabilityModelSpec& model, std::uint64_t seed) {
  if (const auto v = validate_condition(cond, registry); !v.ok())
    throw PreconditionError("invalid condition '" + cond.id + "': " + v.violations.front().message);
  validate(model);
  const std::uint64_t total = cond.total_steps();
  std::vector<std::uint64_t> eval_steps;
  for (std::uint64_t t = model.eval_interval; t <= total; t += model.eval_interval) eval_steps.push_back(t);
  if (total > 0 && (eval_steps.empty() || eval_steps.back() != total)) eval_steps.push_back(total);

  PhiloxStream noise(seed, 0x5EED, 2);
  SyntheticCapability out;
  for (std::uint64_t t : eval_steps) {
    const auto exposure = cumulative_group_exposure(cond, registry, t);
    std::array<double, 3> value{};
    for (std::size_t c = 0; c < 3; ++c) {
      const CapabilityCurve& curve = model.curves[c];
      double drive = 0.0;
      for (std::size_t g = 0; g < 4; ++g) drive += curve.transfer[g] * exposure[g];
      double v = curve.baseline + (curve.ceiling - curve.baseline) * (1.0 - std::exp(-drive / model.exposure_scale));
      if (model.noise > 0.0) v += model.noise * noise.next_gaussian();
      value[c] = std::clamp(v, 0.0, curve.ceiling);
    }
    out.truth.push_back({t, value[0], value[1], value[2]});
    EvalSnapshot snap{t, {}};
    auto emit = [&](Task task, double v) {
      snap.scores[task] = Score::from_double(detail::round_tenth(std::clamp(v, 0.0, 100.0)));
    };
    emit(Task::GeneralVal, value[0]);
    emit(Task::Ai2d, value[1] + 0.5);
    emit(Task::ChartQa, value[1] - 0.5);
    emit(Task::TextVqa, value[2] - 0.5);
    emit(Task::DocVqa, value[2] + 0.5);
    out.snapshots.push_back(std::move(snap));
  }
  return out;
}

}  // namespace stagemix
