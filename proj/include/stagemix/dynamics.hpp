#pragma once

// Training-dynamics statistics over a logged loss trace: windowed fluctuation,
// 2-sigma spike detection and stage-transition ratios.
//
// Windows are taken over logged positions (not nominal step numbers) and end at
// the current record, so a window of size u at position t holds the losses of
// positions t-u+1..t. Standard deviations are population deviations (divide
// by u).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "stagemix/error.hpp"
#include "stagemix/format.hpp"

namespace stagemix {

inline constexpr std::size_t kDefaultWindow = 50;

struct LossRecord {
  std::uint64_t step = 0;
  int stage = 1;
  double loss = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

class LossTrace {
 public:
  LossTrace() = default;

  explicit LossTrace(std::vector<LossRecord> records) : records_(std::move(records)) {
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const LossRecord& r = records_[i];
      const std::string at = "loss record " + std::to_string(i + 1);
      if (r.step < 1) throw PreconditionError(at + ": step must be positive");
      if (!(std::isfinite(r.loss) && r.loss >= 0.0))
        throw PreconditionError(at + ": loss must be a finite non-negative number");
      if (i > 0 && r.step <= records_[i - 1].step)
        throw PreconditionError(at + ": steps must be strictly increasing");
      if (i > 0 && r.stage < records_[i - 1].stage) throw PreconditionError(at + ": stages must be non-decreasing");
    }
    losses_.reserve(records_.size());
    for (const auto& r : records_) losses_.push_back(r.loss);
  }

  std::span<const LossRecord> records() const noexcept { return records_; }
  std::span<const double> losses() const noexcept { return losses_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

 private:
  std::vector<LossRecord> records_;
  std::vector<double> losses_;
};

// ---------------------------------------------------------------------------
// Window statistics

struct WindowMoments {
  double mean = 0.0;
  double stddev = 0.0;

  friend bool operator==(const WindowMoments&, const WindowMoments&) = default;
};

/// Two-pass population mean and deviation of one window, summed in order.
/// Depends only on the window contents, which is what makes streaming and
/// batch evaluation agree bit-for-bit.
inline WindowMoments window_moments(std::span<const double> window) noexcept {
  if (window.empty()) return {};
  const double first = window.front();
  if (std::all_of(window.begin(), window.end(), [first](double x) { return x == first; })) return {first, 0.0};
  const auto n = static_cast<double>(window.size());
  double sum = 0.0;
  for (double x : window) sum += x;
  const double mean = sum / n;
  double sq = 0.0;
  for (double x : window) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / n)};
}

struct WindowStats {
  std::size_t window = 0;
  std::vector<std::uint64_t> steps;  // step of the window's last record
  std::vector<WindowMoments> moments;
};

namespace detail {

inline void require_window(std::size_t window, std::size_t length, const char* what) {
  if (window < 2) throw PreconditionError(std::string(what) + ": window size must be at least 2");
  if (length < window)
    throw PreconditionError(std::string(what) + ": trace has " + std::to_string(length) +
                            " records, fewer than the window size " + std::to_string(window));
}

/// Ring buffer stored twice over so the last `size` values are always contiguous.
class SlidingBuffer {
 public:
  explicit SlidingBuffer(std::size_t size) : size_(size), data_(2 * size) {}

  void push(double x) {
    data_[head_] = x;
    data_[head_ + size_] = x;
    head_ = head_ + 1 == size_ ? 0 : head_ + 1;
    if (count_ < size_) ++count_;
  }

  bool full() const noexcept { return count_ == size_; }

  /// Oldest to newest; valid once full().
  std::span<const double> window() const noexcept { return {data_.data() + head_, size_}; }

 private:
  std::size_t size_;
  std::vector<double> data_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
};

}  // namespace detail

/// Streaming counterpart of window_stats: feed losses one at a time.
class RollingWindow {
 public:
  explicit RollingWindow(std::size_t window) : buffer_(window) {
    if (window < 2) throw PreconditionError("rolling window: window size must be at least 2");
  }

  std::optional<WindowMoments> push(double loss) {
    buffer_.push(loss);
    if (!buffer_.full()) return std::nullopt;
    return window_moments(buffer_.window());
  }

 private:
  detail::SlidingBuffer buffer_;
};

inline WindowStats window_stats(const LossTrace& trace, std::size_t window) {
  detail::require_window(window, trace.size(), "window statistics");
  WindowStats out{window, {}, {}};
  const auto losses = trace.losses();
  out.steps.reserve(losses.size() - window + 1);
  out.moments.reserve(losses.size() - window + 1);
  for (std::size_t end = window; end <= losses.size(); ++end) {
    out.steps.push_back(trace.records()[end - 1].step);
    out.moments.push_back(window_moments(losses.subspan(end - window, window)));
  }
  return out;
}

struct FluctuationPoint {
  std::uint64_t step = 0;
  double sigma = 0.0;
};

/// Population standard deviation of the last w losses at every full window.
inline std::vector<FluctuationPoint> local_fluctuation(const LossTrace& trace, std::size_t w) {
  const WindowStats stats = window_stats(trace, w);
  std::vector<FluctuationPoint> out;
  out.reserve(stats.steps.size());
  for (std::size_t i = 0; i < stats.steps.size(); ++i) out.push_back({stats.steps[i], stats.moments[i].stddev});
  return out;
}

// ---------------------------------------------------------------------------
// Spike predicate
//
// With d_i = l_i - l_t over the window, D = sum d_i and P = sum d_i^2, the test
// |l_t - mean| > 2 sigma is equivalent to 5 D^2 > 4 u P. A double evaluation
// with a forward error bound settles almost every window; windows inside the
// bound are decided in exact integer arithmetic.

namespace detail {

inline bool spike_exact(std::span<const double> window) {
  using boost::multiprecision::cpp_int;
  int min_exp = std::numeric_limits<int>::max();
  std::vector<std::pair<std::int64_t, int>> parts(window.size());
  for (std::size_t i = 0; i < window.size(); ++i) {
    int e = 0;
    const double m = std::frexp(window[i], &e);
    parts[i] = {static_cast<std::int64_t>(std::ldexp(m, 53)), e - 53};
    if (parts[i].first != 0) min_exp = std::min(min_exp, parts[i].second);
  }
  if (min_exp == std::numeric_limits<int>::max()) return false;  // all zero
  auto scaled = [&](std::size_t i) {
    cpp_int v = parts[i].first;
    if (parts[i].first != 0) v <<= static_cast<unsigned>(parts[i].second - min_exp);
    return v;
  };
  const cpp_int current = scaled(window.size() - 1);
  cpp_int sum = 0;
  cpp_int sum_sq = 0;
  for (std::size_t i = 0; i + 1 < window.size(); ++i) {
    const cpp_int d = scaled(i) - current;
    sum += d;
    sum_sq += d * d;
  }
  return 5 * sum * sum > 4 * static_cast<unsigned>(window.size()) * sum_sq;
}

}  // namespace detail

/// True iff the window's last value lies strictly more than two population
/// standard deviations from the window mean (the mean includes the value itself).
inline bool is_spike(std::span<const double> window) {
  const std::size_t u = window.size();
  if (u < 2) return false;
  const double current = window.back();
  double abs_sum = 0.0;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i + 1 < u; ++i) {
    const double d = window[i] - current;
    abs_sum += std::abs(d);
    sum += d;
    sum_sq += d * d;
  }
  if (abs_sum == 0.0) return false;  // x - y == 0 only when x == y
  // Outside this range squares may under- or overflow and the bound below is void.
  if (!(abs_sum > 1e-100 && abs_sum < 1e100)) return detail::spike_exact(window);
  const double n = static_cast<double>(u);
  const double lhs = 5.0 * sum * sum;
  const double rhs = 4.0 * n * sum_sq;
  const double bound =
      8.0 * (n + 8.0) * std::numeric_limits<double>::epsilon() * (5.0 * abs_sum * abs_sum + rhs);
  const double diff = lhs - rhs;
  if (diff > bound) return true;
  if (diff < -bound) return false;
  return detail::spike_exact(window);
}

/// Online spike detector: feed losses as they are logged.
class SpikeDetector {
 public:
  explicit SpikeDetector(std::size_t window) : window_(window), buffer_(window) {
    if (window < 2) throw PreconditionError("spike detector: window size must be at least 2");
  }

  /// Empty until the first full window, then whether this loss is a spike.
  std::optional<bool> push(double loss) {
    buffer_.push(loss);
    if (!buffer_.full()) return std::nullopt;
    return is_spike(buffer_.window());
  }

  std::size_t window() const noexcept { return window_; }

 private:
  std::size_t window_;
  detail::SlidingBuffer buffer_;
};

struct SpikeReport {
  std::size_t window = 0;
  std::vector<std::uint64_t> spike_steps;
  std::uint64_t valid_windows = 0;  // T - u + 1
  double frequency = 0.0;
  std::vector<std::uint64_t> window_steps;  // step ending each valid window
  std::vector<bool> indicator;              // aligned with window_steps
};

inline SpikeReport detect_spikes(const LossTrace& trace, std::size_t u) {
  detail::require_window(u, trace.size(), "spike detection");
  SpikeReport report;
  report.window = u;
  report.valid_windows = trace.size() - u + 1;
  report.window_steps.reserve(report.valid_windows);
  report.indicator.reserve(report.valid_windows);
  SpikeDetector detector(u);
  for (const LossRecord& r : trace.records()) {
    const auto flagged = detector.push(r.loss);
    if (!flagged) continue;
    report.window_steps.push_back(r.step);
    report.indicator.push_back(*flagged);
    if (*flagged) report.spike_steps.push_back(r.step);
  }
  report.frequency = static_cast<double>(report.spike_steps.size()) / static_cast<double>(report.valid_windows);
  return report;
}

inline double spike_frequency(const SpikeReport& report) noexcept { return report.frequency; }

/// "1.96%" style: percentage with two decimals.
inline std::string format_percent(double fraction) { return fixed(100.0 * fraction, 2) + "%"; }

// ---------------------------------------------------------------------------
// Stage transitions

struct StageBoundary {
  int old_stage = 0;
  int new_stage = 0;
  std::uint64_t step_before = 0;  // last logged step of the old stage
  std::uint64_t step_after = 0;   // first logged step of the new stage
  double loss_before = 0.0;
  double loss_after = 0.0;
  double ratio = 0.0;  // (loss_after - loss_before) / loss_before
};

struct TransitionReport {
  std::vector<StageBoundary> boundaries;

  /// Largest |ratio| over all boundaries.
  double max_abs_ratio() const noexcept {
    double m = 0.0;
    for (const auto& b : boundaries) m = std::max(m, std::abs(b.ratio));
    return m;
  }
};

inline TransitionReport stage_transition_ratio(const LossTrace& trace) {
  const auto records = trace.records();
  if (records.empty() || records.front().stage == records.back().stage)
    throw PreconditionError("stage transition: trace must contain at least two stages");
  TransitionReport report;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const LossRecord& before = records[i - 1];
    const LossRecord& after = records[i];
    if (before.stage == after.stage) continue;
    if (after.stage != before.stage + 1)
      throw PreconditionError("stage transition: stage " + std::to_string(before.stage + 1) +
                              " has no logged records");
    if (before.loss == 0.0)
      throw PreconditionError("stage transition: loss is 0 at step " + std::to_string(before.step) +
                              ", ratio undefined");
    report.boundaries.push_back({before.stage, after.stage, before.step, after.step, before.loss, after.loss,
                                 (after.loss - before.loss) / before.loss});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Gaps and summary

struct StepGap {
  std::uint64_t after_step = 0;
  std::uint64_t missing = 0;
};

/// Runs of step numbers absent between consecutive records.
inline std::vector<StepGap> find_gaps(const LossTrace& trace) {
  std::vector<StepGap> gaps;
  const auto records = trace.records();
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].step > records[i - 1].step + 1)
      gaps.push_back({records[i - 1].step, records[i].step - records[i - 1].step - 1});
  return gaps;
}

/// Population standard deviation of the whole trace.
inline double global_stddev(const LossTrace& trace) { return window_moments(trace.losses()).stddev; }

struct StabilitySummary {
  std::size_t fluctuation_window = 0;
  double loss_std = 0.0;         // mean of the windowed sigma series (headline)
  double loss_std_global = 0.0;  // whole-trace population deviation
  double spike_frequency = 0.0;
  double transition_stability = 0.0;  // max |r_stage|
  SpikeReport spikes;
  TransitionReport transitions;
  std::vector<StepGap> gaps;
};

inline StabilitySummary stability_summary(const LossTrace& trace, std::size_t w, std::size_t u) {
  StabilitySummary s;
  s.fluctuation_window = w;
  const auto sigma = local_fluctuation(trace, w);
  double total = 0.0;
  for (const auto& p : sigma) total += p.sigma;
  s.loss_std = total / static_cast<double>(sigma.size());
  s.loss_std_global = global_stddev(trace);
  s.spikes = detect_spikes(trace, u);
  s.spike_frequency = s.spikes.frequency;
  s.transitions = stage_transition_ratio(trace);
  s.transition_stability = s.transitions.max_abs_ratio();
  s.gaps = find_gaps(trace);
  return s;
}

/// Cells in the training-dynamics table layout: "0.096", "1.48%", "0.37".
struct StabilityRow {
  std::string loss_std;
  std::string spike_frequency;
  std::string transition_stability;
};

inline StabilityRow format_stability_row(const StabilitySummary& s) {
  return {fixed(s.loss_std, 3), format_percent(s.spike_frequency), fixed(s.transition_stability, 2)};
}

}  // namespace stagemix
