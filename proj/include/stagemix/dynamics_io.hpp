#pragma once

// Loss-log readers and stability report writers.
//
// Line-delimited form, one record per line:
//   {"step":1,"stage":1,"loss":2.3125}
// Two-column form: "step,loss" rows (an optional header line starting with a
// letter is skipped) plus a sidecar whose rows are "stage,start_step" giving
// the first step of every stage.

#include <cctype>
#include <charconv>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stagemix/dynamics.hpp"
#include "stagemix/schedule_io.hpp"

namespace stagemix {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view text, const std::string& where) {
  text = trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ParseError(where + ": '" + std::string(text) + "' is not a valid number");
  return value;
}

/// Fast path for the exact shape this toolkit writes; anything else goes
/// through the JSON parser.
inline bool parse_canonical_loss_line(std::string_view line, LossRecord& out) {
  constexpr std::string_view kStep = "{\"step\":";
  constexpr std::string_view kStage = ",\"stage\":";
  constexpr std::string_view kLoss = ",\"loss\":";
  if (!line.starts_with(kStep) || !line.ends_with("}")) return false;
  const char* p = line.data() + kStep.size();
  const char* end = line.data() + line.size() - 1;
  auto r = std::from_chars(p, end, out.step);
  if (r.ec != std::errc{} || !std::string_view(r.ptr, static_cast<std::size_t>(end - r.ptr)).starts_with(kStage))
    return false;
  r = std::from_chars(r.ptr + kStage.size(), end, out.stage);
  if (r.ec != std::errc{} || !std::string_view(r.ptr, static_cast<std::size_t>(end - r.ptr)).starts_with(kLoss))
    return false;
  r = std::from_chars(r.ptr + kLoss.size(), end, out.loss);
  return r.ec == std::errc{} && r.ptr == end;
}

}  // namespace detail

inline LossTrace read_loss_jsonl(std::istream& in, const std::string& where = "loss log") {
  std::vector<LossRecord> records;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = detail::trim(line);
    if (view.empty()) continue;
    LossRecord r;
    if (!detail::parse_canonical_loss_line(view, r)) {
      const std::string at = where + ":" + std::to_string(line_no);
      const Json j = parse_json_text(std::string(view), at);
      r.step = detail::require_count(j, "step", at);
      r.stage = detail::require_field<int>(j, "stage", at);
      r.loss = detail::require_field<double>(j, "loss", at);
    }
    records.push_back(r);
  }
  try {
    return LossTrace(std::move(records));
  } catch (const PreconditionError& e) {
    throw ParseError(where + ": " + e.what());
  }
}

struct StageStart {
  int stage = 0;
  std::uint64_t first_step = 0;
};

inline std::vector<StageStart> read_stage_sidecar(std::istream& in, const std::string& where = "stage sidecar") {
  std::vector<StageStart> starts;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = detail::trim(line);
    if (view.empty() || std::isalpha(static_cast<unsigned char>(view.front()))) continue;
    const std::string at = where + ":" + std::to_string(line_no);
    const auto comma = view.find(',');
    if (comma == std::string_view::npos) throw ParseError(at + ": expected 'stage,start_step'");
    starts.push_back({detail::parse_number<int>(view.substr(0, comma), at),
                      detail::parse_number<std::uint64_t>(view.substr(comma + 1), at)});
    if (starts.size() > 1 && (starts.back().first_step <= starts[starts.size() - 2].first_step ||
                              starts.back().stage <= starts[starts.size() - 2].stage))
      throw ParseError(at + ": stage starts must be increasing");
  }
  if (starts.empty()) throw ParseError(where + ": no stage boundaries");
  return starts;
}

inline LossTrace read_loss_csv(std::istream& in, const std::vector<StageStart>& stages,
                               const std::string& where = "loss csv") {
  std::vector<LossRecord> records;
  std::string line;
  std::uint64_t line_no = 0;
  std::size_t stage_pos = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = detail::trim(line);
    if (view.empty() || std::isalpha(static_cast<unsigned char>(view.front()))) continue;
    const std::string at = where + ":" + std::to_string(line_no);
    const auto comma = view.find(',');
    if (comma == std::string_view::npos) throw ParseError(at + ": expected 'step,loss'");
    LossRecord r;
    r.step = detail::parse_number<std::uint64_t>(view.substr(0, comma), at);
    r.loss = detail::parse_number<double>(view.substr(comma + 1), at);
    if (r.step < stages.front().first_step)
      throw ParseError(at + ": step " + std::to_string(r.step) + " precedes the first stage");
    while (stage_pos + 1 < stages.size() && stages[stage_pos + 1].first_step <= r.step) ++stage_pos;
    r.stage = stages[stage_pos].stage;
    records.push_back(r);
  }
  try {
    return LossTrace(std::move(records));
  } catch (const PreconditionError& e) {
    throw ParseError(where + ": " + e.what());
  }
}

inline void write_loss_jsonl(std::ostream& out, const LossTrace& trace) {
  std::string line;
  for (const LossRecord& r : trace.records()) {
    line = "{\"step\":";
    append_uint(line, r.step);
    line += ",\"stage\":" + std::to_string(r.stage) + ",\"loss\":" + shortest(r.loss) + "}\n";
    out << line;
  }
}

inline Json spike_report_to_json(const SpikeReport& r) {
  return {{"window", r.window},
          {"valid_windows", r.valid_windows},
          {"spike_count", r.spike_steps.size()},
          {"spike_frequency", r.frequency},
          {"spike_steps", r.spike_steps}};
}

inline Json transition_report_to_json(const TransitionReport& r) {
  Json list = Json::array();
  for (const auto& b : r.boundaries)
    list.push_back({{"old_stage", b.old_stage},
                    {"new_stage", b.new_stage},
                    {"step_before", b.step_before},
                    {"step_after", b.step_after},
                    {"loss_before", b.loss_before},
                    {"loss_after", b.loss_after},
                    {"ratio", b.ratio}});
  return {{"boundaries", std::move(list)}, {"max_abs_ratio", r.max_abs_ratio()}};
}

inline Json stability_to_json(const StabilitySummary& s) {
  Json gaps = Json::array();
  for (const auto& g : s.gaps) gaps.push_back({{"after_step", g.after_step}, {"missing", g.missing}});
  return {{"fluctuation_window", s.fluctuation_window},
          {"loss_std", s.loss_std},
          {"loss_std_global", s.loss_std_global},
          {"spike_frequency", s.spike_frequency},
          {"transition_stability", s.transition_stability},
          {"spikes", spike_report_to_json(s.spikes)},
          {"transitions", transition_report_to_json(s.transitions)},
          {"gaps", std::move(gaps)}};
}

/// The three-column training-dynamics table for one or more labelled runs.
inline std::string render_stability_table(const std::vector<std::pair<std::string, StabilitySummary>>& rows) {
  std::string out = "Condition  Loss Std  Spike Freq.  Stage Tran Stab\n";
  for (const auto& [label, summary] : rows) {
    const StabilityRow cells = format_stability_row(summary);
    out += pad_right(label, 9) + pad_left(cells.loss_std, 10) + pad_left(cells.spike_frequency, 13) +
           pad_left(cells.transition_stability, 17) + "\n";
  }
  return out;
}

/// Human-readable detail block under the table.
inline std::string render_stability_details(const StabilitySummary& s) {
  std::ostringstream out;
  out << "windows: fluctuation w=" << s.fluctuation_window << ", spike u=" << s.spikes.window << "\n";
  out << "loss std (mean windowed sigma): " << fixed(s.loss_std, 6) << "\n";
  out << "loss std (global): " << fixed(s.loss_std_global, 6) << "\n";
  out << "spikes: " << s.spikes.spike_steps.size() << " of " << s.spikes.valid_windows << " windows ("
      << format_percent(s.spike_frequency) << ")";
  if (!s.spikes.spike_steps.empty()) {
    out << " at steps";
    const std::size_t shown = std::min<std::size_t>(s.spikes.spike_steps.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) out << " " << s.spikes.spike_steps[i];
    if (shown < s.spikes.spike_steps.size()) out << " ...";
  }
  out << "\n";
  for (const auto& b : s.transitions.boundaries)
    out << "transition " << b.old_stage << "->" << b.new_stage << ": step " << b.step_before << " -> "
        << b.step_after << ", loss " << shortest(b.loss_before) << " -> " << shortest(b.loss_after)
        << ", ratio " << fixed(b.ratio, 4) << "\n";
  if (s.gaps.empty()) {
    out << "gaps: none\n";
  } else {
    std::uint64_t missing = 0;
    for (const auto& g : s.gaps) missing += g.missing;
    out << "gaps: " << s.gaps.size() << " (" << missing << " missing steps)\n";
  }
  return out.str();
}

}  // namespace stagemix
