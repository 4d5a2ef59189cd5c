#pragma once

// Deterministic realization of a schedule as a step-by-step manifest.
//
// Each step first picks a dataset from the current stage's categorical
// distribution by inverse CDF over the registry's lexicographic order, then
// takes the next index from that dataset's shuffled permutation. A dataset
// whose permutation is exhausted is reshuffled with a fresh epoch key.
//
// Random streams (all Philox4x32-10 keyed by the 64-bit seed):
//   dataset draw at step t     counter (t, 0, 0)
//   shuffle of dataset k, epoch e  counter (i, k + 1, e), i = draw number
// Every stream position is derived from (step, epoch, dataset), so a checkpoint
// is a handful of integers and a resumed sampler continues bit-identically.

#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "stagemix/error.hpp"
#include "stagemix/format.hpp"
#include "stagemix/philox.hpp"
#include "stagemix/schedule.hpp"
#include "stagemix/schedule_io.hpp"

namespace stagemix {

inline constexpr const char* kManifestFormat = "stagemix-manifest/1";
inline constexpr const char* kCheckpointFormat = "stagemix-sampler-state/1";

struct SampleEvent {
  std::uint64_t step = 0;  // 1-based global step
  int stage = 0;
  std::string dataset;
  std::uint64_t instance = 0;

  friend bool operator==(const SampleEvent&, const SampleEvent&) = default;
};

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
inline std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

inline std::string registry_digest(const Registry& registry) {
  std::string canonical;
  for (const DatasetSource& s : registry.sources()) {
    canonical += s.name;
    canonical += '\t';
    canonical += to_string(s.group);
    canonical += '\t';
    append_uint(canonical, s.size);
    canonical += '\n';
  }
  return fnv1a_hex(canonical);
}

inline std::string condition_digest(const ScheduleCondition& cond) {
  return fnv1a_hex(schedule_to_json(cond).dump());
}

struct StageSpan {
  int index = 0;
  std::uint64_t steps = 0;

  friend bool operator==(const StageSpan&, const StageSpan&) = default;
};

struct ManifestHeader {
  std::string condition;
  std::uint64_t seed = 0;
  std::string registry_digest;
  std::string generator = kGeneratorId;
  std::vector<StageSpan> stages;

  std::uint64_t total_steps() const noexcept {
    std::uint64_t total = 0;
    for (const auto& s : stages) total += s.steps;
    return total;
  }

  friend bool operator==(const ManifestHeader&, const ManifestHeader&) = default;
};

struct Manifest {
  ManifestHeader header;
  std::vector<SampleEvent> events;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

/// Resume point: everything beyond (condition, registry, seed) a sampler needs.
struct SamplerCheckpoint {
  struct Cursor {
    std::string dataset;
    std::uint64_t epoch = 0;
    std::uint64_t position = 0;

    friend bool operator==(const Cursor&, const Cursor&) = default;
  };

  std::string condition;
  std::string condition_digest;
  std::string registry_digest;
  std::string generator = kGeneratorId;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::vector<Cursor> cursors;  // only datasets that have been drawn

  friend bool operator==(const SamplerCheckpoint&, const SamplerCheckpoint&) = default;
};

/// One logical owner advances a SamplerState; it is not safe to share while advancing.
class SamplerState {
 public:
  SamplerState(ScheduleCondition cond, Registry registry, std::uint64_t seed)
      : cond_(std::move(cond)), registry_(std::move(registry)), seed_(seed) {
    if (const auto v = validate_condition(cond_, registry_); !v.ok())
      throw PreconditionError("invalid condition '" + cond_.id + "': " + v.violations.front().message);
    cursors_.resize(registry_.size());
    std::uint64_t end = 0;
    for (const StagePlan& stage : cond_.stages) {
      StageTable table{stage.index, end + 1, end + stage.steps, {}, {}};
      end += stage.steps;
      double cumulative = 0.0;
      for (std::size_t k = 0; k < registry_.size(); ++k) {
        auto it = stage.distribution.find(registry_.sources()[k].name);
        if (it == stage.distribution.end() || !(it->second > 0.0)) continue;
        cumulative += it->second;
        table.dataset.push_back(k);
        table.cdf.push_back(cumulative);
      }
      stages_.push_back(std::move(table));
    }
    total_ = end;
  }

  static SamplerState resume(ScheduleCondition cond, Registry registry, const SamplerCheckpoint& cp) {
    SamplerState state(std::move(cond), std::move(registry), cp.seed);
    if (cp.generator != kGeneratorId)
      throw PreconditionError("checkpoint generator '" + cp.generator + "' does not match '" + kGeneratorId + "'");
    if (cp.condition != state.cond_.id || cp.condition_digest != condition_digest(state.cond_))
      throw PreconditionError("checkpoint was taken for a different condition");
    if (cp.registry_digest != registry_digest(state.registry_))
      throw PreconditionError("checkpoint was taken against a different registry");
    if (cp.step > state.total_) throw PreconditionError("checkpoint step lies beyond the schedule");
    state.step_ = cp.step;
    for (const auto& c : cp.cursors) {
      const std::size_t k = state.registry_.index_of(c.dataset);
      if (k == Registry::npos) throw PreconditionError("checkpoint names unknown dataset '" + c.dataset + "'");
      if (c.position > state.registry_.sources()[k].size)
        throw PreconditionError("checkpoint cursor for '" + c.dataset + "' is out of range");
      state.cursors_[k].epoch = c.epoch;
      state.cursors_[k].position = c.position;
      state.cursors_[k].started = true;
    }
    while (state.stage_pos_ + 1 < state.stages_.size() && state.stages_[state.stage_pos_].last <= state.step_)
      ++state.stage_pos_;
    return state;
  }

  SamplerCheckpoint checkpoint() const {
    SamplerCheckpoint cp{cond_.id, condition_digest(cond_), registry_digest(registry_), kGeneratorId, seed_, step_, {}};
    for (std::size_t k = 0; k < cursors_.size(); ++k)
      if (cursors_[k].started)
        cp.cursors.push_back({registry_.sources()[k].name, cursors_[k].epoch, cursors_[k].position});
    return cp;
  }

  bool done() const noexcept { return step_ >= total_; }
  std::uint64_t step() const noexcept { return step_; }
  std::uint64_t total_steps() const noexcept { return total_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const ScheduleCondition& condition() const noexcept { return cond_; }
  const Registry& registry() const noexcept { return registry_; }

  ManifestHeader header() const {
    ManifestHeader h{cond_.id, seed_, registry_digest(registry_), kGeneratorId, {}};
    for (const StagePlan& s : cond_.stages) h.stages.push_back({s.index, s.steps});
    return h;
  }

  /// Draw for the next step. Returns the dataset's position in registry order
  /// alongside the event so hot loops can avoid the name copy.
  struct RawEvent {
    std::uint64_t step;
    int stage;
    std::size_t dataset;
    std::uint64_t instance;
  };

  RawEvent next_raw() {
    if (done()) throw PreconditionError("schedule exhausted after " + std::to_string(total_) + " steps");
    const std::uint64_t t = ++step_;
    while (stages_[stage_pos_].last < t) ++stage_pos_;
    const StageTable& stage = stages_[stage_pos_];

    const double u = unit_double(philox_u64(seed_, t, 0, 0));
    std::size_t pick = stage.cdf.size() - 1;
    for (std::size_t i = 0; i < stage.cdf.size(); ++i) {
      if (u < stage.cdf[i]) {
        pick = i;
        break;
      }
    }
    const std::size_t k = stage.dataset[pick];
    return {t, stage.index, k, draw_instance(k)};
  }

  SampleEvent next() {
    const RawEvent e = next_raw();
    return {e.step, e.stage, registry_.sources()[e.dataset].name, e.instance};
  }

 private:
  struct StageTable {
    int index;
    std::uint64_t first;  // inclusive global step range; first > last for empty stages
    std::uint64_t last;
    std::vector<std::size_t> dataset;  // registry positions with positive probability
    std::vector<double> cdf;
  };

  struct Cursor {
    std::uint64_t epoch = 0;
    std::uint64_t position = 0;
    bool started = false;
    std::vector<std::uint64_t> permutation;  // lazily rebuilt from (seed, k, epoch)
  };

  void shuffle(std::size_t k) {
    Cursor& c = cursors_[k];
    const std::uint64_t n = registry_.sources()[k].size;
    c.permutation.resize(n);
    std::iota(c.permutation.begin(), c.permutation.end(), std::uint64_t{0});
    PhiloxStream stream(seed_, static_cast<std::uint32_t>(k + 1), static_cast<std::uint32_t>(c.epoch));
    for (std::uint64_t i = n - 1; i > 0; --i) std::swap(c.permutation[i], c.permutation[stream.next_below(i + 1)]);
  }

  std::uint64_t draw_instance(std::size_t k) {
    Cursor& c = cursors_[k];
    const std::uint64_t n = registry_.sources()[k].size;
    if (!c.started) {
      c.started = true;
      shuffle(k);
    } else if (c.position == n) {
      ++c.epoch;
      c.position = 0;
      shuffle(k);
    } else if (c.permutation.size() != n) {
      shuffle(k);  // resumed mid-epoch
    }
    return c.permutation[c.position++];
  }

  ScheduleCondition cond_;
  Registry registry_;
  std::uint64_t seed_;
  std::uint64_t step_ = 0;
  std::uint64_t total_ = 0;
  std::size_t stage_pos_ = 0;
  std::vector<StageTable> stages_;
  std::vector<Cursor> cursors_;
};

inline SampleEvent next_event(SamplerState& state) { return state.next(); }

// ---------------------------------------------------------------------------
// Manifest text format: one JSON object per line, header first.
//   {"manifest":"stagemix-manifest/1","condition":"B","seed":42,
//    "registry_digest":"...","generator":"...","stages":[{"index":1,"steps":10},...],
//    "total_steps":50}
//   {"step":1,"stage":1,"dataset":"LLaVA-Pretrain","instance":4711}

inline std::string manifest_header_line(const ManifestHeader& h) {
  Json stages = Json::array();
  for (const auto& s : h.stages) stages.push_back({{"index", s.index}, {"steps", s.steps}});
  const Json j = {{"manifest", kManifestFormat}, {"condition", h.condition},     {"seed", h.seed},
                  {"registry_digest", h.registry_digest}, {"generator", h.generator}, {"stages", std::move(stages)},
                  {"total_steps", h.total_steps()}};
  return j.dump() + "\n";
}

/// Streams events to a sink with field order fixed; dataset names are escaped once.
class ManifestWriter {
 public:
  ManifestWriter(std::ostream& out, const Registry& registry) : out_(out) {
    for (const DatasetSource& s : registry.sources()) quoted_.push_back(Json(s.name).dump());
  }

  void header(const ManifestHeader& h) { out_ << manifest_header_line(h); }

  void event(const SamplerState::RawEvent& e) {
    line_.clear();
    line_ += "{\"step\":";
    append_uint(line_, e.step);
    line_ += ",\"stage\":";
    append_uint(line_, static_cast<unsigned long long>(e.stage));
    line_ += ",\"dataset\":";
    line_ += quoted_[e.dataset];
    line_ += ",\"instance\":";
    append_uint(line_, e.instance);
    line_ += "}\n";
    out_.write(line_.data(), static_cast<std::streamsize>(line_.size()));
  }

 private:
  std::ostream& out_;
  std::vector<std::string> quoted_;
  std::string line_;
};

inline Manifest generate_manifest(const ScheduleCondition& cond, const Registry& registry, std::uint64_t seed) {
  SamplerState state(cond, registry, seed);
  Manifest m{state.header(), {}};
  m.events.reserve(state.total_steps());
  while (!state.done()) m.events.push_back(state.next());
  return m;
}

/// Writes events until the sampler is done or `limit` more events were emitted.
inline void write_events(SamplerState& state, ManifestWriter& writer,
                         std::uint64_t limit = static_cast<std::uint64_t>(-1)) {
  for (std::uint64_t n = 0; n < limit && !state.done(); ++n) writer.event(state.next_raw());
}

inline std::string manifest_to_text(const Manifest& m, const Registry& registry) {
  std::ostringstream out;
  ManifestWriter writer(out, registry);
  writer.header(m.header);
  for (const SampleEvent& e : m.events) {
    const std::size_t k = registry.index_of(e.dataset);
    if (k == Registry::npos) throw PreconditionError("event names unknown dataset '" + e.dataset + "'");
    writer.event({e.step, e.stage, k, e.instance});
  }
  return out.str();
}

inline Manifest read_manifest(std::istream& in, const std::string& where = "manifest") {
  Manifest m;
  std::string line;
  std::uint64_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const Json j = parse_json_text(line, where + ":" + std::to_string(line_no));
    const std::string at = where + ":" + std::to_string(line_no);
    if (!have_header) {
      if (detail::require_field<std::string>(j, "manifest", at) != kManifestFormat)
        throw ParseError(at + ": unsupported manifest format");
      m.header.condition = detail::require_field<std::string>(j, "condition", at);
      m.header.seed = detail::require_count(j, "seed", at);
      m.header.registry_digest = detail::require_field<std::string>(j, "registry_digest", at);
      m.header.generator = detail::require_field<std::string>(j, "generator", at);
      if (!j.contains("stages") || !j.at("stages").is_array()) throw ParseError(at + ": 'stages' must be an array");
      for (const Json& s : j.at("stages"))
        m.header.stages.push_back({detail::require_field<int>(s, "index", at), detail::require_count(s, "steps", at)});
      have_header = true;
      continue;
    }
    m.events.push_back({detail::require_count(j, "step", at), detail::require_field<int>(j, "stage", at),
                        detail::require_field<std::string>(j, "dataset", at), detail::require_count(j, "instance", at)});
  }
  if (!have_header) throw ParseError(where + ": missing header line");
  return m;
}

/// Fraction of the stage's events drawn from each dataset; empty for a stage with no events.
inline std::map<std::string, double> empirical_distribution(const Manifest& m, int stage) {
  bool known = false;
  for (const auto& s : m.header.stages) known = known || s.index == stage;
  if (!known) throw PreconditionError("manifest has no stage " + std::to_string(stage));
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t total = 0;
  for (const SampleEvent& e : m.events) {
    if (e.stage != stage) continue;
    ++counts[e.dataset];
    ++total;
  }
  std::map<std::string, double> freq;
  for (const auto& [name, n] : counts) freq[name] = static_cast<double>(n) / static_cast<double>(total);
  return freq;
}

inline Json checkpoint_to_json(const SamplerCheckpoint& cp) {
  Json cursors = Json::array();
  for (const auto& c : cp.cursors)
    cursors.push_back({{"dataset", c.dataset}, {"epoch", c.epoch}, {"position", c.position}});
  return {{"state", kCheckpointFormat},
          {"condition", cp.condition},
          {"condition_digest", cp.condition_digest},
          {"registry_digest", cp.registry_digest},
          {"generator", cp.generator},
          {"seed", cp.seed},
          {"step", cp.step},
          {"cursors", std::move(cursors)}};
}

inline SamplerCheckpoint checkpoint_from_json(const Json& j) {
  const std::string at = "sampler state";
  if (detail::require_field<std::string>(j, "state", at) != kCheckpointFormat)
    throw ParseError(at + ": unsupported state format");
  SamplerCheckpoint cp;
  cp.condition = detail::require_field<std::string>(j, "condition", at);
  cp.condition_digest = detail::require_field<std::string>(j, "condition_digest", at);
  cp.registry_digest = detail::require_field<std::string>(j, "registry_digest", at);
  cp.generator = detail::require_field<std::string>(j, "generator", at);
  cp.seed = detail::require_count(j, "seed", at);
  cp.step = detail::require_count(j, "step", at);
  if (!j.contains("cursors") || !j.at("cursors").is_array()) throw ParseError(at + ": 'cursors' must be an array");
  for (const Json& c : j.at("cursors"))
    cp.cursors.push_back({detail::require_field<std::string>(c, "dataset", at), detail::require_count(c, "epoch", at),
                          detail::require_count(c, "position", at)});
  return cp;
}

}  // namespace stagemix
