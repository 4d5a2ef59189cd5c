#pragma once

// `stagemix` command line: validate, exposure, manifest, analyze, metrics, simulate.
// Exit codes: 0 success, 1 validation violations, 2 usage or precondition
// errors, 3 I/O or parse errors. Data goes to --out or the output stream,
// diagnostics to the error stream.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stagemix/dynamics.hpp"
#include "stagemix/dynamics_io.hpp"
#include "stagemix/metrics.hpp"
#include "stagemix/metrics_io.hpp"
#include "stagemix/sampler.hpp"
#include "stagemix/schedule.hpp"
#include "stagemix/schedule_io.hpp"
#include "stagemix/simulator.hpp"

namespace stagemix::cli {

enum ExitCode : int { kOk = 0, kViolations = 1, kUsage = 2, kIo = 3 };

enum class OutputFormat { Text, Data };

struct ScheduleArgs {
  std::vector<std::string> conditions;
  std::vector<std::string> schedules;
  std::string steps;
  std::string registry;
};

struct CliConfig {
  ScheduleArgs schedule;
  std::uint64_t seed = 0;
  std::size_t window = kDefaultWindow;
  std::size_t spike_window = kDefaultWindow;
  double warn_threshold = kDefaultWarnThreshold;
  double fraction = 0.95;
  std::string out;
  std::string format = "text";
  // manifest
  std::optional<std::uint64_t> stop_after;
  std::string state;
  std::string resume;
  // analyze
  std::string log;
  std::string csv;
  std::string stages;
  std::string label;
  // metrics
  std::vector<std::string> evals;
  // simulate
  std::string spec;
};

namespace detail {

inline std::array<std::uint64_t, 3> parse_steps(const std::string& text) {
  std::array<std::uint64_t, 3> steps{};
  std::stringstream ss(text);
  std::string item;
  std::size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == 3) throw PreconditionError("--steps expects exactly three counts t1,t2,t3");
    try {
      steps[n++] = stagemix::detail::parse_number<std::uint64_t>(item, "--steps");
    } catch (const ParseError& e) {
      throw PreconditionError(e.what());
    }
  }
  if (n != 3) throw PreconditionError("--steps expects exactly three counts t1,t2,t3");
  return steps;
}

inline Registry resolve_registry(const ScheduleArgs& args) {
  return args.registry.empty() ? paper_registry() : load_registry(args.registry);
}

inline std::vector<ScheduleCondition> resolve_conditions(const ScheduleArgs& args) {
  std::vector<ScheduleCondition> out;
  if (!args.conditions.empty()) {
    if (args.steps.empty()) throw PreconditionError("--condition needs --steps t1,t2,t3");
    const auto steps = parse_steps(args.steps);
    for (const auto& id : args.conditions) out.push_back(builtin_condition(id, steps));
  }
  for (const auto& path : args.schedules) out.push_back(load_schedule(path));
  if (out.empty()) throw PreconditionError("give --condition <A|B|C|D> or --schedule <path>");
  return out;
}

inline OutputFormat resolve_format(const std::string& text) {
  return text == "data" ? OutputFormat::Data : OutputFormat::Text;
}

/// Writes to --out when given, else to the output stream.
inline void emit(const CliConfig& cfg, std::ostream& out, const std::string& text) {
  if (cfg.out.empty())
    out << text;
  else
    write_text_file(cfg.out, text);
}

inline void add_schedule_flags(CLI::App* cmd, ScheduleArgs& args) {
  cmd->add_option("--condition", args.conditions, "Built-in condition A, B, C or D; repeatable")
      ->check(CLI::IsMember({"A", "B", "C", "D"}));
  cmd->add_option("--schedule", args.schedules, "Schedule file (JSON); repeatable");
  cmd->add_option("--steps", args.steps, "Stage step counts t1,t2,t3 for built-in conditions");
  cmd->add_option("--registry", args.registry, "Dataset registry file (JSON); default: the six-dataset pool");
}

inline void add_format_flag(CLI::App* cmd, CliConfig& cfg) {
  cmd->add_option("--format", cfg.format, "Output format")
      ->check(CLI::IsMember({"text", "data"}))
      ->capture_default_str();
}

// ---------------------------------------------------------------------------

inline int cmd_validate(const CliConfig& cfg, std::ostream& out) {
  const Registry registry = resolve_registry(cfg.schedule);
  const auto conds = resolve_conditions(cfg.schedule);
  bool ok = true;
  std::string text;
  Json data = Json::array();
  for (const auto& cond : conds) {
    const ValidationResult v = validate_condition(cond, registry);
    ok = ok && v.ok();
    if (conds.size() > 1) text += cond.id + ": ";
    text += render_validation(v);
    Json item = validation_to_json(v);
    item["condition"] = cond.id;
    data.push_back(std::move(item));
  }
  emit(cfg, out, resolve_format(cfg.format) == OutputFormat::Data ? data.dump(2) + "\n" : text);
  return ok ? kOk : kViolations;
}

inline int cmd_exposure(const CliConfig& cfg, std::ostream& out) {
  const Registry registry = resolve_registry(cfg.schedule);
  const auto conds = resolve_conditions(cfg.schedule);
  const ExposureComparison cmp = compare_exposure(conds, registry, cfg.warn_threshold);
  emit(cfg, out, resolve_format(cfg.format) == OutputFormat::Data ? exposure_to_json(cmp).dump(2) + "\n"
                                                                  : render_exposure(cmp));
  return kOk;
}

inline int cmd_manifest(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  const Registry registry = resolve_registry(cfg.schedule);
  const auto conds = resolve_conditions(cfg.schedule);
  if (conds.size() != 1) throw PreconditionError("manifest takes exactly one condition");
  if (const auto v = validate_condition(conds.front(), registry); !v.ok()) {
    err << render_validation(v);
    return kViolations;
  }
  std::optional<SamplerState> state;
  const bool resuming = !cfg.resume.empty();
  if (resuming) {
    const auto cp = checkpoint_from_json(parse_json_text(read_text_file(cfg.resume), cfg.resume));
    state.emplace(SamplerState::resume(conds.front(), registry, cp));
  } else {
    state.emplace(conds.front(), registry, cfg.seed);
  }
  std::ofstream file;
  if (!cfg.out.empty()) {
    file.open(cfg.out, std::ios::binary | (resuming ? std::ios::app : std::ios::trunc));
    if (!file) throw IoError("cannot open '" + cfg.out + "' for writing");
  }
  std::ostream& sink = cfg.out.empty() ? out : file;
  ManifestWriter writer(sink, registry);
  if (!resuming) writer.header(state->header());
  write_events(*state, writer, cfg.stop_after.value_or(static_cast<std::uint64_t>(-1)));
  sink.flush();
  if (!sink) throw IoError("write to manifest failed");
  if (!cfg.state.empty()) write_text_file(cfg.state, checkpoint_to_json(state->checkpoint()).dump(2) + "\n");
  return kOk;
}

inline LossTrace load_trace(const CliConfig& cfg) {
  if (!cfg.log.empty()) {
    std::ifstream in(cfg.log, std::ios::binary);
    if (!in) throw IoError("cannot open '" + cfg.log + "' for reading");
    return read_loss_jsonl(in, cfg.log);
  }
  if (!cfg.csv.empty()) {
    if (cfg.stages.empty()) throw PreconditionError("--csv needs --stages <sidecar>");
    std::ifstream side(cfg.stages, std::ios::binary);
    if (!side) throw IoError("cannot open '" + cfg.stages + "' for reading");
    const auto starts = read_stage_sidecar(side, cfg.stages);
    std::ifstream in(cfg.csv, std::ios::binary);
    if (!in) throw IoError("cannot open '" + cfg.csv + "' for reading");
    return read_loss_csv(in, starts, cfg.csv);
  }
  throw PreconditionError("give --log <jsonl> or --csv <path> --stages <sidecar>");
}

inline int cmd_analyze(const CliConfig& cfg, std::ostream& out) {
  const LossTrace trace = load_trace(cfg);
  const StabilitySummary summary = stability_summary(trace, cfg.window, cfg.spike_window);
  const std::string label = cfg.label.empty()
                                ? std::filesystem::path(cfg.log.empty() ? cfg.csv : cfg.log).stem().string()
                                : cfg.label;
  if (resolve_format(cfg.format) == OutputFormat::Data) {
    Json j = stability_to_json(summary);
    j["label"] = label;
    emit(cfg, out, j.dump(2) + "\n");
  } else {
    out << render_stability_table({{label, summary}}) << "\n" << render_stability_details(summary);
    if (!cfg.out.empty()) {
      Json j = stability_to_json(summary);
      j["label"] = label;
      write_text_file(cfg.out, j.dump(2) + "\n");
    }
  }
  return kOk;
}

inline EvalLog load_evals(const std::vector<std::string>& specs) {
  EvalLog merged;
  for (const auto& spec : specs) {
    std::string label;
    std::string path = spec;
    if (const auto eq = spec.find('='); eq != std::string::npos && !std::filesystem::exists(spec)) {
      label = spec.substr(0, eq);
      path = spec.substr(eq + 1);
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    const std::string fallback = label.empty() ? std::filesystem::path(path).stem().string() : label;
    for (auto& [condition, snaps] : read_eval_log(in, path, fallback)) {
      const std::string key = label.empty() ? condition : label;
      if (merged.contains(key)) throw PreconditionError("condition '" + key + "' appears in more than one eval log");
      merged[key] = std::move(snaps);
    }
  }
  if (merged.empty()) throw PreconditionError("no evaluation records found");
  return merged;
}

inline int cmd_metrics_aggregate(const CliConfig& cfg, std::ostream& out) {
  const EvalLog log = load_evals(cfg.evals);
  std::string text = "Condition       Step  General  Reasoning    OCR  Overall\n";
  Json data = Json::array();
  for (const auto& [condition, snaps] : log) {
    for (const auto& snap : snaps) {
      if (!snap.aggregable()) {
        text += pad_right(condition, 10) + pad_left(std::to_string(snap.step), 9) + "  (partial snapshot)\n";
        continue;
      }
      const CapabilityScores s = aggregate(snap);
      text += pad_right(condition, 10) + pad_left(std::to_string(snap.step), 9) + pad_left(s.general.render(), 9) +
              pad_left(s.reasoning.render(), 11) + pad_left(s.detail.render(), 7) + pad_left(s.overall.render(), 9) +
              "\n";
      Json item = capability_to_json(s);
      item["condition"] = condition;
      item["step"] = snap.step;
      data.push_back(std::move(item));
    }
  }
  emit(cfg, out, resolve_format(cfg.format) == OutputFormat::Data ? data.dump(2) + "\n" : text);
  return kOk;
}

inline int cmd_metrics_trajectory(const CliConfig& cfg, std::ostream& out) {
  const EvalLog log = load_evals(cfg.evals);
  std::string text;
  std::string csv;
  for (const auto& [condition, snaps] : log) {
    const CapabilityTrajectory traj = trajectory(snaps);
    const auto conv = convergence_step(traj, cfg.fraction);
    text += "Condition " + condition + "\n" + export_trajectory_csv(traj);
    text += "convergence step (" + shortest(cfg.fraction) + " of final overall): " +
            (conv ? std::to_string(*conv) : std::string("not reached")) + "\n";
    if (log.size() == 1) {
      csv = export_trajectory_csv(traj);
    } else {
      std::string block = export_trajectory_csv(traj);
      std::stringstream ss(block);
      std::string line;
      std::getline(ss, line);
      if (csv.empty()) csv = "condition," + line + "\n";
      while (std::getline(ss, line)) csv += condition + "," + line + "\n";
    }
  }
  if (resolve_format(cfg.format) == OutputFormat::Data)
    emit(cfg, out, csv);
  else {
    out << text;
    if (!cfg.out.empty()) write_text_file(cfg.out, csv);
  }
  return kOk;
}

inline int cmd_metrics_compare(const CliConfig& cfg, std::ostream& out) {
  const EvalLog log = load_evals(cfg.evals);
  std::map<std::string, EvalSnapshot> rows;
  for (const auto& [condition, snaps] : log) rows[condition] = snaps.back();
  const ConditionComparison cmp = comparison_table(rows);
  if (resolve_format(cfg.format) == OutputFormat::Data) {
    emit(cfg, out, export_comparison_csv(cmp));
  } else {
    out << render_comparison(cmp);
    if (!cfg.out.empty()) write_text_file(cfg.out, export_comparison_csv(cmp));
  }
  return kOk;
}

inline LossTraceSpec loss_spec_from_json(const Json& j) {
  LossTraceSpec spec;
  if (!j.contains("stages") || !j.at("stages").is_array()) throw ParseError("loss spec: 'stages' must be an array");
  for (const Json& s : j.at("stages")) {
    spec.stages.push_back({stagemix::detail::require_count(s, "steps", "loss spec stage"),
                           stagemix::detail::require_field<double>(s, "start_level", "loss spec stage"),
                           s.value("decay", 0.0), s.value("noise", 0.0)});
  }
  if (j.contains("injections")) {
    for (const Json& inj : j.at("injections"))
      spec.injections.push_back({stagemix::detail::require_count(inj, "step", "loss spec injection"),
                                 stagemix::detail::require_field<double>(inj, "multiplier", "loss spec injection")});
  }
  return spec;
}

inline CapabilityModelSpec capability_spec_from_json(const Json& j) {
  CapabilityModelSpec model;
  model.exposure_scale = j.value("exposure_scale", model.exposure_scale);
  model.eval_interval = j.value("eval_interval", model.eval_interval);
  model.noise = j.value("noise", model.noise);
  const char* names[] = {"general", "reasoning", "detail"};
  for (std::size_t c = 0; c < 3; ++c) {
    if (!j.contains("curves") || !j.at("curves").contains(names[c]))
      throw ParseError(std::string("capability spec: missing curve '") + names[c] + "'");
    const Json& curve = j.at("curves").at(names[c]);
    model.curves[c].baseline = stagemix::detail::require_field<double>(curve, "baseline", names[c]);
    model.curves[c].ceiling = stagemix::detail::require_field<double>(curve, "ceiling", names[c]);
    if (curve.contains("transfer")) {
      for (const auto& [group, alpha] : curve.at("transfer").items()) {
        const auto g = parse_group(group);
        if (!g) throw ParseError("capability spec: unknown group '" + group + "'");
        model.curves[c].transfer[static_cast<std::size_t>(*g)] = alpha.get<double>();
      }
    }
  }
  return model;
}

inline int cmd_simulate(const CliConfig& cfg, std::ostream& out) {
  const Json spec = parse_json_text(read_text_file(cfg.spec), cfg.spec);
  const std::string prefix = cfg.out;
  Json truth = Json::object();
  truth["seed"] = cfg.seed;
  if (spec.contains("loss")) {
    const SyntheticLoss loss = synth_loss(loss_spec_from_json(spec.at("loss")), cfg.seed);
    std::ostringstream text;
    write_loss_jsonl(text, loss.trace);
    write_text_file(prefix + ".loss.jsonl", text.str());
    truth["spike_steps"] = loss.injected_steps;
    truth["transition_ratios"] = loss.transition_ratios;
    out << "wrote " << prefix << ".loss.jsonl (" << loss.trace.size() << " records)\n";
  }
  if (spec.contains("capability")) {
    const Json& cap = spec.at("capability");
    ScheduleCondition cond;
    if (cap.contains("schedule")) {
      cond = schedule_from_json(cap.at("schedule"));
    } else {
      const auto id = stagemix::detail::require_field<std::string>(cap, "condition", "capability spec");
      const auto steps = stagemix::detail::require_field<std::array<std::uint64_t, 3>>(cap, "steps", "capability spec");
      cond = builtin_condition(id, steps);
    }
    const Registry registry = cap.contains("registry") ? registry_from_json(cap.at("registry")) : paper_registry();
    const SyntheticCapability sim = synth_capability(cond, registry, capability_spec_from_json(cap), cfg.seed);
    std::ostringstream text;
    write_eval_log(text, cond.id, sim.snapshots);
    write_text_file(prefix + ".eval.jsonl", text.str());
    Json curves = Json::array();
    for (const auto& t : sim.truth)
      curves.push_back({{"step", t.step},
                        {"general", t.general},
                        {"reasoning", t.reasoning},
                        {"detail", t.detail},
                        {"overall", t.overall()}});
    truth["condition"] = cond.id;
    truth["capability"] = std::move(curves);
    out << "wrote " << prefix << ".eval.jsonl (" << sim.snapshots.size() << " snapshots)\n";
  }
  if (!spec.contains("loss") && !spec.contains("capability"))
    throw ParseError(cfg.spec + ": expected a 'loss' and/or 'capability' section");
  write_text_file(prefix + ".truth.json", truth.dump(2) + "\n");
  out << "wrote " << prefix << ".truth.json\n";
  return kOk;
}

}  // namespace detail

/// Entry point shared by the binary and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CliConfig cfg;
  CLI::App app{"stagemix: multi-stage data schedules, sample manifests and training-log analytics"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  auto* validate = app.add_subcommand("validate", "Check a schedule against a dataset registry");
  detail::add_schedule_flags(validate, cfg.schedule);
  detail::add_format_flag(validate, cfg);
  validate->add_option("--out", cfg.out, "Write the verdict here instead of stdout");

  auto* exposure = app.add_subcommand("exposure", "Expected per-dataset exposure and cross-condition deviation");
  detail::add_schedule_flags(exposure, cfg.schedule);
  detail::add_format_flag(exposure, cfg);
  exposure->add_option("--warn-threshold", cfg.warn_threshold, "Flag relative deviations above this")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  exposure->add_option("--out", cfg.out, "Write the report here instead of stdout");

  auto* manifest = app.add_subcommand("manifest", "Generate the deterministic sample manifest of a schedule");
  detail::add_schedule_flags(manifest, cfg.schedule);
  manifest->add_option("--seed", cfg.seed, "64-bit sampler seed")->required();
  manifest->add_option("--out", cfg.out, "Manifest file (appended to when resuming)");
  manifest->add_option("--stop-after", cfg.stop_after, "Emit at most this many events, then stop");
  manifest->add_option("--state", cfg.state, "Write the sampler checkpoint here when done");
  manifest->add_option("--resume", cfg.resume, "Continue from a sampler checkpoint");

  auto* analyze = app.add_subcommand("analyze", "Loss-curve fluctuation, spikes and stage transitions");
  analyze->add_option("--log", cfg.log, "Loss log (JSON lines with step, stage, loss)");
  analyze->add_option("--csv", cfg.csv, "Two-column step,loss file");
  analyze->add_option("--stages", cfg.stages, "Sidecar of stage,start_step rows for --csv");
  analyze->add_option("--window", cfg.window, "Fluctuation window w")->check(CLI::Range(2, 1 << 30))->capture_default_str();
  analyze->add_option("--spike-window", cfg.spike_window, "Spike window u")
      ->check(CLI::Range(2, 1 << 30))
      ->capture_default_str();
  analyze->add_option("--label", cfg.label, "Row label (default: input file stem)");
  analyze->add_option("--out", cfg.out, "Also write the structured report here");
  detail::add_format_flag(analyze, cfg);

  auto* metrics = app.add_subcommand("metrics", "Capability aggregates, trajectories and comparison tables");
  metrics->require_subcommand(1);
  auto add_metric_flags = [&](CLI::App* cmd) {
    cmd->add_option("--eval", cfg.evals, "Eval log, optionally LABEL=path; repeatable")->required();
    cmd->add_option("--out", cfg.out, "Export file (CSV)");
    detail::add_format_flag(cmd, cfg);
  };
  auto* m_aggregate = metrics->add_subcommand("aggregate", "Aggregates for every snapshot");
  add_metric_flags(m_aggregate);
  auto* m_trajectory = metrics->add_subcommand("trajectory", "Capability series and convergence step");
  add_metric_flags(m_trajectory);
  m_trajectory->add_option("--fraction", cfg.fraction, "Convergence threshold as a fraction of the final overall")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  auto* m_compare = metrics->add_subcommand("compare", "Condition comparison table of final snapshots");
  add_metric_flags(m_compare);

  auto* simulate = app.add_subcommand("simulate", "Synthetic loss and eval logs with ground truth");
  simulate->add_option("--spec", cfg.spec, "Simulation spec (JSON)")->required();
  simulate->add_option("--seed", cfg.seed, "64-bit simulation seed")->required();
  simulate->add_option("--out", cfg.out, "Output prefix for .loss.jsonl, .eval.jsonl, .truth.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*validate) return detail::cmd_validate(cfg, out);
    if (*exposure) return detail::cmd_exposure(cfg, out);
    if (*manifest) return detail::cmd_manifest(cfg, out, err);
    if (*analyze) return detail::cmd_analyze(cfg, out);
    if (*m_aggregate) return detail::cmd_metrics_aggregate(cfg, out);
    if (*m_trajectory) return detail::cmd_metrics_trajectory(cfg, out);
    if (*m_compare) return detail::cmd_metrics_compare(cfg, out);
    if (*simulate) return detail::cmd_simulate(cfg, out);
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed input: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}

}  // namespace stagemix::cli
