#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <sstream>

#include "oracles/spike_oracle.hpp"
#include "stagemix/dynamics.hpp"
#include "stagemix/dynamics_io.hpp"

namespace stagemix {
namespace {

LossTrace trace_of(const std::vector<double>& losses, std::uint64_t stage2_from = 0) {
  std::vector<LossRecord> records;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const std::uint64_t step = i + 1;
    records.push_back({step, stage2_from != 0 && step >= stage2_from ? 2 : 1, losses[i]});
  }
  return LossTrace(std::move(records));
}

std::vector<double> lone_outlier(std::size_t length, std::size_t at, double base, double peak) {
  std::vector<double> v(length, base);
  v[at - 1] = peak;
  return v;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

TEST(LossTrace, RejectsMalformedRecords) {
  EXPECT_THROW(LossTrace({{0, 1, 1.0}}), PreconditionError);
  EXPECT_THROW(LossTrace({{2, 1, 1.0}, {2, 1, 1.0}}), PreconditionError);
  EXPECT_THROW(LossTrace({{1, 2, 1.0}, {2, 1, 1.0}}), PreconditionError);
  EXPECT_THROW(LossTrace({{1, 1, -0.5}}), PreconditionError);
  EXPECT_THROW(LossTrace({{1, 1, std::nan("")}}), PreconditionError);
}

TEST(LocalFluctuation, ConstantTraceIsExactlyZero) {
  for (const auto& p : local_fluctuation(trace_of(std::vector<double>(200, 2.3)), 50)) EXPECT_EQ(p.sigma, 0.0);
}

TEST(LocalFluctuation, SmallExample) {
  const auto sigma = local_fluctuation(trace_of({1, 2, 3, 4}), 2);
  ASSERT_EQ(sigma.size(), 3u);
  for (const auto& p : sigma) EXPECT_EQ(p.sigma, 0.5);
  EXPECT_EQ(sigma.front().step, 2u);
  EXPECT_EQ(sigma.back().step, 4u);
}

TEST(LocalFluctuation, WindowMustFit) {
  EXPECT_THROW(local_fluctuation(trace_of({1, 2, 3}), 4), PreconditionError);
  EXPECT_THROW(local_fluctuation(trace_of({1, 2, 3}), 1), PreconditionError);
  EXPECT_THROW(detect_spikes(trace_of({1, 2, 3}), 4), PreconditionError);
  EXPECT_THROW(detect_spikes(trace_of({1, 2, 3}), 0), PreconditionError);
}

TEST(LocalFluctuation, StreamingMatchesBatchBitForBit) {
  std::mt19937_64 gen(5);
  std::lognormal_distribution<double> dist(0.0, 0.7);
  std::vector<double> losses(5000);
  for (auto& x : losses) x = dist(gen);
  const auto trace = trace_of(losses);
  for (std::size_t w : {2u, 3u, 50u, 777u}) {
    const auto batch = window_stats(trace, w);
    RollingWindow rolling(w);
    std::size_t i = 0;
    for (double x : losses) {
      const auto m = rolling.push(x);
      if (!m) continue;
      ASSERT_TRUE(same_bits(m->mean, batch.moments[i].mean)) << w << " " << i;
      ASSERT_TRUE(same_bits(m->stddev, batch.moments[i].stddev)) << w << " " << i;
      ++i;
    }
    EXPECT_EQ(i, batch.moments.size());
  }
}

TEST(SpikeDetection, LoneOutlierBoundary) {
  const auto trace = trace_of(lone_outlier(120, 50, 2.0, 7.0));
  EXPECT_EQ(detect_spikes(trace, 6).spike_steps, (std::vector<std::uint64_t>{50}));
  // With u = 5 the outlier sits exactly at mean + 2 sigma, which is not strictly outside.
  EXPECT_TRUE(detect_spikes(trace, 5).spike_steps.empty());
  for (std::size_t u = 6; u <= 50; ++u) EXPECT_EQ(detect_spikes(trace, u).spike_steps, (std::vector<std::uint64_t>{50}));
  for (std::size_t u = 2; u <= 5; ++u) EXPECT_TRUE(detect_spikes(trace, u).spike_steps.empty()) << u;
}

TEST(SpikeDetection, DownwardOutlierCountsToo) {
  EXPECT_EQ(detect_spikes(trace_of(lone_outlier(60, 40, 3.0, 0.5)), 10).spike_steps, (std::vector<std::uint64_t>{40}));
}

TEST(SpikeDetection, LinearSegmentsAreNeverSpikes) {
  for (double slope : {-0.01, 0.0, 0.003, 1.0}) {
    std::vector<double> losses;
    for (int i = 0; i < 400; ++i) losses.push_back(5.0 + slope * i);
    for (std::size_t u : {2u, 3u, 7u, 50u, 400u}) EXPECT_TRUE(detect_spikes(trace_of(losses), u).spike_steps.empty());
  }
}

TEST(SpikeDetection, ConstantWindowsAreNeverSpikes) {
  const auto report = detect_spikes(trace_of(std::vector<double>(100, 1.25)), 10);
  EXPECT_TRUE(report.spike_steps.empty());
  EXPECT_EQ(report.valid_windows, 91u);
  EXPECT_EQ(report.frequency, 0.0);
}

TEST(SpikeDetection, AgreesWithBruteForceOracle) {
  std::mt19937_64 gen(20240611);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t length = 10 + gen() % 600;
    const std::size_t u = 2 + gen() % std::min<std::size_t>(length - 1, 80);
    std::vector<double> losses(length);
    switch (trial % 4) {
      case 0: {  // smooth plus noise
        std::normal_distribution<double> noise(0.0, 0.05);
        for (std::size_t i = 0; i < length; ++i) losses[i] = std::max(0.0, 2.0 * std::exp(-0.003 * i) + noise(gen));
        break;
      }
      case 1: {  // few distinct values: many exact ties
        for (auto& x : losses) x = static_cast<double>(gen() % 3);
        break;
      }
      case 2: {  // sparse outliers on a flat base
        for (auto& x : losses) x = (gen() % 20 == 0) ? 1.0 + static_cast<double>(gen() % 5) : 1.0;
        break;
      }
      default: {  // heavy tail
        std::lognormal_distribution<double> heavy(0.0, 1.5);
        for (auto& x : losses) x = heavy(gen);
      }
    }
    const auto report = detect_spikes(trace_of(losses), u);
    ASSERT_EQ(report.spike_steps, oracle::brute_spike_positions(losses, u)) << "trial " << trial << " u=" << u;
  }
}

TEST(SpikeDetection, ShiftAndScaleInvariance) {
  std::mt19937_64 gen(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t length = 50 + gen() % 300;
    const std::size_t u = 2 + gen() % 40;
    // Dyadic values: shifting by an integer and scaling by a power of two are exact.
    std::vector<double> losses(length);
    for (auto& x : losses) x = static_cast<double>(gen() % 4096) / 1024.0;
    const auto base = detect_spikes(trace_of(losses), u).spike_steps;
    const double c = static_cast<double>(gen() % 100);
    const double k = std::ldexp(1.0, static_cast<int>(gen() % 20) - 10);
    std::vector<double> shifted = losses;
    std::vector<double> scaled = losses;
    for (auto& x : shifted) x += c;
    for (auto& x : scaled) x *= k;
    EXPECT_EQ(detect_spikes(trace_of(shifted), u).spike_steps, base);
    EXPECT_EQ(detect_spikes(trace_of(scaled), u).spike_steps, base);
  }
}

TEST(SpikeDetection, FrequencyAndFormatting) {
  SpikeReport r;
  r.valid_windows = 153;
  r.spike_steps = {60, 90, 120};
  r.frequency = 3.0 / 153.0;
  EXPECT_EQ(format_percent(spike_frequency(r)), "1.96%");
  EXPECT_EQ(format_percent(0.0), "0.00%");
}

TEST(StageTransition, RatioAtBoundary) {
  std::vector<double> losses(200, 2.0);
  for (std::size_t i = 100; i < 200; ++i) losses[i] = 2.5;
  const auto report = stage_transition_ratio(trace_of(losses, 101));
  ASSERT_EQ(report.boundaries.size(), 1u);
  EXPECT_EQ(report.boundaries[0].ratio, 0.25);
  EXPECT_EQ(report.boundaries[0].step_before, 100u);
  EXPECT_EQ(report.boundaries[0].step_after, 101u);
  EXPECT_EQ(report.max_abs_ratio(), 0.25);
}

TEST(StageTransition, ContinuousLossGivesZero) {
  EXPECT_EQ(stage_transition_ratio(trace_of(std::vector<double>(20, 1.5), 11)).max_abs_ratio(), 0.0);
}

TEST(StageTransition, ThreeStagesTwoBoundaries) {
  const LossTrace trace({{1, 1, 4.0}, {2, 1, 2.0}, {3, 2, 1.0}, {4, 2, 1.0}, {5, 3, 1.5}});
  const auto report = stage_transition_ratio(trace);
  ASSERT_EQ(report.boundaries.size(), 2u);
  EXPECT_EQ(report.boundaries[0].ratio, -0.5);
  EXPECT_EQ(report.boundaries[1].ratio, 0.5);
  EXPECT_EQ(report.max_abs_ratio(), 0.5);
}

TEST(StageTransition, Errors) {
  EXPECT_THROW(stage_transition_ratio(trace_of({1, 2, 3})), PreconditionError);
  EXPECT_THROW(stage_transition_ratio(LossTrace({{1, 1, 1.0}, {2, 3, 1.0}})), PreconditionError);
  EXPECT_THROW(stage_transition_ratio(LossTrace({{1, 1, 0.0}, {2, 2, 1.0}})), PreconditionError);
}

TEST(StabilitySummary, ConstantTwoStageTrace) {
  const auto s = stability_summary(trace_of(std::vector<double>(300, 1.0), 151), 50, 50);
  const auto row = format_stability_row(s);
  EXPECT_EQ(row.loss_std, "0.000");
  EXPECT_EQ(row.spike_frequency, "0.00%");
  EXPECT_EQ(row.transition_stability, "0.00");
  EXPECT_TRUE(s.gaps.empty());
}

TEST(StabilitySummary, RowLayout) {
  StabilitySummary s;
  s.loss_std = 0.0961;
  s.spike_frequency = 0.0148;
  s.transition_stability = 0.374;
  EXPECT_EQ(render_stability_table({{"A", s}}),
            "Condition  Loss Std  Spike Freq.  Stage Tran Stab\n"
            "A             0.096        1.48%             0.37\n");
}

TEST(StabilitySummary, GapsAreReported) {
  const LossTrace trace({{1, 1, 1.0}, {2, 1, 1.0}, {5, 1, 1.0}, {6, 2, 1.0}, {10, 2, 1.0}});
  const auto gaps = find_gaps(trace);
  ASSERT_EQ(gaps.size(), 2u);
  EXPECT_EQ(gaps[0].after_step, 2u);
  EXPECT_EQ(gaps[0].missing, 2u);
  EXPECT_EQ(gaps[1].missing, 3u);
}

TEST(LossIo, JsonlRoundTripAndLooseFields) {
  const LossTrace trace({{1, 1, 2.5}, {2, 1, 0.1}, {3, 2, 1.0 / 3.0}});
  std::ostringstream out;
  write_loss_jsonl(out, trace);
  std::istringstream in(out.str());
  EXPECT_EQ(read_loss_jsonl(in).records().size(), 3u);
  std::istringstream again(out.str());
  const auto back = read_loss_jsonl(again);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.records()[i], trace.records()[i]);

  std::istringstream loose("{ \"loss\": 1.5, \"step\": 4, \"stage\": 1, \"lr\": 0.1 }\n\n{\"step\":5,\"stage\":1,\"loss\":1e-1}\n");
  const auto parsed = read_loss_jsonl(loose);
  EXPECT_EQ(parsed.records()[0], (LossRecord{4, 1, 1.5}));
  EXPECT_EQ(parsed.records()[1].loss, 0.1);
}

TEST(LossIo, MalformedLinesNameTheLine) {
  std::istringstream in("{\"step\":1,\"stage\":1,\"loss\":1}\n{\"step\":2,\"stage\":1}\n");
  try {
    read_loss_jsonl(in, "run.jsonl");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("run.jsonl:2"), std::string::npos) << e.what();
  }
  std::istringstream bad_order("{\"step\":2,\"stage\":1,\"loss\":1}\n{\"step\":1,\"stage\":1,\"loss\":1}\n");
  EXPECT_THROW(read_loss_jsonl(bad_order), ParseError);
}

TEST(LossIo, CsvWithStageSidecar) {
  std::istringstream sidecar("stage,start_step\n1,1\n2,4\n3,6\n");
  const auto stages = read_stage_sidecar(sidecar);
  std::istringstream csv("step,loss\n1,3.0\n2,2.5\n3,2.0\n4,2.4\n5,2.2\n6,2.2\n7,2.0\n");
  const auto trace = read_loss_csv(csv, stages);
  std::vector<int> labels;
  for (const auto& r : trace.records()) labels.push_back(r.stage);
  EXPECT_EQ(labels, (std::vector<int>{1, 1, 1, 2, 2, 3, 3}));
  const auto report = stage_transition_ratio(trace);
  EXPECT_NEAR(report.boundaries[0].ratio, 0.2, 1e-15);

  std::istringstream bad("1,abc\n");
  EXPECT_THROW(read_loss_csv(bad, stages), ParseError);
  std::istringstream unordered("1,5\n2,3\n");
  EXPECT_THROW(read_stage_sidecar(unordered), ParseError);
}

}  // namespace
}  // namespace stagemix
