#include <gtest/gtest.h>

#include "oracles/exposure_oracle.hpp"
#include "stagemix/schedule.hpp"
#include "stagemix/schedule_io.hpp"

namespace stagemix {
namespace {

bool has_rule(const ValidationResult& v, const std::string& rule) {
  for (const auto& violation : v.violations)
    if (violation.rule == rule) return true;
  return false;
}

TEST(BuiltinCondition, AllPresetsValidateAgainstThePaperRegistry) {
  const Registry registry = paper_registry();
  for (const char* id : {"A", "B", "C", "D"}) {
    const auto v = validate_condition(builtin_condition(id, {10, 20, 30}), registry);
    EXPECT_TRUE(v.ok()) << id << ": " << render_validation(v);
  }
}

TEST(BuiltinCondition, TablePresets) {
  const auto b = builtin_condition("B", {1, 1, 1});
  EXPECT_EQ(b.stages[1].distribution,
            (std::map<std::string, double>{{"ShareGPT4V", 0.70}, {"AI2D", 0.15}, {"ChartQA", 0.15}}));
  const auto c = builtin_condition("C", {1, 1, 1});
  EXPECT_EQ(c.stages[1].distribution, c.stages[2].distribution);
  EXPECT_EQ(c.stages[1].distribution.size(), 5u);
  for (const auto& [name, p] : c.stages[1].distribution) EXPECT_EQ(p, 0.20) << name;
  const auto d = builtin_condition("D", {1, 1, 1});
  EXPECT_EQ(d.stages[1].distribution, b.stages[2].distribution);
  EXPECT_EQ(d.stages[2].distribution, b.stages[1].distribution);
  for (const char* id : {"A", "B", "C", "D"}) {
    const auto cond = builtin_condition(id, {5, 6, 7});
    EXPECT_EQ(cond.stages[0].distribution, (std::map<std::string, double>{{"LLaVA-Pretrain", 1.0}}));
    EXPECT_EQ(cond.stages[0].steps, 5u);
    EXPECT_EQ(cond.stages[2].steps, 7u);
  }
}

TEST(BuiltinCondition, IsPure) {
  EXPECT_EQ(builtin_condition("A", {1, 2, 3}), builtin_condition("A", {1, 2, 3}));
}

TEST(BuiltinCondition, UnknownIdThrows) {
  EXPECT_THROW(builtin_condition("E", {1, 1, 1}), PreconditionError);
}

TEST(ValidateCondition, ProbabilitySumViolation) {
  ScheduleCondition cond{"custom",
                         {{1, 10, {{"LLaVA-Pretrain", 1.0}}}, {2, 10, {{"S4V", 0.5}, {"AI2D", 0.6}}}}};
  cond.stages[1].distribution = {{canonical_dataset_name("S4V"), 0.5}, {"AI2D", 0.6}};
  const auto v = validate_condition(cond, paper_registry());
  ASSERT_EQ(v.violations.size(), 1u);
  EXPECT_EQ(v.violations[0].rule, "probability-sum");
  EXPECT_EQ(v.violations[0].stage, 2);
  EXPECT_EQ(v.violations[0].message, "stage 2: probability sum 1.1 ≠ 1");
}

TEST(ValidateCondition, StageOneMustBeAlignmentOnly) {
  ScheduleCondition cond = builtin_condition("A", {1, 1, 1});
  cond.stages[0].distribution = {{"LLaVA-Pretrain", 0.5}, {"ShareGPT4V", 0.5}};
  const auto v = validate_condition(cond, paper_registry());
  ASSERT_EQ(v.violations.size(), 1u);
  EXPECT_EQ(v.violations[0].rule, "stage1-support");
  EXPECT_NE(v.violations[0].message.find("stage-1 support must be D0 only"), std::string::npos);
}

TEST(ValidateCondition, StructuralRules) {
  const Registry registry = paper_registry();
  ScheduleCondition one_stage{"x", {{1, 5, {{"LLaVA-Pretrain", 1.0}}}}};
  EXPECT_TRUE(has_rule(validate_condition(one_stage, registry), "stage-count"));

  ScheduleCondition skipped = builtin_condition("A", {1, 1, 1});
  skipped.stages[2].index = 4;
  EXPECT_TRUE(has_rule(validate_condition(skipped, registry), "stage-index"));

  ScheduleCondition unknown = builtin_condition("A", {1, 1, 1});
  unknown.id = "mine";
  unknown.stages[1].distribution = {{"COCO", 1.0}};
  EXPECT_TRUE(has_rule(validate_condition(unknown, registry), "unknown-dataset"));

  ScheduleCondition negative = builtin_condition("A", {1, 1, 1});
  negative.stages[1].distribution = {{"ShareGPT4V", 1.5}, {"AI2D", -0.5}};
  const auto v = validate_condition(negative, registry);
  EXPECT_TRUE(has_rule(v, "probability-range"));
  EXPECT_FALSE(has_rule(v, "probability-sum"));
}

TEST(ValidateCondition, SumToleranceIsOneEMinusNine) {
  ScheduleCondition cond = builtin_condition("A", {1, 1, 1});
  cond.id = "custom";
  cond.stages[1].distribution = {{"ShareGPT4V", 0.5 + 5e-10}, {"AI2D", 0.5}};
  EXPECT_TRUE(validate_condition(cond, paper_registry()).ok());
  cond.stages[1].distribution = {{"ShareGPT4V", 0.5 + 5e-9}, {"AI2D", 0.5}};
  EXPECT_FALSE(validate_condition(cond, paper_registry()).ok());
}

TEST(ValidateCondition, BuiltinIdsNeedTheSixDatasetRegistry) {
  Registry small({{"LLaVA-Pretrain", DataGroup::Alignment, 10}, {"ShareGPT4V", DataGroup::General, 10}});
  const auto v = validate_condition(builtin_condition("B", {1, 1, 1}), small);
  EXPECT_TRUE(has_rule(v, "builtin-registry"));

  // Sizes may differ; names and groups may not.
  const Registry paper = paper_registry();
  std::vector<DatasetSource> resized(paper.sources().begin(), paper.sources().end());
  for (auto& s : resized) s.size = 3;
  EXPECT_TRUE(validate_condition(builtin_condition("B", {1, 1, 1}), Registry(resized)).ok());
}

TEST(Registry, RejectsDuplicatesAndEmptyDatasets) {
  EXPECT_THROW(Registry({{"a", DataGroup::Alignment, 1}, {"a", DataGroup::General, 2}}), PreconditionError);
  EXPECT_THROW(Registry({{"a", DataGroup::Alignment, 0}}), PreconditionError);
}

TEST(Registry, CanonicalOrderIsLexicographic) {
  const Registry r = paper_registry();
  std::vector<std::string> names;
  for (const auto& s : r.sources()) names.push_back(s.name);
  EXPECT_EQ(names, (std::vector<std::string>{"AI2D", "ChartQA", "DocVQA", "LLaVA-Pretrain", "ShareGPT4V", "TextVQA"}));
  EXPECT_EQ(r.index_of("DocVQA"), 2u);
  EXPECT_EQ(r.index_of("nope"), Registry::npos);
}

TEST(ComputeExposure, MatchesIntegerOracle) {
  for (const char* id : {"A", "B", "C", "D"}) {
    const auto e = compute_exposure(builtin_condition(id, {123, 1000, 1000}));
    for (const char* ds : {"ShareGPT4V", "AI2D", "ChartQA", "TextVQA", "DocVQA"}) {
      const double expected = static_cast<double>(oracle::exposure_hundredths(id, ds, 1000, 1000)) / 100.0;
      EXPECT_NEAR(e.of(ds), expected, 1e-9) << id << " " << ds;
    }
    EXPECT_EQ(e.of("LLaVA-Pretrain"), 0.0);
  }
  EXPECT_NEAR(compute_exposure(builtin_condition("B", {0, 1000, 1000})).of("ShareGPT4V"), 900.0, 1e-9);
  EXPECT_NEAR(compute_exposure(builtin_condition("A", {0, 1000, 1000})).of("TextVQA"), 240.0, 1e-9);
}

TEST(ComputeExposure, ZeroBudgetGivesZeroExposure) {
  for (const char* id : {"A", "B", "C", "D"}) {
    const auto e = compute_exposure(builtin_condition(id, {50, 0, 0}));
    for (const auto& [name, value] : e.per_dataset) EXPECT_EQ(value, 0.0) << name;
  }
}

TEST(ComputeExposure, InvalidConditionThrows) {
  ScheduleCondition bad{"bad", {{1, 1, {{"LLaVA-Pretrain", 1.0}}}}};
  EXPECT_THROW(compute_exposure(bad), PreconditionError);
}

TEST(ComputeExposure, GeneralizesToMoreStages) {
  ScheduleCondition four{"four",
                         {{1, 5, {{"LLaVA-Pretrain", 1.0}}},
                          {2, 100, {{"ShareGPT4V", 1.0}}},
                          {3, 100, {{"AI2D", 1.0}}},
                          {4, 50, {{"ShareGPT4V", 0.5}, {"AI2D", 0.5}}}}};
  const auto e = compute_exposure(four);
  EXPECT_DOUBLE_EQ(e.of("ShareGPT4V"), 125.0);
  EXPECT_DOUBLE_EQ(e.of("AI2D"), 125.0);
  EXPECT_EQ(e.post_alignment_steps, 250u);
}

// Property: E(d) >= 0, sum E(d) = post-alignment steps, and swapping stages 2
// and 3 with equal budgets leaves every E(d) unchanged.
TEST(ComputeExposure, BudgetAndOrderBlindness) {
  std::uint64_t state = 12345;
  auto next = [&] {
    state = state * 6364136223846793005ull + 1442695040888963407ull;
    return state >> 33;
  };
  const std::vector<std::string> names{"ShareGPT4V", "AI2D", "ChartQA", "TextVQA", "DocVQA"};
  for (int trial = 0; trial < 200; ++trial) {
    auto random_dist = [&] {
      std::map<std::string, double> d;
      double total = 0.0;
      for (const auto& n : names) total += (d[n] = static_cast<double>(next() % 1000));
      if (total == 0.0) return std::map<std::string, double>{{"ShareGPT4V", 1.0}};
      for (auto& [n, p] : d) p /= total;
      return d;
    };
    const std::uint64_t t = next() % 100000;
    ScheduleCondition cond{"p", {{1, next() % 100, {{"LLaVA-Pretrain", 1.0}}}, {2, t, random_dist()}, {3, t, random_dist()}}};
    if (!validate_structure(cond).ok()) continue;
    const auto e = compute_exposure(cond);
    double sum = 0.0;
    for (const auto& [n, v] : e.per_dataset) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 2.0 * static_cast<double>(t), 1e-6 * std::max(1.0, 2.0 * static_cast<double>(t)));
    ScheduleCondition swapped = cond;
    std::swap(swapped.stages[1].distribution, swapped.stages[2].distribution);
    const auto es = compute_exposure(swapped);
    for (const auto& [n, v] : e.per_dataset) EXPECT_NEAR(es.of(n), v, 1e-9 * std::max(1.0, v));
  }
}

TEST(CompareExposure, DeviationExamples) {
  const Registry registry = paper_registry();
  const std::vector<ScheduleCondition> ab{builtin_condition("A", {0, 1000, 1000}), builtin_condition("B", {0, 1000, 1000})};
  const auto cmp = compare_exposure(ab, registry);
  auto find = [](const std::vector<ExposureDeviation>& list, const std::string& key) {
    for (const auto& d : list)
      if (d.key == key) return d;
    ADD_FAILURE() << key;
    return ExposureDeviation{};
  };
  const auto doc = find(cmp.datasets, "DocVQA");
  EXPECT_DOUBLE_EQ(doc.min, 240.0);
  EXPECT_DOUBLE_EQ(doc.max, 300.0);
  EXPECT_NEAR(doc.deviation, 0.20, 1e-12);
  EXPECT_TRUE(doc.flagged);
  EXPECT_FALSE(find(cmp.datasets, "AI2D").flagged);
  EXPECT_EQ(find(cmp.datasets, "LLaVA-Pretrain").deviation, 0.0);  // 0/0
  EXPECT_NEAR(find(cmp.groups, "D3-ocr").deviation, 0.20, 1e-12);
  EXPECT_TRUE(cmp.totals_match);

  const std::vector<ScheduleCondition> bd{builtin_condition("B", {0, 1000, 1000}), builtin_condition("D", {0, 1000, 1000})};
  for (const auto& d : compare_exposure(bd, registry).datasets) EXPECT_EQ(d.deviation, 0.0) << d.key;

  const std::vector<ScheduleCondition> aa{builtin_condition("A", {0, 700, 300}), builtin_condition("A", {0, 700, 300})};
  for (const auto& d : compare_exposure(aa, registry).datasets) EXPECT_EQ(d.deviation, 0.0) << d.key;
}

TEST(CompareExposure, ThresholdAndBudgetMismatchAreReportsNotErrors) {
  const Registry registry = paper_registry();
  const std::vector<ScheduleCondition> ab{builtin_condition("A", {0, 1000, 1000}), builtin_condition("B", {0, 10, 10})};
  const auto cmp = compare_exposure(ab, registry, 0.5);
  EXPECT_FALSE(cmp.totals_match);
  EXPECT_EQ(cmp.warn_threshold, 0.5);
}

TEST(CompareExposure, RegistryMismatchThrows) {
  Registry other({{"LLaVA-Pretrain", DataGroup::Alignment, 5}, {"COCO", DataGroup::General, 5}});
  const std::vector<ScheduleCondition> conds{builtin_condition("A", {0, 1, 1})};
  EXPECT_THROW(compare_exposure(conds, other), PreconditionError);
  EXPECT_THROW(compare_exposure({}, paper_registry()), PreconditionError);
}

TEST(ScheduleIo, RoundTripPreservesValidity) {
  const Registry registry = paper_registry();
  std::vector<ScheduleCondition> cases;
  for (const char* id : {"A", "B", "C", "D"}) cases.push_back(builtin_condition(id, {3, 1000, 2000}));
  ScheduleCondition broken = builtin_condition("B", {3, 4, 5});
  broken.stages[1].distribution["AI2D"] = 0.6;
  cases.push_back(broken);
  ScheduleCondition odd{"odd", {{1, 7, {{"LLaVA-Pretrain", 1.0}}}, {2, 9, {{"ShareGPT4V", 0.1}, {"DocVQA", 0.9}}}}};
  cases.push_back(odd);
  for (const auto& cond : cases) {
    const auto reparsed = schedule_from_json(Json::parse(schedule_to_json(cond).dump()));
    EXPECT_EQ(reparsed, cond);
    EXPECT_EQ(validate_condition(reparsed, registry).ok(), validate_condition(cond, registry).ok());
  }
}

TEST(ScheduleIo, AcceptsTableAliases) {
  const auto cond = schedule_from_json(Json::parse(R"({"id":"x","stages":[
      {"index":1,"steps":1,"distribution":{"LLaVA-Pretrain":1.0}},
      {"index":2,"steps":2,"distribution":{"S4V":0.5,"TXT":0.25,"DOC":0.25}}]})"));
  EXPECT_EQ(cond.stages[1].distribution.count("ShareGPT4V"), 1u);
  EXPECT_EQ(cond.stages[1].distribution.count("TextVQA"), 1u);
  EXPECT_EQ(cond.stages[1].distribution.count("DocVQA"), 1u);
}

TEST(ScheduleIo, MalformedDocumentsAreParseErrors) {
  EXPECT_THROW(schedule_from_json(Json::parse(R"({"stages":[]})")), ParseError);
  EXPECT_THROW(schedule_from_json(Json::parse(R"({"id":"x","stages":[{"index":1,"steps":-1,"distribution":{}}]})")),
               ParseError);
  EXPECT_THROW(schedule_from_json(Json::parse(R"({"id":"x","stages":[{"index":1,"steps":1,"distribution":{"a":"x"}}]})")),
               ParseError);
  EXPECT_THROW(registry_from_json(Json::parse(R"({"datasets":[{"name":"a","group":"D9","size":1}]})")), ParseError);
  EXPECT_THROW(registry_from_json(Json::parse(R"({"datasets":[{"name":"a","group":"D0","size":0}]})")), ParseError);
}

TEST(ScheduleIo, RegistryRoundTrip) {
  EXPECT_EQ(registry_from_json(registry_to_json(paper_registry())), paper_registry());
}

}  // namespace
}  // namespace stagemix
