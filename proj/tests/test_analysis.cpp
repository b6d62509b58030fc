#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "ldalign/analysis.hpp"
#include "ldalign/errors.hpp"
#include "ldalign/toy_tasks.hpp"
#include "oracles.hpp"

using namespace ldalign;

namespace {

const LMConfig kTiny{2, 2, 16, 32, kVocabSize};
const GuideConfig kTinyGuide{4, {1, 2, 16, 32, kVocabSize}, {1, 2, 16, 33, kVocabSize}};

Dataset toy(std::size_t n, std::uint64_t seed) {
  const std::vector<std::string> mix{"reverse", "uppercase"};
  return make_corpus(mix, n, seed, {2, 4, 2, 2});
}

}  // namespace

TEST(Histogram, Examples) {
  const std::vector<double> edges{0, 2, 4};
  const auto h = distance_histogram(std::vector<double>{1, 1, 3}, edges);
  EXPECT_EQ(h.counts, (std::vector<long>{2, 1}));
  EXPECT_EQ(h.overflow, 0);
  const auto empty = distance_histogram(std::vector<double>{}, edges);
  EXPECT_EQ(empty.counts, (std::vector<long>{0, 0}));
  const auto over = distance_histogram(std::vector<double>{5}, edges);
  EXPECT_EQ(over.counts, (std::vector<long>{0, 0}));
  EXPECT_EQ(over.overflow, 1);
}

TEST(Histogram, HalfOpenBins) {
  const std::vector<double> edges{0, 2, 4};
  const auto h = distance_histogram(std::vector<double>{0, 2, 4}, edges);
  EXPECT_EQ(h.counts, (std::vector<long>{1, 1}));
  EXPECT_EQ(h.overflow, 1);
}

TEST(Histogram, Errors) {
  EXPECT_THROW(distance_histogram(std::vector<double>{1}, std::vector<double>{0, 2, 2}), ConfigError);
  EXPECT_THROW(distance_histogram(std::vector<double>{1}, std::vector<double>{3, 1}), ConfigError);
  EXPECT_THROW(distance_histogram(std::vector<double>{1}, std::vector<double>{0}), ConfigError);
  EXPECT_THROW(distance_histogram(std::vector<double>{-1}, std::vector<double>{0, 1}), ConfigError);
}

TEST(Histogram, ConservesCount) {
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> expo(1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(trial * 7);
    for (auto& v : s) v = expo(rng);
    const auto edges = trial % 2 ? uniform_edges(s, 1 + trial % 9) : std::vector<double>{0, 0.5, 1, 2};
    const auto h = distance_histogram(s, edges);
    ASSERT_EQ(h.counts.size(), edges.size() - 1);
    long total = h.overflow;
    for (long c : h.counts) total += c;
    ASSERT_EQ(total, static_cast<long>(s.size()));
    if (trial % 2) ASSERT_EQ(h.overflow, 0);
  }
}

TEST(Histogram, Json) {
  const auto h = distance_histogram(std::vector<double>{1, 5}, std::vector<double>{0, 2, 4});
  const auto j = to_json(h);
  EXPECT_EQ(j.at("counts"), nlohmann::json({1, 0}));
  EXPECT_EQ(j.at("overflow"), 1);
  EXPECT_EQ(j.at("edges").size(), 3u);
}

TEST(EditDistance, Basics) {
  EXPECT_EQ(edit_distance(tokenize("kitten"), tokenize("sitting")), 3u);
  EXPECT_EQ(edit_distance(tokenize(""), tokenize("abc")), 3u);
  EXPECT_EQ(edit_distance(tokenize("abc"), tokenize("abc")), 0u);
}

TEST(Judges, Rules) {
  const Tokens prompt = tokenize("reverse: abc"), gold = tokenize("cba");
  const Tokens right = tokenize("cba"), near = tokenize("cbx"), far = tokenize("zzzzz");
  JudgeInput in{0, prompt, gold, far, near, 2.0, 1.0};
  EXPECT_EQ(EditDistanceJudge().judge(in), Preferred::kB);
  EXPECT_EQ(DistanceOracleJudge().judge(in), Preferred::kB);
  in.b = far;
  EXPECT_EQ(EditDistanceJudge().judge(in), Preferred::kA);  // tie goes to A
  in.a = near;
  in.b = right;
  EXPECT_EQ(TaskCheckerJudge().judge(in), Preferred::kB);
  in.a = far;
  in.b = near;
  EXPECT_EQ(TaskCheckerJudge().judge(in), Preferred::kB);  // neither solves: edit distance
  EXPECT_THROW(make_judge("gpt"), ConfigError);
  EXPECT_EQ(make_judge("random", 3)->name(), "random");
}

TEST(Consistency, OracleJudgeAgreesExactly) {
  const auto guide = GuideParams<float>::random(kTinyGuide, 1);
  const auto theta = LMParams<float>::random(kTiny, 2);
  const Dataset d = toy(40, 3);
  const auto r = pairwise_consistency(guide, theta, d, DistanceOracleJudge(), {1.0, 6, 10}, {1.0, 6, 20});
  EXPECT_EQ(r.rate, 1.0);
  EXPECT_EQ(r.disagreements, 0);
  EXPECT_EQ(r.agreements + r.ties, 40);
}

TEST(Consistency, RandomJudgeNearHalf) {
  const auto guide = GuideParams<float>::random(kTinyGuide, 4);
  const Dataset d = toy(1000, 5);
  std::mt19937_64 rng(6);
  std::vector<Tokens> a, b;
  for (std::size_t i = 0; i < d.size(); ++i) {
    a.push_back(oracle::random_tokens(rng, 3));
    b.push_back(oracle::random_tokens(rng, 4));
  }
  const auto r = consistency_from_samples(guide, d, a, b, RandomJudge(7));
  EXPECT_EQ(r.ties, 0);
  EXPECT_NEAR(r.rate, 0.5, 0.05);
}

TEST(Consistency, TiesExcluded) {
  const auto guide = GuideParams<float>::random(kTinyGuide, 8);
  const Dataset d = toy(10, 9);
  std::vector<Tokens> same;
  for (const auto& p : d.pairs) same.push_back(p.response);
  const auto r = consistency_from_samples(guide, d, same, same, EditDistanceJudge());
  EXPECT_EQ(r.ties, 10);
  EXPECT_EQ(r.rate, 0.0);
  EXPECT_EQ(to_json(r).at("ties"), 10);
}

TEST(Consistency, Errors) {
  const auto guide = GuideParams<float>::random(kTinyGuide, 8);
  const auto theta = LMParams<float>::random(kTiny, 2);
  EXPECT_THROW(pairwise_consistency(guide, theta, Dataset{}, EditDistanceJudge(), {1, 4, 1}, {1, 4, 2}),
               ConfigError);
  EXPECT_THROW(pairwise_consistency(guide, theta, toy(3, 1), EditDistanceJudge(), {1, 4, 1}, {1, 4, 1}),
               ConfigError);
}

TEST(RewardMargin, IdentityIsDegenerateZero) {
  const auto theta = LMParams<float>::random(kTiny, 10);
  const auto r = reward_margin_eval(theta, theta, toy(20, 11), 0.1, {1.0, 6, 1});
  EXPECT_EQ(r.mean_margin, 0.0);
  EXPECT_EQ(r.fraction_positive, 0.0);
  EXPECT_TRUE(r.degenerate);
}

TEST(RewardMargin, SwapNegatesMean) {
  const auto theta = LMParams<float>::random(kTiny, 12), ref = LMParams<float>::random(kTiny, 13);
  const Dataset d = toy(20, 14);
  const auto a = reward_margin_eval(theta, ref, d, 0.1, {1.0, 6, 1});
  const auto b = reward_margin_eval(theta, ref, d, 0.1, {1.0, 6, 1}, true);
  EXPECT_FALSE(a.degenerate);
  EXPECT_NEAR(a.mean_margin, -b.mean_margin, 1e-12);
  for (std::size_t i = 0; i < a.margins.size(); ++i) EXPECT_EQ(a.margins[i], -b.margins[i]);
  EXPECT_THROW(reward_margin_eval(theta, ref, Dataset{}, 0.1, {1.0, 6, 1}), ConfigError);
}

TEST(Metrics, EmptyIsHeaderOnly) {
  oracle::TempDir tmp;
  emit_metrics({}, tmp / "m.csv");
  std::ifstream in(tmp / "m.csv");
  std::string all((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(all, "phase,iteration,step,value\n");
  EXPECT_TRUE(read_metrics(tmp / "m.csv").empty());
}

TEST(Metrics, RoundTripAndAppend) {
  oracle::TempDir tmp;
  const std::vector<MetricRecord> first{{"sft", 0, 0, 3.25}}, second{{"align", 2, 7, 0.1 + 0.2}};
  emit_metrics(first, tmp / "m.csv");
  emit_metrics(second, tmp / "m.csv");
  const auto back = read_metrics(tmp / "m.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], first[0]);
  EXPECT_EQ(back[1], second[0]);
}

TEST(Metrics, UnwritablePathNamesPath) {
  try {
    emit_metrics({}, "/nonexistent-dir/m.csv");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent-dir/m.csv"), std::string::npos);
  }
}
