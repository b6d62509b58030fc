#include <gtest/gtest.h>

#include "ldalign/errors.hpp"
#include "ldalign/toy_tasks.hpp"

using namespace ldalign;

TEST(ToyTasks, SolvePrompt) {
  EXPECT_EQ(solve_prompt("reverse: abc"), "cba");
  EXPECT_EQ(solve_prompt("uppercase: abc"), "ABC");
  EXPECT_EQ(solve_prompt("copy 2: abc"), "abcabc");
  EXPECT_FALSE(solve_prompt("copy x: abc").has_value());
  EXPECT_FALSE(solve_prompt("sort: abc").has_value());
  EXPECT_FALSE(solve_prompt("reverse abc").has_value());
}

TEST(ToyTasks, CheckResponse) {
  EXPECT_TRUE(check_response("reverse: abc", "cba"));
  EXPECT_FALSE(check_response("reverse: abc", "abc"));
  EXPECT_TRUE(check_response(tokenize("copy 3: ab"), tokenize("ababab")));
  EXPECT_FALSE(check_response(tokenize("copy 3: ab"), Tokens{'a', kPad}));
}

TEST(MakeCorpus, HundredPairsDeterministic) {
  const std::vector<std::string> mix{"reverse", "uppercase", "copy"};
  const Dataset a = make_corpus(mix, 100, 1), b = make_corpus(mix, 100, 1);
  ASSERT_EQ(a.size(), 100u);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_NE(a.pairs, make_corpus(mix, 100, 2).pairs);
}

TEST(MakeCorpus, GoldPassesChecker) {
  const std::vector<std::string> mix{"reverse", "uppercase", "copy"};
  const Dataset d = make_corpus(mix, 500, 3, {2, 9, 1, 4});
  for (const auto& p : d.pairs) ASSERT_TRUE(check_response(p.prompt, p.response));
}

TEST(MakeCorpus, SingleTaskMix) {
  const std::vector<std::string> mix{"uppercase"};
  for (const auto& p : make_corpus(mix, 50, 4).pairs) {
    ASSERT_TRUE(detokenize(p.prompt).starts_with("uppercase: "));
  }
}

TEST(MakeCorpus, Errors) {
  const std::vector<std::string> bad{"reverse", "sort"};
  EXPECT_THROW(make_corpus(bad, 10, 1), ConfigError);
  const std::vector<std::string> mix{"copy"};
  EXPECT_THROW(make_corpus(mix, 0, 1), ConfigError);
  EXPECT_THROW(make_corpus(mix, 5, 1, {3, 2, 1, 1}), ConfigError);
}
