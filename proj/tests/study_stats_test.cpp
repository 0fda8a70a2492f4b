#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "embedstory/errors.hpp"
#include "embedstory/study_stats.hpp"

using namespace embedstory;

namespace {

using V = std::vector<double>;

// Reference values below come from scipy.stats (levene with center='mean',
// ttest_ind, t, f) and mpmath.betainc, computed offline.

}  // namespace

TEST(Describe, Basics) {
  const V constant{3, 3, 3};
  const auto s = describe(constant);
  EXPECT_EQ(s.n, 3);
  EXPECT_EQ(s.mean, 3.0);
  EXPECT_EQ(s.sd, 0.0);
  EXPECT_EQ(s.se, 0.0);
  const V xs{1, 2, 3, 4};
  EXPECT_NEAR(describe(xs).sd, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_THROW(describe(V{}), DataError);
}

TEST(Distributions, IncompleteBetaOracles) {
  EXPECT_NEAR(regularized_incomplete_beta(2.5, 3, 0.4), 0.41236100688595689, 1e-13);
  EXPECT_NEAR(regularized_incomplete_beta(0.5, 12, 0.02), 0.50925297163235494, 1e-13);
  EXPECT_EQ(regularized_incomplete_beta(2, 3, 0.0), 0.0);
  EXPECT_EQ(regularized_incomplete_beta(2, 3, 1.0), 1.0);
  // I_x(a, b) = 1 - I_{1-x}(b, a)
  EXPECT_NEAR(regularized_incomplete_beta(4, 1.5, 0.7), 1 - regularized_incomplete_beta(1.5, 4, 0.3), 1e-14);
}

TEST(Distributions, StudentTOracles) {
  EXPECT_NEAR(student_t_cdf(2.0, 10), 0.96330598261462981719, 1e-13);
  EXPECT_NEAR(student_t_cdf(-1.3, 3.5), 0.13629770790218519627, 1e-13);
  EXPECT_EQ(student_t_cdf(0.0, 7), 0.5);
  for (double t : {0.3, 1.7, 4.0}) EXPECT_NEAR(student_t_cdf(-t, 9) + student_t_cdf(t, 9), 1.0, 1e-14);
  EXPECT_EQ(student_t_cdf(std::numeric_limits<double>::infinity(), 5), 1.0);
  EXPECT_EQ(student_t_cdf(-std::numeric_limits<double>::infinity(), 5), 0.0);
  EXPECT_NEAR(student_t_quantile(0.975, 48), 2.010634757624232, 1e-10);
  EXPECT_NEAR(student_t_quantile(0.1, 3.5), -1.576576605136404, 1e-10);
  double prev = 1.0;
  for (double t = 0.0; t < 6.0; t += 0.5) {
    const double p = student_t_two_tailed(t, 12);
    EXPECT_LE(p, prev);
    prev = p;
  }
  EXPECT_EQ(student_t_two_tailed(0.0, 12), 1.0);
}

TEST(Distributions, FOracles) {
  EXPECT_NEAR(f_cdf(2.5, 1, 48), 0.87958589604832526631, 1e-13);
  EXPECT_EQ(f_cdf(0.0, 3, 9), 0.0);
  EXPECT_NEAR(f_cdf(1.3, 4, 11) + f_survival(1.3, 4, 11), 1.0, 1e-15);
  // F(1, v) is T(v) squared.
  EXPECT_NEAR(f_survival(4.0, 1, 10), student_t_two_tailed(2.0, 10), 1e-13);
}

TEST(Levene, Oracles) {
  const auto r = levene_test(V{1, 5, 6}, V{2, 4, 4, 7});
  EXPECT_NEAR(r.statistic, 0.46583850931677023, 1e-13);
  EXPECT_NEAR(r.p_two_tailed, 0.525239025304435, 1e-12);
  EXPECT_EQ(r.df, 5.0);

  // Constant deviations inside each group, different between groups.
  const auto inf = levene_test(V{1, 5}, V{2, 4});
  EXPECT_TRUE(std::isinf(inf.statistic));
  EXPECT_EQ(inf.p_two_tailed, 0.0);

  const auto same = levene_test(V{1, 5, 6}, V{1, 5, 6});
  EXPECT_NEAR(same.statistic, 0.0, 1e-15);
  EXPECT_NEAR(same.p_two_tailed, 1.0, 1e-12);

  EXPECT_THROW(levene_test(V{3, 3, 3}, V{4, 4}), DataError);
  EXPECT_THROW(levene_test(V{3}, V{4, 5}), DataError);
}

TEST(TTest, Oracles) {
  const V a{1, 5, 6}, b{2, 4, 4, 7};
  const auto pooled = t_test(a, b, TTestVariant::pooled);
  EXPECT_NEAR(pooled.statistic, -0.1415157315272508, 1e-13);
  EXPECT_NEAR(pooled.p_two_tailed, 0.8929876409677145, 1e-12);
  EXPECT_EQ(pooled.df, 5.0);
  const auto welch = t_test(a, b, TTestVariant::welch);
  EXPECT_NEAR(welch.statistic, -0.13566468949384036, 1e-13);
  EXPECT_NEAR(welch.p_two_tailed, 0.8991039774654254, 1e-12);
  EXPECT_NEAR(welch.df, 3.721669701638884, 1e-12);
}

TEST(TTest, Properties) {
  const V a{2, 4, 4, 5, 7}, b{1, 3, 3, 6, 6};
  const auto same = t_test(a, a, TTestVariant::pooled);
  EXPECT_EQ(same.statistic, 0.0);
  EXPECT_NEAR(same.p_two_tailed, 1.0, 1e-14);

  // Equal sizes and spreads: pooled and Welch agree.
  const V c{3, 5, 5, 6, 8};  // a shifted by 1
  const auto p = t_test(c, a, TTestVariant::pooled);
  const auto w = t_test(c, a, TTestVariant::welch);
  EXPECT_NEAR(p.statistic, w.statistic, 1e-14);
  EXPECT_NEAR(p.df, w.df, 1e-12);

  // Scale invariance of the statistic.
  V a10, b10;
  for (double x : a) a10.push_back(10 * x);
  for (double x : b) b10.push_back(10 * x);
  EXPECT_NEAR(t_test(a10, b10, TTestVariant::welch).statistic, t_test(a, b, TTestVariant::welch).statistic, 1e-13);
  // Swapping the groups flips the sign only.
  EXPECT_NEAR(t_test(b, a, TTestVariant::pooled).statistic, -t_test(a, b, TTestVariant::pooled).statistic, 1e-15);

  const auto flat = t_test(V{3, 3}, V{3, 3, 3}, TTestVariant::welch);
  EXPECT_EQ(flat.statistic, 0.0);
  EXPECT_EQ(flat.p_two_tailed, 1.0);
  const auto apart = t_test(V{4, 4}, V{3, 3, 3}, TTestVariant::pooled);
  EXPECT_TRUE(std::isinf(apart.statistic));
  EXPECT_EQ(apart.p_two_tailed, 0.0);
}

TEST(StudyScores, GroupSizesAndFirstParticipant) {
  const auto groups = study_scores();
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].pre.scores.size(), 26u);
  EXPECT_EQ(groups[0].post.scores.size(), 26u);
  EXPECT_EQ(groups[1].pre.scores.size(), 24u);
  EXPECT_EQ(groups[1].post.scores.size(), 24u);
  EXPECT_EQ(groups[0].pre.scores[0], 2);
  EXPECT_EQ(groups[0].post.scores[0], 7);
  for (const auto& g : groups) {
    EXPECT_NO_THROW(validate_sample(g.pre));
    EXPECT_NO_THROW(validate_sample(g.post));
  }
}

TEST(StudyReport, ReproducesPublishedTables) {
  const auto r = compute_report(study_scores());
  // Descriptives, two decimals as published.
  EXPECT_NEAR(r.pre[0].mean, 2.92, 0.005);
  EXPECT_NEAR(r.post[0].mean, 5.85, 0.005);
  EXPECT_NEAR(r.pre[1].mean, 3.04, 0.005);
  EXPECT_NEAR(r.post[1].mean, 3.96, 0.005);
  EXPECT_NEAR(r.post[0].sd, 1.54, 0.005);
  EXPECT_NEAR(r.post[1].sd, 1.46, 0.005);
  EXPECT_NEAR(r.post[0].se, 0.30, 0.005);
  EXPECT_NEAR(r.post[1].se, 0.30, 0.005);
  EXPECT_NEAR(r.levene.p_two_tailed, 0.771, 0.0005);
  EXPECT_NEAR(r.pooled.statistic, 4.44, 0.005);
  EXPECT_EQ(r.pooled.df, 48.0);
  EXPECT_NEAR(r.welch.statistic, 4.45, 0.005);
  EXPECT_NEAR(r.welch.df, 47.97, 0.005);
  EXPECT_NEAR(r.pooled.mean_difference, 1.89, 0.005);
  EXPECT_NEAR(r.pooled.se_difference, 0.43, 0.005);
  EXPECT_NEAR(r.pooled.ci95[0], 1.03, 0.005);
  EXPECT_NEAR(r.pooled.ci95[1], 2.74, 0.005);
  EXPECT_LT(r.pooled.p_two_tailed, 0.001);

  // Full precision against scipy.
  EXPECT_NEAR(r.post[0].sd, 1.5412282813991625, 1e-13);
  EXPECT_NEAR(r.post[1].se, 0.29781308374589854, 1e-13);
  EXPECT_NEAR(r.levene.statistic, 0.08594383098100322, 1e-12);
  EXPECT_NEAR(r.levene.p_two_tailed, 0.770662223489696, 1e-11);
  EXPECT_NEAR(r.pooled.statistic, 4.4390321089794424, 1e-12);
  EXPECT_NEAR(r.pooled.p_two_tailed, 5.282635587095303e-05, 1e-14);
  EXPECT_NEAR(r.pooled.ci95[0], 1.0327427737893387, 1e-10);
  EXPECT_NEAR(r.pooled.ci95[1], 2.742898251851686, 1e-10);
  EXPECT_NEAR(r.welch.statistic, 4.448973519631824, 1e-12);
  EXPECT_NEAR(r.welch.df, 47.96536800074959, 1e-10);
  EXPECT_NEAR(r.welch.p_two_tailed, 5.117900216590986e-05, 1e-14);
  EXPECT_NEAR(r.welch.ci95[0], 1.034637565252789, 1e-10);
  EXPECT_NEAR(r.welch.ci95[1], 2.7410034603882356, 1e-10);
}

TEST(ScoresCsv, RoundTripAndErrors) {
  const auto groups = study_scores();
  const std::string csv = scores_to_csv(groups);
  EXPECT_EQ(csv.rfind("group,pid,pre,post\n", 0), 0u);
  const auto back = parse_scores_csv(csv);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].group, "scrollytelling");
  EXPECT_EQ(back[0].post.scores, groups[0].post.scores);
  EXPECT_EQ(back[1].pre.scores, groups[1].pre.scores);
  EXPECT_EQ(scores_to_csv(back), csv);

  EXPECT_THROW(parse_scores_csv("a,1,2,3\n"), DataError);
  EXPECT_THROW(parse_scores_csv("group,pid,pre,post\na,1,2\n"), DataError);
  EXPECT_THROW(parse_scores_csv("group,pid,pre,post\na,1,2,9\n"), DataError);
  EXPECT_THROW(parse_scores_csv("group,pid,pre,post\na,1,x,3\n"), DataError);
}

TEST(StudyReport, JsonAndText) {
  const auto r = compute_report(study_scores());
  const auto doc = report_to_json(r);
  EXPECT_TRUE(doc["comparison"].contains("levene"));
  const std::string text = report_to_text(r);
  EXPECT_NE(text.find("4.44"), std::string::npos);
  EXPECT_THROW(compute_report({study_scores()[0]}), DataError);
}
