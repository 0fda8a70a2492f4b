#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace embedstory {

/// Per-participant scores of one group on the 7-question test.
struct StudySample {
  std::string group_name;
  std::vector<int> scores;  // each in [0, 7]

  std::vector<double> values() const;
};

void validate_sample(const StudySample& sample);

struct StatsSummary {
  int n = 0;
  double mean = 0.0;
  double sd = 0.0;  // n - 1 denominator
  double se = 0.0;  // sd / sqrt(n)
};

struct TestResult {
  double statistic = 0.0;
  double df = 0.0;
  double p_two_tailed = 1.0;
  double mean_difference = 0.0;
  double se_difference = 0.0;
  std::array<double, 2> ci95{0.0, 0.0};
};

enum class TTestVariant { pooled, welch };

StatsSummary describe(std::span<const double> xs);
StatsSummary describe(const StudySample& sample);

/// Mean-centered Levene test: one-way ANOVA F on |x - group mean|, df (1, n1+n2-2).
/// When the deviations are constant within each group but differ between the
/// groups, F = +inf and p = 0. Throws DataError when every deviation is equal
/// (F is 0/0) or a group has fewer than 2 values.
TestResult levene_test(std::span<const double> g1, std::span<const double> g2);
TestResult levene_test(const StudySample& g1, const StudySample& g2);

/// Independent-samples t test of mean(g1) - mean(g2). If both groups have zero
/// spread: equal means give t = 0, p = 1; unequal means give t = +-inf, p = 0.
/// Welch degrees of freedom fall back to n1 + n2 - 2 in that case.
TestResult t_test(std::span<const double> g1, std::span<const double> g2, TTestVariant variant);
TestResult t_test(const StudySample& g1, const StudySample& g2, TTestVariant variant);

/// I_x(a, b) by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
/// P(|T| >= |t|).
double student_t_two_tailed(double t, double df);
double student_t_quantile(double p, double df);
double f_cdf(double f, double df1, double df2);
/// P(F >= f).
double f_survival(double f, double df1, double df2);

/// One participant row of the scores CSV.
struct ScoreRow {
  std::string group;
  int pid = 0;
  int pre = 0;
  int post = 0;
};

struct GroupScores {
  std::string group;
  StudySample pre;
  StudySample post;
};

/// Parses `group,pid,pre,post` (header required). Groups keep first-appearance order.
std::vector<GroupScores> parse_scores_csv(std::string_view text);
std::string scores_to_csv(const std::vector<GroupScores>& groups);

/// The raw pre/post scores of the scrollytelling (26) and online-article (24)
/// groups, in participant order. Scrollytelling comes first.
std::vector<GroupScores> study_scores();

struct StudyReport {
  std::array<std::string, 2> groups;
  std::array<StatsSummary, 2> pre;
  std::array<StatsSummary, 2> post;
  TestResult levene;
  TestResult pooled;
  TestResult welch;
};

/// Descriptives of both groups and the post-test comparisons of group 0 vs group 1.
StudyReport compute_report(const std::vector<GroupScores>& groups);
nlohmann::ordered_json report_to_json(const StudyReport& report);
std::string report_to_text(const StudyReport& report);

}  // namespace embedstory
