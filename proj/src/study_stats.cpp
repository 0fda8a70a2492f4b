#include "embedstory/study_stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "embedstory/errors.hpp"

namespace embedstory {

std::vector<double> StudySample::values() const { return {scores.begin(), scores.end()}; }

void validate_sample(const StudySample& sample) {
  if (sample.scores.empty()) throw DataError("group '" + sample.group_name + "' has no scores");
  for (const int s : sample.scores) {
    if (s < 0 || s > 7) throw DataError("group '" + sample.group_name + "': score " + std::to_string(s) + " outside [0, 7]");
  }
}

namespace {

double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (const double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double variance_of(std::span<const double> xs, double mean) {
  double s = 0.0;
  for (const double x : xs) s += (x - mean) * (x - mean);
  return s / static_cast<double>(xs.size() - 1);
}

void require_two(std::span<const double> xs) {
  if (xs.size() < 2) throw DataError("a group needs >= 2 values");
}

}  // namespace

StatsSummary describe(std::span<const double> xs) {
  require_two(xs);
  StatsSummary s;
  s.n = static_cast<int>(xs.size());
  s.mean = mean_of(xs);
  s.sd = std::sqrt(variance_of(xs, s.mean));
  s.se = s.sd / std::sqrt(static_cast<double>(s.n));
  return s;
}

StatsSummary describe(const StudySample& sample) {
  validate_sample(sample);
  const auto v = sample.values();
  return describe(v);
}

// ---------------------------------------------------------------------------
// Distributions

namespace {

// Continued fraction for I_x(a, b) (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DataError("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_tailed(double t, double df) {
  if (!(df > 0.0)) throw DataError("student t: df must be > 0");
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw DataError("student t: df must be > 0");
  if (t == std::numeric_limits<double>::infinity()) return 1.0;
  if (t == -std::numeric_limits<double>::infinity()) return 0.0;
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t >= 0.0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw DataError("student t quantile: p must lie in (0, 1)");
  if (!(df > 0.0)) throw DataError("student t: df must be > 0");
  double lo = -1.0;
  double hi = 1.0;
  while (student_t_cdf(lo, df) > p) lo *= 2.0;
  while (student_t_cdf(hi, df) < p) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double f_cdf(double f, double df1, double df2) {
  if (!(df1 > 0.0) || !(df2 > 0.0)) throw DataError("F distribution: df must be > 0");
  if (f <= 0.0) return 0.0;
  if (std::isinf(f)) return 1.0;
  return regularized_incomplete_beta(0.5 * df1, 0.5 * df2, df1 * f / (df1 * f + df2));
}

double f_survival(double f, double df1, double df2) {
  if (!(df1 > 0.0) || !(df2 > 0.0)) throw DataError("F distribution: df must be > 0");
  if (f <= 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  return regularized_incomplete_beta(0.5 * df2, 0.5 * df1, df2 / (df2 + df1 * f));
}

// ---------------------------------------------------------------------------
// Tests

TestResult levene_test(std::span<const double> g1, std::span<const double> g2) {
  require_two(g1);
  require_two(g2);
  auto deviations = [](std::span<const double> g) {
    const double m = mean_of(g);
    std::vector<double> z;
    z.reserve(g.size());
    for (const double x : g) z.push_back(std::abs(x - m));
    return z;
  };
  const auto z1 = deviations(g1);
  const auto z2 = deviations(g2);
  const double n1 = static_cast<double>(z1.size());
  const double n2 = static_cast<double>(z2.size());
  const double m1 = mean_of(z1);
  const double m2 = mean_of(z2);
  const double grand = (n1 * m1 + n2 * m2) / (n1 + n2);
  const double between = n1 * (m1 - grand) * (m1 - grand) + n2 * (m2 - grand) * (m2 - grand);
  double within = 0.0;
  for (const double z : z1) within += (z - m1) * (z - m1);
  for (const double z : z2) within += (z - m2) * (z - m2);
  const double df2 = n1 + n2 - 2.0;

  TestResult r;
  r.df = df2;
  r.mean_difference = m1 - m2;
  if (within == 0.0) {
    if (between == 0.0) throw DataError("levene: degenerate groups (all absolute deviations equal)");
    r.statistic = std::numeric_limits<double>::infinity();
    r.p_two_tailed = 0.0;
    return r;
  }
  r.statistic = between / (within / df2);
  r.p_two_tailed = f_survival(r.statistic, 1.0, df2);
  return r;
}

TestResult levene_test(const StudySample& g1, const StudySample& g2) {
  validate_sample(g1);
  validate_sample(g2);
  const auto a = g1.values();
  const auto b = g2.values();
  return levene_test(a, b);
}

TestResult t_test(std::span<const double> g1, std::span<const double> g2, TTestVariant variant) {
  const StatsSummary s1 = describe(g1);
  const StatsSummary s2 = describe(g2);
  const double n1 = s1.n;
  const double n2 = s2.n;
  const double v1 = s1.sd * s1.sd;
  const double v2 = s2.sd * s2.sd;

  TestResult r;
  r.mean_difference = s1.mean - s2.mean;
  if (variant == TTestVariant::pooled) {
    r.df = n1 + n2 - 2.0;
    const double pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / r.df;
    r.se_difference = std::sqrt(pooled * (1.0 / n1 + 1.0 / n2));
  } else {
    const double a = v1 / n1;
    const double b = v2 / n2;
    r.se_difference = std::sqrt(a + b);
    r.df = (a + b) > 0.0 ? (a + b) * (a + b) / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0)) : n1 + n2 - 2.0;
  }
  if (r.se_difference == 0.0) {
    if (r.mean_difference == 0.0) {
      r.statistic = 0.0;
      r.p_two_tailed = 1.0;
    } else {
      r.statistic = std::copysign(std::numeric_limits<double>::infinity(), r.mean_difference);
      r.p_two_tailed = 0.0;
    }
    r.ci95 = {r.mean_difference, r.mean_difference};
    return r;
  }
  r.statistic = r.mean_difference / r.se_difference;
  r.p_two_tailed = student_t_two_tailed(r.statistic, r.df);
  const double crit = student_t_quantile(0.975, r.df);
  r.ci95 = {r.mean_difference - crit * r.se_difference, r.mean_difference + crit * r.se_difference};
  return r;
}

TestResult t_test(const StudySample& g1, const StudySample& g2, TTestVariant variant) {
  validate_sample(g1);
  validate_sample(g2);
  const auto a = g1.values();
  const auto b = g2.values();
  return t_test(a, b, variant);
}

// ---------------------------------------------------------------------------
// Data

std::vector<GroupScores> parse_scores_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    while (!s.empty() && s.front() == ' ') s.erase(s.begin());
    return s;
  };
  if (!std::getline(in, line)) throw DataError("scores CSV is empty");
  ++line_no;
  if (trim(line) != "group,pid,pre,post") throw DataError("scores CSV: header must be 'group,pid,pre,post'");
  std::vector<GroupScores> groups;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (fields.size() != 4) throw DataError("scores CSV line " + std::to_string(line_no) + ": expected 4 fields");
    int values[3];
    for (int i = 0; i < 3; ++i) {
      try {
        std::size_t used = 0;
        values[i] = std::stoi(fields[static_cast<std::size_t>(i + 1)], &used);
        if (used != fields[static_cast<std::size_t>(i + 1)].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw DataError("scores CSV line " + std::to_string(line_no) + ": '" + fields[static_cast<std::size_t>(i + 1)] +
                        "' is not an integer");
      }
    }
    auto it = std::find_if(groups.begin(), groups.end(), [&](const GroupScores& g) { return g.group == fields[0]; });
    if (it == groups.end()) {
      groups.push_back({fields[0], {fields[0] + ":pre", {}}, {fields[0] + ":post", {}}});
      it = groups.end() - 1;
    }
    it->pre.scores.push_back(values[1]);
    it->post.scores.push_back(values[2]);
  }
  for (const auto& g : groups) {
    validate_sample(g.pre);
    validate_sample(g.post);
  }
  return groups;
}

std::string scores_to_csv(const std::vector<GroupScores>& groups) {
  std::string out = "group,pid,pre,post\n";
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.pre.scores.size(); ++i) {
      out += g.group + "," + std::to_string(i + 1) + "," + std::to_string(g.pre.scores[i]) + "," +
             std::to_string(g.post.scores[i]) + "\n";
    }
  }
  return out;
}

std::vector<GroupScores> study_scores() {
  // Participant order 1..26 and 1..24.
  const std::vector<int> scrolly_pre{2, 1, 3, 3, 3, 4, 3, 2, 4, 3, 4, 1, 1, 5, 3, 3, 4, 4, 3, 4, 3, 5, 2, 2, 2, 2};
  const std::vector<int> scrolly_post{7, 5, 7, 7, 5, 3, 6, 7, 6, 2, 7, 7, 7, 7, 7, 5, 5, 5, 7, 5, 7, 7, 6, 7, 2, 6};
  const std::vector<int> online_pre{2, 4, 4, 4, 4, 2, 3, 3, 4, 3, 3, 3, 5, 3, 4, 2, 4, 4, 4, 1, 0, 3, 1, 3};
  const std::vector<int> online_post{3, 3, 5, 4, 3, 3, 4, 4, 3, 3, 3, 3, 3, 2, 4, 4, 3, 2, 6, 7, 6, 7, 6, 4};
  return {
      {"scrollytelling", {"scrollytelling:pre", scrolly_pre}, {"scrollytelling:post", scrolly_post}},
      {"online_articles", {"online_articles:pre", online_pre}, {"online_articles:post", online_post}},
  };
}

StudyReport compute_report(const std::vector<GroupScores>& groups) {
  if (groups.size() != 2) throw DataError("report needs exactly 2 groups, got " + std::to_string(groups.size()));
  StudyReport r;
  for (std::size_t g = 0; g < 2; ++g) {
    r.groups[g] = groups[g].group;
    r.pre[g] = describe(groups[g].pre);
    r.post[g] = describe(groups[g].post);
  }
  r.levene = levene_test(groups[0].post, groups[1].post);
  r.pooled = t_test(groups[0].post, groups[1].post, TTestVariant::pooled);
  r.welch = t_test(groups[0].post, groups[1].post, TTestVariant::welch);
  return r;
}

namespace {

nlohmann::ordered_json t_json(const TestResult& t) {
  return {{"t", t.statistic},
          {"df", t.df},
          {"sig_2tailed", t.p_two_tailed},
          {"mean_difference", t.mean_difference},
          {"se_difference", t.se_difference},
          {"ci95_lower", t.ci95[0]},
          {"ci95_upper", t.ci95[1]}};
}

}  // namespace

nlohmann::ordered_json report_to_json(const StudyReport& r) {
  nlohmann::ordered_json doc;
  doc["format_version"] = 1;
  nlohmann::ordered_json descriptives = nlohmann::ordered_json::array();
  for (std::size_t g = 0; g < 2; ++g) {
    // Spread columns describe the post-test scores.
    descriptives.push_back({{"medium", r.groups[g]},
                      {"n", r.post[g].n},
                      {"pre_mean", r.pre[g].mean},
                      {"post_mean", r.post[g].mean},
                      {"std_deviation", r.post[g].sd},
                      {"se_mean", r.post[g].se}});
  }
  doc["descriptives"] = std::move(descriptives);
  doc["comparison"] = {{"levene", {{"F", r.levene.statistic}, {"sig", r.levene.p_two_tailed}}},
                   {"equal_variances_assumed", t_json(r.pooled)},
                   {"equal_variances_not_assumed", t_json(r.welch)}};
  return doc;
}

std::string report_to_text(const StudyReport& r) {
  std::string out;
  char buf[256];
  out += "Group summary (spread columns are post-test)\n";
  std::snprintf(buf, sizeof buf, "%-18s %4s %9s %10s %9s %9s\n", "medium", "N", "pre mean", "post mean", "std.dev", "s.e.mean");
  out += buf;
  for (std::size_t g = 0; g < 2; ++g) {
    std::snprintf(buf, sizeof buf, "%-18s %4d %9.2f %10.2f %9.2f %9.2f\n", r.groups[g].c_str(), r.post[g].n,
                  r.pre[g].mean, r.post[g].mean, r.post[g].sd, r.post[g].se);
    out += buf;
  }
  out += "\nIndependent samples test (post-test)\n";
  std::snprintf(buf, sizeof buf, "Levene: F = %.2f, sig = %.3f\n", r.levene.statistic, r.levene.p_two_tailed);
  out += buf;
  for (const auto& [name, t] : {std::pair{"equal variances assumed", &r.pooled},
                                std::pair{"equal variances not assumed", &r.welch}}) {
    std::snprintf(buf, sizeof buf,
                  "%-28s t = %.2f, df = %.2f, sig(2-tailed) = %.3f, mean diff = %.2f, se diff = %.2f, "
                  "95%% CI [%.2f, %.2f]\n",
                  name, t->statistic, t->df, t->p_two_tailed, t->mean_difference, t->se_difference, t->ci95[0],
                  t->ci95[1]);
    out += buf;
  }
  return out;
}

}  // namespace embedstory
