#pragma once

// Fitness-prediction metrics, paired bootstrap of metric differences, and
// per-assay / per-group / aggregate reports.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "s3f/csv.hpp"
#include "s3f/errors.hpp"
#include "s3f/protein_io.hpp"
#include "s3f/rng.hpp"

namespace s3f {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Average ranks (1-based), ties sharing the mean of their positions.
inline std::vector<double> mid_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = mid;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw DataError("correlation: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("spearman: length mismatch");
  if (x.size() < 2) throw DataError("spearman: need at least two values");
  const auto rx = mid_ranks(x);
  const auto ry = mid_ranks(y);
  return pearson(rx, ry);
}

inline void check_binary(std::span<const int> labels, std::size_t n, const char* what) {
  if (labels.size() != n) throw DataError(std::string(what) + ": length mismatch");
  bool pos = false, neg = false;
  for (int l : labels) {
    if (l != 0 && l != 1) throw DataError(std::string(what) + ": labels must be 0 or 1");
    (l ? pos : neg) = true;
  }
  if (!pos || !neg) throw DataError(std::string(what) + ": both classes must be present");
}

/// P(score_pos > score_neg) + P(equal) / 2 via the rank-sum identity.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(labels, scores.size(), "auc");
  const auto r = mid_ranks(scores);
  double rank_sum = 0.0, n_pos = 0.0, n_neg = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (labels[i]) {
      rank_sum += r[i];
      n_pos += 1.0;
    } else {
      n_neg += 1.0;
    }
  }
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

inline double median(std::span<const double> x) {
  if (x.empty()) throw DataError("median of empty list");
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const auto n = s.size();
  return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

/// Labels by median split: 1 where value >= median.
inline std::vector<int> median_split(std::span<const double> x) {
  const double m = median(x);
  std::vector<int> out;
  out.reserve(x.size());
  for (double v : x) out.push_back(v >= m ? 1 : 0);
  return out;
}

inline double mcc_from_counts(double tp, double tn, double fp, double fn) {
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (den == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(den);
}

/// Scores are binarized at `threshold` (default: their median), predicting
/// positive where score >= threshold.
inline double mcc(std::span<const double> scores, std::span<const int> labels,
                  std::optional<double> threshold = std::nullopt) {
  check_binary(labels, scores.size(), "mcc");
  const double thr = threshold ? *threshold : median(scores);
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= thr;
    if (pred && labels[i]) ++tp;
    else if (pred) ++fp;
    else if (labels[i]) ++fn;
    else ++tn;
  }
  return mcc_from_counts(tp, tn, fp, fn);
}

/// Indices sorted by value descending, ties by index.
inline std::vector<std::size_t> descending_order(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  return order;
}

/// NDCG over the full list with gains min-max scaled to [0, 1]; all-equal
/// gains give 1.
inline double ndcg(std::span<const double> scores, std::span<const double> gains) {
  if (scores.size() != gains.size()) throw DataError("ndcg: length mismatch");
  if (scores.empty()) throw DataError("ndcg: empty input");
  const auto [lo, hi] = std::minmax_element(gains.begin(), gains.end());
  if (*hi == *lo) return 1.0;
  std::vector<double> g(gains.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (gains[i] - *lo) / (*hi - *lo);
  const auto dcg = [&](const std::vector<std::size_t>& order) {
    double s = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) s += g[order[r]] / std::log2(static_cast<double>(r) + 2.0);
    return s;
  };
  return dcg(descending_order(scores)) / dcg(descending_order(g));
}

/// Overlap of the top-k by score and the top-k by gain over k, k = max(1, floor(frac n)).
inline double top_fraction_recall(std::span<const double> scores, std::span<const double> gains, double frac = 0.10) {
  if (scores.size() != gains.size()) throw DataError("recall: length mismatch");
  if (scores.empty()) throw DataError("recall: empty input");
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(frac * static_cast<double>(scores.size()))));
  auto a = descending_order(scores);
  auto b = descending_order(gains);
  a.resize(k);
  b.resize(k);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return static_cast<double>(both.size()) / static_cast<double>(k);
}

/// Population std of mean(a) - mean(b) over paired resamples of the indices.
inline double bootstrap_diff_stderr(std::span<const double> a, std::span<const double> b, int n_boot = 10000,
                                    std::uint64_t seed = 0) {
  if (a.size() != b.size()) throw DataError("bootstrap: paired lists differ in length");
  if (a.size() < 2) throw DataError("bootstrap: need at least two paired values");
  if (n_boot < 2) throw ConfigError("bootstrap: need at least two resamples");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(n_boot));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) s += d[rng.index(d.size())];
    m = s / static_cast<double>(d.size());
  }
  const double mu = std::accumulate(means.begin(), means.end(), 0.0) / n_boot;
  double var = 0.0;
  for (double m : means) var += (m - mu) * (m - mu);
  return std::sqrt(var / n_boot);
}

// ---------------------------------------------------------------------------
// Reports

struct MetricRow {
  std::string kind;  ///< assay, group, aggregate or significance
  std::string assay;
  std::string group;
  long long n_variants = 0;
  double spearman = kNaN;
  double auc = kNaN;
  double mcc = kNaN;
  double ndcg = kNaN;
  double recall10 = kNaN;
  /// Bootstrap standard error (significance rows only).
  double stderr_ = kNaN;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  /// Comment lines written ahead of the table.
  std::vector<std::string> comments;

  const MetricRow* find(std::string_view kind, std::string_view assay = {}, std::string_view group = {}) const {
    for (const auto& r : rows)
      if (r.kind == kind && (assay.empty() || r.assay == assay) && (group.empty() || r.group == group)) return &r;
    return nullptr;
  }
};

namespace detail {
template <typename F>
double or_nan(F&& f) {
  try {
    return f();
  } catch (const DataError&) {
    return kNaN;
  }
}
}  // namespace detail

/// All five metrics for one scored assay; degenerate metrics come back NaN.
/// Labels are the assay's bins when present, otherwise a median split of
/// the DMS scores.
inline MetricRow evaluate_scores(std::span<const double> scores, std::span<const double> dms,
                                 std::optional<std::span<const int>> bins = std::nullopt) {
  if (scores.size() != dms.size()) throw DataError("evaluate: scores and DMS values differ in length");
  MetricRow r;
  r.kind = "assay";
  r.n_variants = static_cast<long long>(scores.size());
  if (scores.empty()) return r;
  const std::vector<int> labels = bins ? std::vector<int>(bins->begin(), bins->end()) : median_split(dms);
  r.spearman = detail::or_nan([&] { return spearman(scores, dms); });
  r.auc = detail::or_nan([&] { return auc(scores, labels); });
  r.mcc = detail::or_nan([&] { return mcc(scores, labels); });
  r.ndcg = detail::or_nan([&] { return ndcg(scores, dms); });
  r.recall10 = detail::or_nan([&] { return top_fraction_recall(scores, dms); });
  return r;
}

/// Mean of the non-NaN values (NaN when there are none).
inline double nan_mean(const std::vector<double>& v) {
  double s = 0.0;
  int n = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  return n ? s / n : kNaN;
}

inline MetricRow mean_row(const std::vector<const MetricRow*>& rows, std::string kind, std::string group) {
  MetricRow out;
  out.kind = std::move(kind);
  out.group = std::move(group);
  std::vector<double> sp, au, mc, nd, rc;
  for (const auto* r : rows) {
    out.n_variants += r->n_variants;
    sp.push_back(r->spearman);
    au.push_back(r->auc);
    mc.push_back(r->mcc);
    nd.push_back(r->ndcg);
    rc.push_back(r->recall10);
  }
  out.spearman = nan_mean(sp);
  out.auc = nan_mean(au);
  out.mcc = nan_mean(mc);
  out.ndcg = nan_mean(nd);
  out.recall10 = nan_mean(rc);
  return out;
}

/// One scored assay: DMS table plus a score per variant, aligned by row.
struct ScoredAssay {
  std::string id;
  AssayTable assay;
  std::vector<double> scores;
};

/// Group key of each variant: "depth" (number of mutated sites) or an assay column.
inline std::vector<std::string> group_keys(const AssayTable& a, const std::string& key) {
  std::vector<std::string> out;
  if (key == "depth") {
    for (const auto& v : a.variants) {
      const auto m = parse_mutation(v.mutant, 0);
      out.push_back(std::to_string(m.sites.size()));
    }
    return out;
  }
  const auto it = a.extra.find(key);
  if (it == a.extra.end()) throw DataError("assay " + a.protein_id + " has no column '" + key + "' to group by");
  return it->second;
}

/// Per-assay rows, optional per-group rows (metrics per assay subset, then
/// averaged over assays), and the unweighted aggregate over assays.
inline MetricReport evaluate_assays(const std::vector<ScoredAssay>& assays, const std::string& group_by = {}) {
  if (assays.empty()) throw DataError("evaluate: no assays");
  MetricReport rep;
  const auto subset_row = [](const ScoredAssay& a, const std::vector<std::size_t>& idx) {
    std::vector<double> s, d;
    std::vector<int> b;
    for (auto i : idx) {
      s.push_back(a.scores[i]);
      d.push_back(a.assay.variants[i].dms_score);
      if (a.assay.has_bins()) b.push_back(*a.assay.variants[i].dms_bin);
    }
    return a.assay.has_bins() ? evaluate_scores(s, d, std::span<const int>(b)) : evaluate_scores(s, d);
  };
  for (const auto& a : assays) {
    if (a.scores.size() != a.assay.variants.size())
      throw DataError("assay " + a.id + ": " + std::to_string(a.scores.size()) + " scores for " +
                      std::to_string(a.assay.variants.size()) + " variants");
    std::vector<std::size_t> all(a.scores.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    auto row = subset_row(a, all);
    row.assay = a.id;
    rep.rows.push_back(row);
  }
  const std::size_t n_assay_rows = rep.rows.size();
  if (!group_by.empty()) {
    std::map<std::string, std::vector<MetricRow>> per_group;
    for (const auto& a : assays) {
      const auto keys = group_keys(a.assay, group_by);
      std::map<std::string, std::vector<std::size_t>> idx;
      for (std::size_t i = 0; i < keys.size(); ++i) idx[keys[i]].push_back(i);
      for (const auto& [k, rows] : idx) per_group[k].push_back(subset_row(a, rows));
    }
    for (const auto& [k, rows] : per_group) {
      std::vector<const MetricRow*> ptrs;
      for (const auto& r : rows) ptrs.push_back(&r);
      auto g = mean_row(ptrs, "group", k);
      g.assay = group_by;
      rep.rows.push_back(g);
    }
  }
  std::vector<const MetricRow*> ptrs;
  for (std::size_t i = 0; i < n_assay_rows; ++i) ptrs.push_back(&rep.rows[i]);
  auto agg = mean_row(ptrs, "aggregate", "");
  agg.assay = "all";
  rep.rows.push_back(agg);
  return rep;
}

/// Appends a significance row comparing per-assay Spearman lists.
inline void add_significance(MetricReport& rep, const std::string& label, std::span<const double> a,
                             std::span<const double> b, int n_boot, std::uint64_t seed) {
  MetricRow r;
  r.kind = "significance";
  r.assay = label;
  r.n_variants = static_cast<long long>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) d[i] = a[i] - b[i];
  r.spearman = d.empty() ? kNaN : std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  r.stderr_ = bootstrap_diff_stderr(a, b, n_boot, seed);
  rep.rows.push_back(r);
}

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols = {"kind", "assay", "group", "n_variants", "spearman", "auc",
                                                "mcc",  "ndcg",  "recall10", "stderr"};
  return cols;
}

inline std::string report_to_csv(const MetricReport& rep) {
  std::string out;
  for (const auto& c : rep.comments) out += "# " + c + "\n";
  const auto& cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
  for (const auto& r : rep.rows) {
    out += csv_escape(r.kind) + "," + csv_escape(r.assay) + "," + csv_escape(r.group) + "," +
           std::to_string(r.n_variants);
    for (double v : {r.spearman, r.auc, r.mcc, r.ndcg, r.recall10, r.stderr_}) out += "," + format_double(v);
    out += '\n';
  }
  return out;
}

inline MetricReport report_from_csv(std::string_view text, const std::string& origin = "<report>") {
  const auto csv = parse_csv(text, origin);
  if (csv.header != report_columns()) throw DataError(origin + ": not a metric report (unexpected columns)");
  MetricReport rep;
  rep.comments = csv.comments;
  for (std::size_t k = 0; k < csv.rows.size(); ++k) {
    const auto& f = csv.rows[k];
    MetricRow r;
    r.kind = f[0];
    r.assay = f[1];
    r.group = f[2];
    const auto n = parse_int(f[3]);
    if (!n) throw DataError(origin + ":" + std::to_string(csv.line_numbers[k]) + ": bad n_variants");
    r.n_variants = *n;
    double* dst[] = {&r.spearman, &r.auc, &r.mcc, &r.ndcg, &r.recall10, &r.stderr_};
    for (std::size_t c = 0; c < 6; ++c) {
      const auto v = parse_double(f[4 + c]);
      if (!v) throw DataError(origin + ":" + std::to_string(csv.line_numbers[k]) + ": bad value '" + f[4 + c] + "'");
      *dst[c] = *v;
    }
    rep.rows.push_back(r);
  }
  return rep;
}

inline nlohmann::json report_to_json(const MetricReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  const auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  for (const auto& r : rep.rows)
    rows.push_back({{"kind", r.kind},
                    {"assay", r.assay},
                    {"group", r.group},
                    {"n_variants", r.n_variants},
                    {"spearman", num(r.spearman)},
                    {"auc", num(r.auc)},
                    {"mcc", num(r.mcc)},
                    {"ndcg", num(r.ndcg)},
                    {"recall10", num(r.recall10)},
                    {"stderr", num(r.stderr_)}});
  nlohmann::json out = {{"rows", rows}};
  if (!rep.comments.empty()) out["comments"] = rep.comments;
  return out;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport rep;
  const auto num = [](const nlohmann::json& v) { return v.is_null() ? kNaN : v.get<double>(); };
  try {
    for (const auto& r : j.at("rows"))
      rep.rows.push_back({r.at("kind"), r.at("assay"), r.at("group"), r.at("n_variants"), num(r.at("spearman")),
                          num(r.at("auc")), num(r.at("mcc")), num(r.at("ndcg")), num(r.at("recall10")),
                          num(r.at("stderr"))});
    if (j.contains("comments")) rep.comments = j.at("comments").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metric report JSON: ") + e.what());
  }
  return rep;
}

}  // namespace s3f
