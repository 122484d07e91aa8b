#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "s3f/scoring.hpp"
#include "support/toy.hpp"

using namespace s3f;

namespace {

struct Fixture {
  Model model;
  Protein protein;
  SurfacePointCloud cloud;
};

Fixture make_fixture(Mode mode, std::uint64_t seed, int n = 30) {
  Rng rng(seed);
  auto mc = toy::tiny_config(mode);
  Fixture f{init_model(mc, seed + 1), toy::random_protein(n, rng), {}};
  toy::jitter(f.model, seed + 2);
  f.cloud = toy::random_cloud(120, mc.surface_feature_dim, rng, f.protein.ca_coords);
  return f;
}

std::string point_mutation(const Protein& p, int pos, int mt) {
  return format_site({pos, p.sequence[static_cast<std::size_t>(pos)], mt}, p.chain_offset);
}

int other_type(int wt, int k = 1) { return (wt + k) % kNumResidueTypes; }

AssayTable assay_of(const std::vector<std::string>& mutants) {
  AssayTable a;
  a.protein_id = "toy";
  for (const auto& m : mutants) a.variants.push_back({m, 0.0, {}});
  return a;
}

const EmbeddingProvider no_embeddings = [](const std::vector<int>&) -> const ResidueEmbeddings* { return nullptr; };

}  // namespace

TEST(ScoreVariant, WildTypeIsExactlyZero) {
  for (Mode mode : {Mode::s2f, Mode::s3f, Mode::surf_only}) {
    auto f = make_fixture(mode, 3);
    MutationSet mut;
    for (int pos : {2, 11, 20}) {
      const int aa = f.protein.sequence[static_cast<std::size_t>(pos)];
      mut.sites.push_back({pos, aa, aa});
    }
    EXPECT_EQ(score_variant(f.model, f.protein, mut, nullptr, &f.cloud), 0.0);
    EXPECT_EQ(score_variant(f.model, f.protein, MutationSet{}, nullptr, &f.cloud), 0.0);
  }
}

TEST(ScoreVariant, HandSetLogitsGiveLogRatio) {
  auto f = make_fixture(Mode::s3f, 5);
  const int pos = 7;
  const int wt = f.protein.sequence[pos];
  const int mt = other_type(wt, 3);
  Matrix b(1, kNumResidueTypes);
  b.setConstant(std::log(0.7 / 18.0));
  b(0, wt) = std::log(0.1);
  b(0, mt) = std::log(0.2);
  f.model.params["head.W"].setZero();
  f.model.params["head.b"] = b;
  const MutationSet mut{{{pos, wt, mt}}};
  EXPECT_NEAR(score_variant(f.model, f.protein, mut, nullptr, &f.cloud), std::log(2.0), 1e-12);
}

TEST(ScoreVariant, DoubleMutantSumsJointTerms) {
  auto f = make_fixture(Mode::s3f, 7);
  const int a = 4, c = 13;
  const MutationSet mut{{{a, f.protein.sequence[a], other_type(f.protein.sequence[a])},
                         {c, f.protein.sequence[c], other_type(f.protein.sequence[c], 5)}}};
  const auto terms = site_log_odds(f.model, f.protein, mut, nullptr, &f.cloud);
  ASSERT_EQ(terms.size(), 2u);

  const std::vector<int> both = {a, c};
  const auto ex = excise_positions(f.cloud, f.protein, both, 20);
  const Matrix lp = forward_logits(f.model, f.protein, nullptr, both, &ex.cloud);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& s = mut.sites[k];
    EXPECT_EQ(terms[k], lp(static_cast<Index>(k), s.mt) - lp(static_cast<Index>(k), s.wt));
  }
  EXPECT_NEAR(score_variant(f.model, f.protein, mut, nullptr, &f.cloud), terms[0] + terms[1], 1e-14);

  // Single-site passes see a different context, so the joint terms are not
  // the single-mutant scores in general.
  const double single_a = score_variant(f.model, f.protein, MutationSet{{mut.sites[0]}}, nullptr, &f.cloud);
  EXPECT_NE(single_a, terms[0]);
}

TEST(ScoreVariant, RejectsBadSites) {
  auto f = make_fixture(Mode::s2f, 9);
  const int wt = f.protein.sequence[3];
  EXPECT_THROW(score_variant(f.model, f.protein, MutationSet{{{40, 0, 1}}}, nullptr, nullptr), DataError);
  EXPECT_THROW(score_variant(f.model, f.protein, MutationSet{{{3, other_type(wt), wt}}}, nullptr, nullptr),
               DataError);
  auto g = make_fixture(Mode::s3f, 9);
  EXPECT_THROW(score_variant(g.model, g.protein, MutationSet{{{3, wt, other_type(wt)}}}, nullptr, nullptr),
               DataError);
}

TEST(ScoreAssay, GatingThreshold) {
  auto f = make_fixture(Mode::s3f, 11);
  f.protein.plddt[5] = 69.0;
  f.protein.plddt[6] = 70.0;
  const auto low = point_mutation(f.protein, 5, other_type(f.protein.sequence[5]));
  const auto edge = point_mutation(f.protein, 6, other_type(f.protein.sequence[6]));
  const BaselineScores base = {{low, -4.25}, {edge, 9.0}};
  const auto out = score_assay(f.model, f.protein, assay_of({low, edge}), no_embeddings, &f.cloud, &base);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].mutant, low);
  EXPECT_EQ(out[0].provenance, Provenance::baseline);
  EXPECT_EQ(out[0].score, -4.25);
  EXPECT_EQ(out[1].provenance, Provenance::model);
  EXPECT_EQ(out[1].score, score_variant(f.model, f.protein, parse_mutation(edge, 0, f.protein.sequence), nullptr,
                                        &f.cloud));
}

TEST(ScoreAssay, MissingBaselineIsConfigError) {
  auto f = make_fixture(Mode::s2f, 13);
  f.protein.plddt[2] = 40.0;
  const auto m = point_mutation(f.protein, 2, other_type(f.protein.sequence[2]));
  EXPECT_THROW(score_assay(f.model, f.protein, assay_of({m}), no_embeddings, nullptr, nullptr), ConfigError);
  const BaselineScores other = {{"A1C", 1.0}};
  EXPECT_THROW(score_assay(f.model, f.protein, assay_of({m}), no_embeddings, nullptr, &other), DataError);
}

TEST(ScoreAssay, CompositionWithDirectCalls) {
  auto f = make_fixture(Mode::s3f, 15, 40);
  Rng rng(16);
  std::vector<std::string> mutants;
  std::vector<MutationSet> sets;
  for (int v = 0; v < 50; ++v) {
    MutationSet mut;
    const int sites = 1 + static_cast<int>(rng.index(3));
    std::vector<int> pos;
    while (static_cast<int>(pos.size()) < sites) {
      const int p = static_cast<int>(rng.index(40));
      if (std::find(pos.begin(), pos.end(), p) == pos.end()) pos.push_back(p);
    }
    std::sort(pos.begin(), pos.end());
    for (int p : pos) {
      const int wt = f.protein.sequence[static_cast<std::size_t>(p)];
      mut.sites.push_back({p, wt, other_type(wt, 1 + static_cast<int>(rng.index(19)))});
    }
    mutants.push_back(format_mutation(mut, 0));
    sets.push_back(mut);
  }
  ScoreConfig cfg;
  cfg.threads = 3;
  const auto out = score_assay(f.model, f.protein, assay_of(mutants), no_embeddings, &f.cloud, nullptr, cfg);
  ASSERT_EQ(out.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(out[i].mutant, mutants[i]);
    EXPECT_EQ(out[i].provenance, Provenance::model);
    EXPECT_EQ(out[i].score, score_variant(f.model, f.protein, sets[i], nullptr, &f.cloud));
  }
}

TEST(ScoreAssay, MixedConfidenceVariants) {
  auto f = make_fixture(Mode::s2f, 17);
  f.protein.plddt[8] = 50.0;
  const int hi = 3, lo = 8;
  const Site s_hi{hi, f.protein.sequence[hi], other_type(f.protein.sequence[hi])};
  const Site s_lo{lo, f.protein.sequence[lo], other_type(f.protein.sequence[lo])};
  const MutationSet mut{{s_hi, s_lo}};
  const auto text = format_mutation(mut, 0);
  const BaselineScores base = {{text, 1.5}, {format_site(s_lo, 0), -0.75}};

  const auto whole = score_assay(f.model, f.protein, assay_of({text, "WT"}), no_embeddings, nullptr, &base);
  EXPECT_EQ(whole[0].provenance, Provenance::baseline);
  EXPECT_EQ(whole[0].score, 1.5);
  EXPECT_EQ(whole[1].provenance, Provenance::model);
  EXPECT_EQ(whole[1].score, 0.0);

  ScoreConfig cfg;
  cfg.per_site_gating = true;
  const auto split = score_assay(f.model, f.protein, assay_of({text}), no_embeddings, nullptr, &base, cfg);
  const auto terms = site_log_odds(f.model, f.protein, mut, nullptr, nullptr);
  EXPECT_EQ(split[0].provenance, Provenance::mixed);
  EXPECT_NEAR(split[0].score, terms[0] - 0.75, 1e-14);
}

TEST(ScoreAssay, ProvenanceFollowsSiteRule) {
  auto f = make_fixture(Mode::s2f, 19);
  Rng rng(20);
  BaselineScores base;
  std::vector<std::string> mutants;
  for (auto& v : f.protein.plddt) v = 40.0 + 60.0 * rng.uniform();
  for (int v = 0; v < 40; ++v) {
    const int p1 = static_cast<int>(rng.index(15)), p2 = 15 + static_cast<int>(rng.index(15));
    MutationSet mut;
    mut.sites.push_back({p1, f.protein.sequence[static_cast<std::size_t>(p1)], other_type(f.protein.sequence[static_cast<std::size_t>(p1)])});
    if (v % 2) mut.sites.push_back({p2, f.protein.sequence[static_cast<std::size_t>(p2)], other_type(f.protein.sequence[static_cast<std::size_t>(p2)])});
    mutants.push_back(format_mutation(mut, 0));
    base[mutants.back()] = rng.normal();
  }
  const auto out = score_assay(f.model, f.protein, assay_of(mutants), no_embeddings, nullptr, &base);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto mut = parse_mutation(mutants[i], 0);
    bool all_high = true;
    for (const auto& s : mut.sites) all_high = all_high && f.protein.plddt[static_cast<std::size_t>(s.position)] >= 70.0;
    EXPECT_EQ(out[i].provenance, all_high ? Provenance::model : Provenance::baseline);
    if (!all_high) EXPECT_EQ(out[i].score, base.at(mutants[i]));
  }
}

TEST(Ensemble, OppositeListsCancel) {
  const std::vector<double> a = {1, 2, 3}, b = {3, 2, 1};
  for (double v : ensemble_zscores(a, b)) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Ensemble, IdenticalListsDoubleZ) {
  Rng rng(21);
  std::vector<double> a(30);
  for (auto& v : a) v = rng.normal();
  const auto z = zscores(a);
  const auto e = ensemble_zscores(a, a);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(e[i], 2.0 * z[i]);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(a[i] < a[j], e[i] < e[j]);
}

TEST(Ensemble, MatchesNaiveOracle) {
  Rng rng(22);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> a(100), b(100);
    for (auto& v : a) v = 3.0 * rng.normal() + 1.0;
    for (auto& v : b) v = rng.uniform() * 10.0 - 7.0;
    const auto naive_z = [](const std::vector<double>& x) {
      long double s = 0;
      for (double v : x) s += v;
      const long double mu = s / x.size();
      long double q = 0;
      for (double v : x) q += (v - mu) * (v - mu);
      const long double sd = std::sqrt(q / x.size());
      std::vector<double> z;
      for (double v : x) z.push_back(static_cast<double>((v - mu) / sd));
      return z;
    };
    const auto za = naive_z(a), zb = naive_z(b);
    const auto e = ensemble_zscores(a, b);
    for (std::size_t i = 0; i < 100; ++i) EXPECT_NEAR(e[i], za[i] + zb[i], 1e-12);
  }
}

TEST(Ensemble, AffineInvariance) {
  Rng rng(23);
  std::vector<double> a(80), b(80);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  const auto e = ensemble_zscores(a, b);
  for (auto [alpha, beta] : {std::pair{2.5, -3.0}, std::pair{1e-3, 40.0}, std::pair{700.0, 0.25}}) {
    std::vector<double> t;
    for (double v : a) t.push_back(alpha * v + beta);
    const auto et = ensemble_zscores(t, b);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(et[i], e[i], 1e-10);
  }
}

TEST(Ensemble, Errors) {
  const std::vector<double> flat = {2, 2, 2}, ok = {1, 2, 3}, short_list = {1, 2};
  EXPECT_THROW(ensemble_zscores(flat, ok), DataError);
  EXPECT_THROW(ensemble_zscores(ok, flat), DataError);
  EXPECT_THROW(ensemble_zscores(ok, short_list), DataError);
  EXPECT_THROW(zscores(std::vector<double>{1.0}), DataError);
}
