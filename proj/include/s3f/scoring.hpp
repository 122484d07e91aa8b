#pragma once

// Zero-shot variant effects: masked log-odds summed over the mutated sites,
// pLDDT-gated fallback to baseline scores, and z-score ensembling.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s3f/errors.hpp"
#include "s3f/parallel.hpp"
#include "s3f/model.hpp"
#include "s3f/protein_io.hpp"
#include "s3f/surface.hpp"

namespace s3f {

enum class Provenance { model, baseline, mixed };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::model: return "model";
    case Provenance::baseline: return "baseline";
    case Provenance::mixed: return "mixed";
  }
  return "?";
}

struct VariantScore {
  std::string mutant;
  double score = 0.0;
  Provenance provenance = Provenance::model;
};

using BaselineScores = std::map<std::string, double>;

struct ScoreConfig {
  double plddt_threshold = 70.0;
  int excise_m = 20;
  /// Mixed-confidence variants: sum model terms and baseline single-site
  /// terms instead of falling back to the baseline for the whole variant.
  bool per_site_gating = false;
  int threads = 1;
};

/// Embeddings whose context tag matches the requested masked positions.
using EmbeddingProvider = std::function<const ResidueEmbeddings*(const std::vector<int>& positions)>;

/// Per-site log-odds log p(mt) - log p(wt) from one joint forward pass with
/// every site masked and the union of their surface neighbourhoods removed.
inline std::vector<double> site_log_odds(const Model& m, const Protein& protein, const MutationSet& mut,
                                         const ResidueEmbeddings* embeddings, const SurfacePointCloud* cloud,
                                         int excise_m = 20) {
  if (mut.empty()) return {};
  const auto positions = mut.positions();
  for (const auto& s : mut.sites) {
    if (s.position < 0 || s.position >= static_cast<int>(protein.size()))
      throw DataError("mutation site " + std::to_string(s.position + 1) + " is outside protein " + protein.id);
    if (protein.sequence[static_cast<std::size_t>(s.position)] != s.wt)
      throw DataError("wild-type mismatch at residue " + std::to_string(s.position + 1) + " of " + protein.id);
  }
  std::optional<ExcisedCloud> excised;
  if (uses_surface(m.config.mode)) {
    if (!cloud) throw DataError("scoring: mode " + to_string(m.config.mode) + " needs a surface cloud");
    excised = excise_positions(*cloud, protein, positions, excise_m);
  }
  const Matrix lp = forward_logits(m, protein, embeddings, positions, excised ? &excised->cloud : nullptr);
  std::vector<double> out;
  for (std::size_t r = 0; r < mut.sites.size(); ++r) {
    const auto& s = mut.sites[r];
    out.push_back(s.mt == s.wt ? 0.0 : lp(static_cast<Index>(r), s.mt) - lp(static_cast<Index>(r), s.wt));
  }
  return out;
}

inline double score_variant(const Model& m, const Protein& protein, const MutationSet& mut,
                            const ResidueEmbeddings* embeddings, const SurfacePointCloud* cloud, int excise_m = 20) {
  double s = 0.0;
  for (double t : site_log_odds(m, protein, mut, embeddings, cloud, excise_m)) s += t;
  return s;
}

/// Scores every assay variant in input order, routing low-confidence sites
/// to `baseline`.
inline std::vector<VariantScore> score_assay(const Model& m, const Protein& protein, const AssayTable& assay,
                                             const EmbeddingProvider& embeddings, const SurfacePointCloud* cloud,
                                             const BaselineScores* baseline, const ScoreConfig& cfg = {}) {
  std::vector<MutationSet> muts;
  muts.reserve(assay.variants.size());
  bool needs_baseline = false;
  for (const auto& v : assay.variants) {
    muts.push_back(parse_mutation(v.mutant, protein.chain_offset, protein.sequence));
    for (const auto& s : muts.back().sites)
      if (protein.plddt[static_cast<std::size_t>(s.position)] < cfg.plddt_threshold) needs_baseline = true;
  }
  if (needs_baseline && !baseline)
    throw ConfigError("assay has mutated sites with pLDDT below " + format_double(cfg.plddt_threshold) +
                      "; supply baseline scores");

  const auto lookup = [&](const std::string& key) {
    const auto it = baseline->find(key);
    if (it == baseline->end()) throw DataError("baseline scores have no entry for '" + key + "'");
    return it->second;
  };

  std::vector<VariantScore> out(assay.variants.size());
  std::vector<std::exception_ptr> errors(out.size());
  const auto work = [&](std::size_t i) {
    try {
      const auto& mut = muts[i];
      auto& vs = out[i];
      vs.mutant = assay.variants[i].mutant;
      if (mut.empty()) {
        vs.score = 0.0;
        vs.provenance = Provenance::model;
        return;
      }
      std::size_t low = 0;
      for (const auto& s : mut.sites)
        low += protein.plddt[static_cast<std::size_t>(s.position)] < cfg.plddt_threshold ? 1 : 0;
      const auto model_terms = [&] {
        const auto pos = mut.positions();
        const ResidueEmbeddings* e = m.config.embedder == EmbedderMode::file ? embeddings(pos) : nullptr;
        return site_log_odds(m, protein, mut, e, cloud, cfg.excise_m);
      };
      if (low == 0) {
        vs.provenance = Provenance::model;
        for (double t : model_terms()) vs.score += t;
      } else if (low == mut.sites.size() || !cfg.per_site_gating) {
        vs.provenance = Provenance::baseline;
        vs.score = lookup(vs.mutant);
      } else {
        vs.provenance = Provenance::mixed;
        const auto terms = model_terms();
        for (std::size_t k = 0; k < mut.sites.size(); ++k) {
          const auto& s = mut.sites[k];
          if (protein.plddt[static_cast<std::size_t>(s.position)] < cfg.plddt_threshold)
            vs.score += lookup(format_site(s, protein.chain_offset));
          else
            vs.score += terms[k];
        }
      }
      if (!std::isfinite(vs.score)) throw NumericalError("non-finite score for " + vs.mutant);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  parallel_for(out.size(), cfg.threads, work);
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// (x - mean) / std with the population standard deviation.
inline std::vector<double> zscores(std::span<const double> x) {
  if (x.size() < 2) throw DataError("z-score: need at least two values");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(x.size()));
  if (!(sd > 0.0)) throw DataError("z-score: zero standard deviation");
  std::vector<double> out;
  out.reserve(x.size());
  for (double v : x) out.push_back((v - mean) / sd);
  return out;
}

inline std::vector<double> ensemble_zscores(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("ensemble: score lists differ in length");
  const auto za = zscores(a);
  const auto zb = zscores(b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = za[i] + zb[i];
  return out;
}

}  // namespace s3f
