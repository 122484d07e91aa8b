#pragma once

// Masked-residue pre-training: corruption policy, surface excision around the
// selected residues, Adam/SGD updates and the epoch loop.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "s3f/checkpoint.hpp"
#include "s3f/errors.hpp"
#include "s3f/parallel.hpp"
#include "s3f/geometry.hpp"
#include "s3f/model.hpp"
#include "s3f/protein_io.hpp"
#include "s3f/rng.hpp"
#include "s3f/surface.hpp"

namespace s3f {

struct MaskingPolicy {
  double select_rate = 0.15;
  double mask_rate = 0.80;
  double random_rate = 0.10;
  double keep_rate = 0.10;
  int excise_m = 20;

  void validate() const {
    if (!(select_rate > 0.0 && select_rate <= 1.0)) throw ConfigError("masking: select_rate must be in (0, 1]");
    if (mask_rate < 0.0 || random_rate < 0.0 || keep_rate < 0.0 ||
        std::abs(mask_rate + random_rate + keep_rate - 1.0) > 1e-9)
      throw ConfigError("masking: mask, random and keep rates must be nonnegative and sum to 1");
    if (excise_m < 1) throw ConfigError("masking: excise_m must be >= 1");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MaskingPolicy, select_rate, mask_rate, random_rate, keep_rate,
                                                excise_m)

enum class MaskAction { mask, random, keep };

struct MaskedSequence {
  std::vector<int> selected;
  std::vector<MaskAction> actions;  ///< one per selected position
  /// Toy-embedder tokens: mask token, a random type, or the original.
  std::vector<int> corrupted;
};

/// Independent per-position selection, redrawn until at least one position
/// is selected, then a mask/random/keep action per selected position.
inline MaskedSequence apply_mask(std::span<const int> sequence, Rng& rng, const MaskingPolicy& policy) {
  if (sequence.empty()) throw std::invalid_argument("apply_mask: empty sequence");
  MaskedSequence out;
  while (out.selected.empty()) {
    out.actions.clear();
    out.corrupted.assign(sequence.begin(), sequence.end());
    for (std::size_t i = 0; i < sequence.size(); ++i) {
      if (!rng.bernoulli(policy.select_rate)) continue;
      out.selected.push_back(static_cast<int>(i));
      const double u = rng.uniform();
      if (u < policy.mask_rate) {
        out.actions.push_back(MaskAction::mask);
        out.corrupted[i] = kMaskToken;
      } else if (u < policy.mask_rate + policy.random_rate) {
        out.actions.push_back(MaskAction::random);
        out.corrupted[i] = static_cast<int>(rng.index(kNumResidueTypes));
      } else {
        out.actions.push_back(MaskAction::keep);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

enum class OptimizerKind { adam, sgd };
NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::adam, "adam"}, {OptimizerKind::sgd, "sgd"}})

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  double learning_rate = 1e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;
  bool deterministic = true;
  /// Write a checkpoint every this many epochs (0: only at the end).
  int checkpoint_every = 0;
  /// Brute-force recheck of the excision on the first step of every epoch.
  bool check_leakage = true;
  MaskingPolicy masking;

  void validate() const {
    if (epochs < 0 || batch_size < 1 || !(learning_rate > 0.0)) throw ConfigError("train: need epochs >= 0, batch >= 1, lr > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
      throw ConfigError("train: bad optimizer moments");
    if (grad_clip < 0.0 || threads < 1 || checkpoint_every < 0) throw ConfigError("train: bad clip/threads/checkpoint");
    masking.validate();
  }

  /// Defaults for a full-size run of the given mode.
  static TrainConfig paper_scale(Mode mode) {
    TrainConfig c;
    c.batch_size = mode == Mode::s2f ? 128 : 8;
    return c;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, epochs, batch_size, learning_rate, optimizer, beta1,
                                                beta2, adam_eps, grad_clip, seed, threads, deterministic,
                                                checkpoint_every, check_leakage, masking)

struct OptimizerState {
  std::int64_t step = 0;
  std::map<std::string, Matrix> m, v;
};

inline double global_norm(const Gradients& g) {
  double s = 0.0;
  for (const auto& [_, t] : g) s += t.squaredNorm();
  return std::sqrt(s);
}

/// Scales g in place so its global norm is at most max_norm; returns the
/// norm before clipping. max_norm <= 0 disables clipping.
inline double clip_gradients(Gradients& g, double max_norm) {
  const double n = global_norm(g);
  if (max_norm > 0.0 && n > max_norm) {
    const double f = max_norm / n;
    for (auto& [_, t] : g) t *= f;
  }
  return n;
}

/// One update; a pure function of (params, grads, state). Parameters and
/// moments stay f32-representable so checkpoints resume exactly.
inline void optimizer_step(ParamStore& params, const Gradients& grads, OptimizerState& st, const TrainConfig& cfg) {
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Matrix& g = it->second;
    if (cfg.optimizer == OptimizerKind::sgd) {
      p -= cfg.learning_rate * g;
    } else {
      auto& m = st.m[name];
      auto& v = st.v[name];
      if (m.size() == 0) m = Matrix::Zero(p.rows(), p.cols());
      if (v.size() == 0) v = Matrix::Zero(p.rows(), p.cols());
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
      round_to_f32(m);
      round_to_f32(v);
      p.array() -= cfg.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.adam_eps);
    }
    round_to_f32(p);
  }
}

// ---------------------------------------------------------------------------
// Corpus and training examples

struct TrainItem {
  Protein protein;
  /// Full cloud with features (modes with surface).
  std::optional<SurfacePointCloud> cloud;
  /// Pattern-matched embeddings (file embedder).
  std::optional<ResidueEmbeddings> embeddings;
  SpatialGraph graph;
};

inline TrainItem make_train_item(Protein p, const ModelConfig& mc, std::optional<SurfacePointCloud> cloud = {},
                                 std::optional<ResidueEmbeddings> emb = {}) {
  TrainItem it;
  it.graph = build_radius_graph(p.ca_coords, mc.radius);
  it.protein = std::move(p);
  it.cloud = std::move(cloud);
  it.embeddings = std::move(emb);
  if (uses_surface(mc.mode) && !it.cloud) throw DataError("protein " + it.protein.id + ": mode needs a surface cloud");
  if (mc.embedder == EmbedderMode::file) {
    if (!it.embeddings) throw DataError("protein " + it.protein.id + ": file embedder needs an embedding file");
    if (it.embeddings->rows.rows() != static_cast<Index>(it.protein.size()) || it.embeddings->dim() != mc.embed_dim)
      throw DataError("protein " + it.protein.id + ": embedding shape does not match structure/model");
    const auto tag = parse_mask_tag(it.embeddings->context_tag);
    if (!tag || tag->empty())
      throw DataError("protein " + it.protein.id + ": training embeddings must carry a mask context tag");
    for (int q : *tag)
      if (q >= static_cast<int>(it.protein.size())) throw DataError("protein " + it.protein.id + ": mask tag out of range");
  }
  return it;
}

struct Example {
  ModelInput input;
  std::vector<int> targets;
  std::optional<ExcisedCloud> excised;
};

/// Corrupts one protein and excises the surface around the selected residues.
inline Example make_example(const TrainItem& item, const ModelConfig& mc, const MaskingPolicy& policy, Rng& rng) {
  Example ex;
  const auto& p = item.protein;
  ex.input.protein = &p;
  ex.input.graph = &item.graph;
  if (mc.embedder == EmbedderMode::file) {
    ex.input.query = *parse_mask_tag(item.embeddings->context_tag);
    ex.input.embedding_rows = &item.embeddings->rows;
  } else {
    auto ms = apply_mask(p.sequence, rng, policy);
    ex.input.query = std::move(ms.selected);
    ex.input.tokens = std::move(ms.corrupted);
  }
  for (int q : ex.input.query) ex.targets.push_back(p.sequence[static_cast<std::size_t>(q)]);
  if (uses_surface(mc.mode)) {
    ex.excised = excise_positions(*item.cloud, p, ex.input.query, policy.excise_m);
    ex.input.cloud = &ex.excised->cloud;
  }
  return ex;
}

/// Brute-force check that none of the m nearest points of any selected
/// residue survives in the excised cloud.
inline bool excision_is_clean(const SurfacePointCloud& full, const SurfacePointCloud& excised, const Protein& p,
                              std::span<const int> selected, int m) {
  for (int q : selected) {
    std::vector<std::pair<double, Index>> d;
    for (Index i = 0; i < full.size(); ++i)
      d.emplace_back((full.points.row(i) - p.ca_coords.row(q)).squaredNorm(), i);
    std::sort(d.begin(), d.end());
    for (int r = 0; r < std::min<int>(m, static_cast<int>(d.size())); ++r)
      for (Index j = 0; j < excised.size(); ++j)
        if (excised.points.row(j) == full.points.row(d[static_cast<std::size_t>(r)].second)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Steps and epochs

struct StepResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double grad_norm = 0.0;
};

/// Seed of the masking stream for one protein at one step.
inline std::uint64_t example_seed(std::uint64_t seed, int epoch, std::int64_t step, std::size_t item) {
  return derive_seed(seed, {0x6d61736bULL, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step),
                            static_cast<std::uint64_t>(item)});
}

/// Forward/backward over the batch (optionally threaded, reduced in batch
/// order), clipping and one optimizer update. Returns batch-mean loss.
inline StepResult pretrain_step(Model& model, OptimizerState& opt, const std::vector<const TrainItem*>& batch,
                                const std::vector<std::uint64_t>& seeds, const TrainConfig& cfg,
                                bool check_leakage = false) {
  if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
  if (seeds.size() != batch.size()) throw std::invalid_argument("pretrain_step: one seed per batch item");
  std::vector<LossGrad> results(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  const auto work = [&](std::size_t i) {
    try {
      Rng rng(seeds[i]);
      const auto ex = make_example(*batch[i], model.config, cfg.masking, rng);
      if (check_leakage && ex.excised &&
          !excision_is_clean(*batch[i]->cloud, ex.excised->cloud, batch[i]->protein, ex.input.query,
                             cfg.masking.excise_m))
        throw NumericalError("leakage guard: excised cloud still holds points near a selected residue");
      results[i] = loss_and_gradients(model, ex.input, ex.targets);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  parallel_for(batch.size(), cfg.threads, work);
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const NumericalError& e) {
        throw NumericalError("protein " + batch[i]->protein.id + ": " + e.what());
      }
    }
  StepResult out;
  Gradients total;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& r : results) {
    out.loss += r.loss * inv;
    out.accuracy += r.accuracy * inv;
    for (const auto& [name, g] : r.grads) {
      auto& t = total[name];
      if (t.size() == 0) t = Matrix::Zero(g.rows(), g.cols());
      t += inv * g;
    }
  }
  if (!std::isfinite(out.loss)) throw NumericalError("non-finite batch loss");
  out.grad_norm = clip_gradients(total, cfg.grad_clip);
  if (!std::isfinite(out.grad_norm)) throw NumericalError("non-finite gradient norm");
  optimizer_step(model.params, total, opt, cfg);
  return out;
}

struct LossLogRow {
  int epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;
  double masked_acc = 0.0;
};

struct TrainState {
  Model model;
  OptimizerState optimizer;
  /// Number of completed epochs.
  int epoch = 0;
};

/// Called after each finished epoch with the 1-based epoch number.
using EpochCallback = std::function<void(const TrainState&, const std::vector<LossLogRow>&)>;

/// Runs epochs state.epoch .. cfg.epochs-1, appending one log row per step.
inline std::vector<LossLogRow> pretrain(TrainState& state, const std::vector<TrainItem>& corpus,
                                        const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (corpus.empty()) throw DataError("pretrain: empty corpus");
  std::vector<LossLogRow> log;
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(derive_seed(cfg.seed, {0x73687566ULL, static_cast<std::uint64_t>(epoch)}));
    shuffler.shuffle(order.begin(), order.end());
    std::int64_t step = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++step) {
      std::vector<const TrainItem*> batch;
      std::vector<std::uint64_t> seeds;
      for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++k) {
        batch.push_back(&corpus[order[k]]);
        seeds.push_back(example_seed(cfg.seed, epoch, step, order[k]));
      }
      const auto r = pretrain_step(state.model, state.optimizer, batch, seeds, cfg, cfg.check_leakage && step == 0);
      log.push_back({epoch + 1, step, r.loss, r.accuracy});
    }
    state.epoch = epoch + 1;
    if (on_epoch) on_epoch(state, log);
  }
  return log;
}

/// Masked loss and accuracy of the current model on one fixed masking draw
/// per protein, without updating anything.
inline StepResult evaluate_masked(const Model& model, const std::vector<TrainItem>& corpus, const MaskingPolicy& policy,
                                  std::uint64_t seed) {
  StepResult out;
  const double inv = 1.0 / static_cast<double>(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Rng rng(example_seed(seed, -1, 0, i));
    const auto ex = make_example(corpus[i], model.config, policy, rng);
    const Matrix lp = forward_log_probs(model, ex.input);
    double loss = 0.0;
    int hits = 0;
    for (Index r = 0; r < lp.rows(); ++r) {
      loss -= lp(r, ex.targets[static_cast<std::size_t>(r)]);
      Index arg = 0;
      lp.row(r).maxCoeff(&arg);
      hits += static_cast<int>(arg == ex.targets[static_cast<std::size_t>(r)]);
    }
    out.loss += inv * loss / static_cast<double>(lp.rows());
    out.accuracy += inv * hits / static_cast<double>(lp.rows());
  }
  return out;
}

inline std::string format_loss_log(const std::vector<LossLogRow>& rows, std::string_view header_comment = {}) {
  std::string out;
  if (!header_comment.empty()) out += "# " + std::string(header_comment) + "\n";
  out += "epoch,step,loss,masked_acc\n";
  for (const auto& r : rows)
    out += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + format_double(r.loss) + "," +
           format_double(r.masked_acc) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint round trip of the full training state

inline Checkpoint make_checkpoint(const TrainState& s, const TrainConfig& cfg, const nlohmann::json& extra = {}) {
  Checkpoint c;
  c.meta["model"] = s.model.config;
  c.meta["train"] = cfg;
  c.meta["epoch"] = s.epoch;
  c.meta["optimizer_step"] = s.optimizer.step;
  if (!extra.is_null()) c.meta["run"] = extra;
  for (const auto& [name, t] : s.model.params) c.tensors[name] = t;
  for (const auto& [name, t] : s.optimizer.m) c.tensors["optim.m." + name] = t;
  for (const auto& [name, t] : s.optimizer.v) c.tensors["optim.v." + name] = t;
  return c;
}

inline TrainState train_state_from_checkpoint(const Checkpoint& c) {
  TrainState s;
  s.model = model_from_checkpoint(c);
  s.epoch = c.meta.value("epoch", 0);
  s.optimizer.step = c.meta.value("optimizer_step", std::int64_t{0});
  for (const auto& [name, t] : c.tensors) {
    if (name.starts_with("optim.m.")) s.optimizer.m[name.substr(8)] = t;
    if (name.starts_with("optim.v.")) s.optimizer.v[name.substr(8)] = t;
  }
  return s;
}

}  // namespace s3f
