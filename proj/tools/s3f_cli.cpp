// s3f: surface, pretrain, score, eval and embed-pack commands.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "s3f/checkpoint.hpp"
#include "s3f/config.hpp"
#include "s3f/corpus.hpp"
#include "s3f/eval.hpp"
#include "s3f/scoring.hpp"
#include "s3f/surface.hpp"
#include "s3f/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace s3f;

namespace {

struct GlobalFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<bool> deterministic;
  std::optional<std::string> mode;
};

json global_defaults() { return {{"seed", 0}, {"threads", 1}, {"deterministic", true}, {"mode", "s3f"}}; }

/// defaults < config file < flags for the "global" section; other sections
/// are layered by each command once their defaults are known.
json resolve_global(const GlobalFlags& g, const json& file) {
  json out = global_defaults();
  if (file.contains("global")) overlay(out, file["global"], ".global");
  if (g.seed) out["seed"] = *g.seed;
  if (g.threads) out["threads"] = *g.threads;
  if (g.deterministic) out["deterministic"] = *g.deterministic;
  if (g.mode) out["mode"] = *g.mode;
  parse_mode(out["mode"].get<std::string>());
  if (out["threads"].get<int>() < 1) throw ConfigError("--threads must be >= 1");
  return out;
}

json section_from_file(const json& file, const std::string& key, json defaults) {
  if (file.contains(key)) overlay(defaults, file[key], "." + key);
  return defaults;
}

std::string header_line(const json& resolved) {
  return "config_hash=" + config_hash(resolved) + " config=" + resolved.dump();
}

// ---------------------------------------------------------------------------
// surface

struct SurfaceFlags {
  std::string structure, out;
  bool paper_scale = false;
  std::optional<int> min_points, max_points;
};

json resolve_surface_section(const json& file, const json& global, bool paper_scale, std::optional<int> min_points,
                             std::optional<int> max_points, json base = nullptr) {
  json s = base.is_null() ? json(paper_scale ? SurfaceConfig::paper_scale() : SurfaceConfig{}) : base;
  if (paper_scale && !base.is_null()) {
    const auto p = SurfaceConfig::paper_scale();
    s["min_points"] = p.min_points;
    s["max_points"] = p.max_points;
    s["max_rounds"] = p.max_rounds;
    s["seeds_per_atom"] = p.seeds_per_atom;
    s["spacing"] = p.spacing;
  }
  s = section_from_file(file, "surface", s);
  s["seed"] = global["seed"];
  if (min_points) s["min_points"] = *min_points;
  if (max_points) s["max_points"] = *max_points;
  config_section<SurfaceConfig>(json{{"s", s}}, "s").validate();
  return s;
}

int cmd_surface(const GlobalFlags& g, const SurfaceFlags& f) {
  const json file = g.config_path.empty() ? json::object() : load_config_file(g.config_path);
  json resolved;
  resolved["global"] = resolve_global(g, file);
  resolved["surface"] = resolve_surface_section(file, resolved["global"], f.paper_scale, f.min_points, f.max_points);
  const auto cfg = config_section<SurfaceConfig>(resolved, "surface");
  const auto protein = read_structure(f.structure);
  SurfacePointCloud cloud;
  try {
    cloud = build_surface(protein, cfg);
  } catch (const DataError& e) {
    throw DataError(f.structure + ": " + e.what());
  }
  write_file(f.out, serialize_cloud(cloud, header_line(resolved)));
  std::cerr << "surface: " << cloud.size() << " points for " << protein.id << " -> " << f.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainFlags {
  std::string corpus, out, log, resume, surface_dir;
  std::optional<int> epochs, batch_size, checkpoint_every, scalar_dim, vector_dim, layers, surface_layers, hidden,
      embed_dim, min_points, max_points;
  std::optional<double> lr;
  std::optional<std::string> embedder;
  bool sgd = false;
  bool no_block_norm = false;
  bool paper_scale = false;
};

int cmd_pretrain(const GlobalFlags& g, const PretrainFlags& f) {
  const json file = g.config_path.empty() ? json::object() : load_config_file(g.config_path);
  json resolved;
  resolved["global"] = resolve_global(g, file);
  const auto& glob = resolved["global"];
  const Mode mode = parse_mode(glob["mode"].get<std::string>());

  std::optional<TrainState> resumed;
  if (!f.resume.empty()) resumed = train_state_from_checkpoint(load_checkpoint(f.resume));

  resolved["surface"] = resolve_surface_section(file, glob, f.paper_scale, f.min_points, f.max_points);
  const auto surface = config_section<SurfaceConfig>(resolved, "surface");

  json model = resumed ? json(resumed->model.config) : json(ModelConfig{});
  model = section_from_file(file, "model", model);
  model["mode"] = mode;
  model["surface_feature_dim"] = surface.feature_dim();
  if (f.scalar_dim) model["scalar_dim"] = *f.scalar_dim;
  if (f.vector_dim) model["vector_dim"] = *f.vector_dim;
  if (f.layers) model["structure_layers"] = *f.layers;
  if (f.surface_layers) model["surface_layers"] = *f.surface_layers;
  if (f.hidden) model["mlp_hidden"] = *f.hidden;
  if (f.embed_dim) model["embed_dim"] = *f.embed_dim;
  if (f.embedder) model["embedder"] = *f.embedder;
  if (f.no_block_norm) model["block_norm"] = false;
  resolved["model"] = model;
  const auto mcfg = config_section<ModelConfig>(resolved, "model");
  mcfg.validate();
  if (resumed && json(resumed->model.config) != json(mcfg))
    throw ConfigError("--resume: model configuration differs from the checkpoint");

  json train = json(TrainConfig::paper_scale(mode));
  train = section_from_file(file, "train", train);
  train["seed"] = glob["seed"];
  train["threads"] = glob["threads"];
  train["deterministic"] = glob["deterministic"];
  if (f.epochs) train["epochs"] = *f.epochs;
  if (f.batch_size) train["batch_size"] = *f.batch_size;
  if (f.lr) train["learning_rate"] = *f.lr;
  if (f.sgd) train["optimizer"] = OptimizerKind::sgd;
  if (f.checkpoint_every) train["checkpoint_every"] = *f.checkpoint_every;
  resolved["train"] = train;
  const auto tcfg = config_section<TrainConfig>(resolved, "train");
  tcfg.validate();

  const auto hash = config_hash(resolved);
  CorpusOptions copt{mcfg, surface, f.surface_dir};
  const auto corpus = load_corpus(f.corpus, copt);
  std::cerr << "pretrain: " << corpus.size() << " proteins, mode " << to_string(mode) << ", config " << hash << "\n";

  TrainState state;
  if (resumed) {
    state = std::move(*resumed);
  } else {
    state.model = init_model(mcfg, glob["seed"].get<std::uint64_t>());
  }
  const json run = {{"config", resolved}, {"config_hash", hash}};
  std::vector<LossLogRow> log_rows;
  const auto write_log = [&](const std::vector<LossLogRow>& rows) {
    if (!f.log.empty()) write_file(f.log, format_loss_log(rows, header_line(resolved)));
  };
  const auto on_epoch = [&](const TrainState& s, const std::vector<LossLogRow>& rows) {
    if (!rows.empty())
      std::cerr << "epoch " << s.epoch << " loss " << rows.back().loss << " acc " << rows.back().masked_acc << "\n";
    write_log(rows);
    if (tcfg.checkpoint_every > 0 && s.epoch % tcfg.checkpoint_every == 0 && s.epoch < tcfg.epochs)
      save_checkpoint(f.out + ".epoch" + std::to_string(s.epoch), make_checkpoint(s, tcfg, run));
  };
  log_rows = pretrain(state, corpus, tcfg, on_epoch);
  write_log(log_rows);
  save_checkpoint(f.out, make_checkpoint(state, tcfg, run));
  std::cerr << "pretrain: wrote " << f.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// score

struct ScoreFlags {
  std::string checkpoint, structure, assay, embeddings, cloud, baseline, ensemble, out;
  std::optional<double> plddt_threshold;
  bool per_site_gating = false;
};

std::map<std::string, ResidueEmbeddings> load_embedding_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("embedding directory " + dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".s3fe") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::map<std::string, ResidueEmbeddings> out;
  for (const auto& p : files) {
    auto e = load_embeddings(p.string());
    const auto tag = e.context_tag;
    if (!out.emplace(tag, std::move(e)).second)
      throw DataError("embedding directory " + dir + ": two files share context '" + tag + "'");
  }
  return out;
}

int cmd_score(const GlobalFlags& g, const ScoreFlags& f) {
  const json file = g.config_path.empty() ? json::object() : load_config_file(g.config_path);
  const auto ckpt = load_checkpoint(f.checkpoint);
  const auto model = model_from_checkpoint(ckpt);

  GlobalFlags gg = g;
  if (!gg.mode) gg.mode = to_string(model.config.mode);
  json resolved;
  resolved["global"] = resolve_global(gg, file);
  if (parse_mode(resolved["global"]["mode"].get<std::string>()) != model.config.mode)
    throw ConfigError("--mode " + resolved["global"]["mode"].get<std::string>() + " does not match checkpoint mode " +
                      to_string(model.config.mode));
  json surface_base = nullptr;
  if (ckpt.meta.contains("run") && ckpt.meta["run"].contains("config") && ckpt.meta["run"]["config"].contains("surface"))
    surface_base = ckpt.meta["run"]["config"]["surface"];
  resolved["surface"] = resolve_surface_section(file, resolved["global"], false, std::nullopt, std::nullopt, surface_base);
  json score = {{"plddt_threshold", 70.0}, {"per_site_gating", false}, {"excise_m", 20}};
  if (ckpt.meta.contains("train")) score["excise_m"] = ckpt.meta["train"].value("masking", json::object()).value("excise_m", 20);
  score = section_from_file(file, "score", score);
  if (f.plddt_threshold) score["plddt_threshold"] = *f.plddt_threshold;
  if (f.per_site_gating) score["per_site_gating"] = true;
  resolved["score"] = score;
  resolved["checkpoint"] = ckpt.meta.value("run", json::object()).value("config_hash", "");

  ScoreConfig scfg;
  scfg.plddt_threshold = score["plddt_threshold"].get<double>();
  scfg.per_site_gating = score["per_site_gating"].get<bool>();
  scfg.excise_m = score["excise_m"].get<int>();
  scfg.threads = resolved["global"]["threads"].get<int>();

  const auto protein = read_structure(f.structure);
  const auto assay = load_assay(f.assay);

  std::optional<SurfacePointCloud> cloud;
  if (uses_surface(model.config.mode)) {
    if (!f.cloud.empty()) {
      cloud = parse_cloud(read_file(f.cloud), f.cloud);
    } else {
      cloud = build_surface(protein, config_section<SurfaceConfig>(resolved, "surface"));
    }
  }

  std::map<std::string, ResidueEmbeddings> emb;
  if (model.config.embedder == EmbedderMode::file) {
    if (f.embeddings.empty()) throw ConfigError("checkpoint uses file embeddings; pass --embeddings DIR");
    emb = load_embedding_dir(f.embeddings);
  }
  const EmbeddingProvider provider = [&](const std::vector<int>& pos) -> const ResidueEmbeddings* {
    const auto tag = mask_tag(pos);
    const auto it = emb.find(tag);
    if (it == emb.end()) throw DataError("no embedding file with context '" + tag + "' in " + f.embeddings);
    return &it->second;
  };

  std::optional<BaselineScores> baseline;
  if (!f.baseline.empty()) baseline = load_external_scores(f.baseline);
  const auto scores = score_assay(model, protein, assay, provider, cloud ? &*cloud : nullptr,
                                  baseline ? &*baseline : nullptr, scfg);

  std::vector<double> ens;
  if (!f.ensemble.empty()) {
    const auto ext = load_external_scores(f.ensemble);
    std::vector<double> a, b;
    for (const auto& s : scores) {
      const auto it = ext.find(s.mutant);
      if (it == ext.end()) throw DataError(f.ensemble + ": no score for '" + s.mutant + "'");
      a.push_back(s.score);
      b.push_back(it->second);
    }
    ens = ensemble_zscores(a, b);
  }

  std::string out = "# " + header_line(resolved) + "\n";
  out += ens.empty() ? "mutant,score,provenance\n" : "mutant,score,provenance,ensemble_score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out += csv_escape(scores[i].mutant) + "," + format_double(scores[i].score) + "," + to_string(scores[i].provenance);
    if (!ens.empty()) out += "," + format_double(ens[i]);
    out += "\n";
  }
  write_file(f.out, out);
  std::cerr << "score: " << scores.size() << " variants -> " << f.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalFlags {
  std::vector<std::string> scores, assays, compare;
  std::string out, format, group_by, score_column = "score";
  std::optional<int> bootstrap;
};

std::vector<double> aligned_scores(const std::string& path, const std::string& column, const AssayTable& assay) {
  const auto m = load_external_scores(path, column);
  std::vector<double> out;
  for (const auto& v : assay.variants) {
    const auto it = m.find(v.mutant);
    if (it == m.end()) throw DataError(path + ": no score for assay variant '" + v.mutant + "'");
    out.push_back(it->second);
  }
  return out;
}

int cmd_eval(const GlobalFlags& g, const EvalFlags& f) {
  const json file = g.config_path.empty() ? json::object() : load_config_file(g.config_path);
  json resolved;
  resolved["global"] = resolve_global(g, file);
  json ev = {{"group_by", ""}, {"bootstrap", 10000}, {"score_column", "score"}};
  ev = section_from_file(file, "eval", ev);
  if (!f.group_by.empty()) ev["group_by"] = f.group_by;
  if (f.bootstrap) ev["bootstrap"] = *f.bootstrap;
  if (f.score_column != "score") ev["score_column"] = f.score_column;
  resolved["eval"] = ev;

  if (f.scores.size() != f.assays.size())
    throw ConfigError("--scores and --assay must be given the same number of times");
  if (!f.compare.empty() && f.compare.size() != f.scores.size())
    throw ConfigError("--compare needs one file per --scores file");
  const auto column = ev["score_column"].get<std::string>();
  std::vector<ScoredAssay> a, b;
  for (std::size_t i = 0; i < f.scores.size(); ++i) {
    auto assay = load_assay(f.assays[i]);
    const auto id = fs::path(f.assays[i]).stem().string();
    a.push_back({id, assay, aligned_scores(f.scores[i], column, assay)});
    if (!f.compare.empty()) b.push_back({id, assay, aligned_scores(f.compare[i], column, assay)});
  }
  auto report = evaluate_assays(a, ev["group_by"].get<std::string>());
  if (!b.empty()) {
    const auto rb = evaluate_assays(b);
    std::vector<double> sa, sb;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sa.push_back(report.rows[i].spearman);
      sb.push_back(rb.rows[i].spearman);
    }
    add_significance(report, "scores-compare", sa, sb, ev["bootstrap"].get<int>(),
                     resolved["global"]["seed"].get<std::uint64_t>());
  }
  report.comments.push_back(header_line(resolved));
  const auto fmt = !f.format.empty() ? f.format : (fs::path(f.out).extension() == ".json" ? "json" : "csv");
  if (fmt == "json")
    write_file(f.out, report_to_json(report).dump(2) + "\n");
  else if (fmt == "csv")
    write_file(f.out, report_to_csv(report));
  else
    throw ConfigError("--format must be csv or json");
  if (const auto* agg = report.find("aggregate"))
    std::cerr << "eval: " << a.size() << " assays, mean spearman " << agg->spearman << " -> " << f.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// embed-pack

struct PackFlags {
  std::string in, out, tag;
  std::vector<int> mask;
};

int cmd_embed_pack(const PackFlags& f) {
  const auto text = read_file(f.in);
  std::vector<std::vector<double>> rows;
  std::size_t ln = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const auto line = trim(std::string_view(text).substr(start, end - start));
    start = end + 1;
    ++ln;
    if (line.empty() || line.front() == '#') continue;
    std::vector<double> r;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == ',')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != ',') ++j;
      if (j > i) {
        const auto v = parse_double(line.substr(i, j - i));
        if (!v || !std::isfinite(*v)) throw DataError(f.in + ":" + std::to_string(ln) + ": bad number");
        r.push_back(*v);
      }
      i = j;
    }
    if (!rows.empty() && r.size() != rows.front().size())
      throw DataError(f.in + ":" + std::to_string(ln) + ": row width differs from the first row");
    rows.push_back(std::move(r));
  }
  if (rows.empty() || rows.front().empty()) throw DataError(f.in + ": no embedding rows");
  ResidueEmbeddings e;
  e.rows.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) e.rows(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  if (!f.tag.empty() && !f.mask.empty()) throw ConfigError("use either --tag or --mask, not both");
  if (!f.mask.empty()) {
    std::vector<int> zero_based;
    for (int p : f.mask) {
      if (p < 1 || p > static_cast<int>(rows.size())) throw ConfigError("--mask position out of range");
      zero_based.push_back(p - 1);
    }
    e.context_tag = mask_tag(zero_based);
  } else {
    if (!parse_mask_tag(f.tag)) throw ConfigError("--tag must look like 'mask=0,5' (0-based positions)");
    e.context_tag = f.tag;
  }
  save_embeddings(f.out, e);
  std::cerr << "embed-pack: " << e.rows.rows() << "x" << e.rows.cols() << " -> " << f.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s3f: multi-scale protein fitness model"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "s3f 1.0");

  GlobalFlags g;
  const auto add_global = [&](CLI::App* c) {
    c->add_option("--config", g.config_path, "JSON config file (overrides defaults, overridden by flags)");
    c->add_option("--seed", g.seed, "Random seed");
    c->add_option("--threads", g.threads, "Worker threads");
    c->add_option("--deterministic", g.deterministic, "Fixed-order reductions (true/false)");
    c->add_option("--mode", g.mode, "s2f, s3f or surf_only");
  };

  SurfaceFlags sf;
  auto* surface = app.add_subcommand("surface", "Generate a surface point cloud with features");
  add_global(surface);
  surface->add_option("structure", sf.structure, "Structure file (.pdb or .tsv)")->required();
  surface->add_option("-o,--out", sf.out, "Output cloud dump (tsv)")->required();
  surface->add_flag("--paper-scale", sf.paper_scale, "Use the 6000-20000 point budget");
  surface->add_option("--min-points", sf.min_points);
  surface->add_option("--max-points", sf.max_points);

  PretrainFlags pf;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Masked-residue pre-training on a corpus directory");
  add_global(pretrain_cmd);
  pretrain_cmd->add_option("corpus", pf.corpus, "Directory of structures (+ <stem>.s3fe embeddings)")->required();
  pretrain_cmd->add_option("-o,--out", pf.out, "Final checkpoint path")->required();
  pretrain_cmd->add_option("--log", pf.log, "Loss log CSV");
  pretrain_cmd->add_option("--resume", pf.resume, "Continue from a checkpoint");
  pretrain_cmd->add_option("--surface-dir", pf.surface_dir, "Precomputed cloud dumps named <stem>.tsv");
  pretrain_cmd->add_option("--epochs", pf.epochs);
  pretrain_cmd->add_option("--batch-size", pf.batch_size);
  pretrain_cmd->add_option("--lr", pf.lr);
  pretrain_cmd->add_flag("--sgd", pf.sgd, "Plain SGD instead of Adam");
  pretrain_cmd->add_option("--checkpoint-every", pf.checkpoint_every, "Also write <out>.epochN every N epochs");
  pretrain_cmd->add_option("--scalar-dim", pf.scalar_dim);
  pretrain_cmd->add_option("--vector-dim", pf.vector_dim);
  pretrain_cmd->add_option("--layers", pf.layers, "Structure GVP layers");
  pretrain_cmd->add_option("--surface-layers", pf.surface_layers);
  pretrain_cmd->add_option("--hidden", pf.hidden, "Hidden width of the surface init perceptrons");
  pretrain_cmd->add_option("--embed-dim", pf.embed_dim);
  pretrain_cmd->add_option("--embedder", pf.embedder, "toy or file");
  pretrain_cmd->add_flag("--no-block-norm", pf.no_block_norm);
  pretrain_cmd->add_flag("--paper-scale", pf.paper_scale, "Use the 6000-20000 point surface budget");
  pretrain_cmd->add_option("--min-points", pf.min_points);
  pretrain_cmd->add_option("--max-points", pf.max_points);

  ScoreFlags scf;
  auto* score = app.add_subcommand("score", "Score an assay's variants with a trained checkpoint");
  add_global(score);
  score->add_option("--checkpoint", scf.checkpoint)->required();
  score->add_option("--structure", scf.structure)->required();
  score->add_option("--assay", scf.assay)->required();
  score->add_option("-o,--out", scf.out)->required();
  score->add_option("--embeddings", scf.embeddings, "Directory of .s3fe files (file embedder)");
  score->add_option("--cloud", scf.cloud, "Precomputed cloud dump");
  score->add_option("--baseline", scf.baseline, "Baseline scores CSV (mutant,score)");
  score->add_option("--ensemble", scf.ensemble, "External scores CSV to z-score ensemble with");
  score->add_option("--plddt-threshold", scf.plddt_threshold);
  score->add_flag("--per-site-gating", scf.per_site_gating);

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Metric report for scored assays");
  add_global(eval);
  eval->add_option("--scores", ef.scores, "Scores CSV, one per assay")->required();
  eval->add_option("--assay", ef.assays, "Assay CSV, aligned with --scores")->required();
  eval->add_option("--compare", ef.compare, "Second model's scores for the significance row");
  eval->add_option("--bootstrap", ef.bootstrap, "Bootstrap resamples (default 10000)");
  eval->add_option("--group-by", ef.group_by, "'depth' or an assay column");
  eval->add_option("--score-column", ef.score_column);
  eval->add_option("--format", ef.format, "csv or json (default from extension)");
  eval->add_option("-o,--out", ef.out)->required();

  PackFlags kf;
  auto* pack = app.add_subcommand("embed-pack", "Convert a text matrix to an .s3fe embedding file");
  pack->add_option("input", kf.in, "Whitespace or comma separated rows")->required();
  pack->add_option("-o,--out", kf.out)->required();
  pack->add_option("--tag", kf.tag, "Context tag, e.g. mask=3,7 (0-based)");
  pack->add_option("--mask", kf.mask, "Masked residues, 1-based");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*surface) return cmd_surface(g, sf);
    if (*pretrain_cmd) return cmd_pretrain(g, pf);
    if (*score) return cmd_score(g, scf);
    if (*eval) return cmd_eval(g, ef);
    if (*pack) return cmd_embed_pack(kf);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const json::exception& e) {
    std::cerr << "error: configuration: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
