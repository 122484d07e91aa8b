#pragma once

// Training corpora on disk: one structure file per protein, optionally an
// embedding file "<stem>.s3fe" beside it and a cloud dump "<stem>.tsv" in a
// separate surface directory.

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "s3f/errors.hpp"
#include "s3f/model.hpp"
#include "s3f/protein_io.hpp"
#include "s3f/surface.hpp"
#include "s3f/training.hpp"

namespace s3f {

struct CorpusOptions {
  ModelConfig model;
  SurfaceConfig surface;
  /// Directory of precomputed cloud dumps; empty to generate surfaces.
  std::string surface_dir;
};

inline bool is_structure_file(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pdb" || ext == ".ent" || ext == ".tsv";
}

inline std::vector<std::filesystem::path> list_structures(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("corpus directory " + dir + " does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_structure_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("corpus directory " + dir + " holds no structure files");
  return out;
}

/// Surface cloud for one protein: the dump in `surface_dir` if present,
/// otherwise generated with `cfg`.
inline SurfacePointCloud cloud_for(const Protein& p, const std::string& stem, const CorpusOptions& opt) {
  namespace fs = std::filesystem;
  SurfacePointCloud c;
  if (!opt.surface_dir.empty() && fs::exists(fs::path(opt.surface_dir) / (stem + ".tsv"))) {
    const auto path = (fs::path(opt.surface_dir) / (stem + ".tsv")).string();
    c = parse_cloud(read_file(path), path);
  } else {
    c = build_surface(p, opt.surface);
  }
  if (c.features.cols() != opt.model.surface_feature_dim)
    throw DataError("surface of " + p.id + " has " + std::to_string(c.features.cols()) +
                    " feature columns, model expects " + std::to_string(opt.model.surface_feature_dim));
  return c;
}

/// Loads and validates every protein before any training starts.
inline std::vector<TrainItem> load_corpus(const std::string& dir, const CorpusOptions& opt) {
  std::vector<TrainItem> items;
  for (const auto& path : list_structures(dir)) {
    const auto stem = path.stem().string();
    auto p = read_structure(path.string());
    std::optional<ResidueEmbeddings> emb;
    const auto emb_path = path.parent_path() / (stem + ".s3fe");
    if (opt.model.embedder == EmbedderMode::file) {
      if (!std::filesystem::exists(emb_path))
        throw DataError("corpus: no embedding file " + emb_path.string() + " for " + path.string());
      emb = load_embeddings(emb_path.string());
    }
    std::optional<SurfacePointCloud> cloud;
    if (uses_surface(opt.model.mode)) cloud = cloud_for(p, stem, opt);
    items.push_back(make_train_item(std::move(p), opt.model, std::move(cloud), std::move(emb)));
  }
  return items;
}

}  // namespace s3f
