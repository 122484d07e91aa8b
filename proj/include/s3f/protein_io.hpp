#pragma once

// Ingestion of structures, mutation strings, residue embeddings, assay
// tables and external score files. All on-disk formats live here.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "s3f/csv.hpp"
#include "s3f/errors.hpp"
#include "s3f/residue.hpp"
#include "s3f/types.hpp"

namespace s3f {

struct Protein {
  std::string id;
  std::vector<int> sequence;
  Points ca_coords;
  std::vector<double> plddt;
  /// Residue-numbering origin applied to mutation strings.
  int chain_offset = 0;

  std::size_t size() const { return sequence.size(); }

  void validate() const {
    const auto n = sequence.size();
    if (static_cast<std::size_t>(ca_coords.rows()) != n || plddt.size() != n)
      throw DataError("protein " + id + ": sequence, coordinates and pLDDT lengths differ");
    for (int c : sequence)
      if (c < 0 || c >= kNumResidueTypes) throw DataError("protein " + id + ": residue code out of range");
    if (!ca_coords.allFinite()) throw DataError("protein " + id + ": non-finite coordinates");
    for (double p : plddt)
      if (!std::isfinite(p) || p < 0.0 || p > 100.0)
        throw DataError("protein " + id + ": pLDDT outside [0, 100]");
  }
};

enum class StructureFormat { pdb_min, tsv };

namespace detail {

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

inline std::vector<std::string_view> split_ws(std::string_view line, bool tabs_only) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  const auto is_sep = [&](char c) { return tabs_only ? c == '\t' : (c == ' ' || c == '\t'); };
  if (tabs_only) {
    std::size_t start = 0;
    for (i = 0; i <= line.size(); ++i) {
      if (i == line.size() || is_sep(line[i])) {
        out.push_back(trim(line.substr(start, i - start)));
        start = i + 1;
      }
    }
    return out;
  }
  while (i < line.size()) {
    while (i < line.size() && is_sep(line[i])) ++i;
    const auto start = i;
    while (i < line.size() && !is_sep(line[i])) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::string_view column(std::string_view line, std::size_t first, std::size_t last) {
  // 1-based inclusive PDB columns
  if (line.size() < first) return {};
  return line.substr(first - 1, std::min(last, line.size()) - first + 1);
}

inline Protein assemble(std::string id, std::vector<int> seq, std::vector<Vec3> coords,
                        std::vector<double> plddt) {
  if (seq.empty()) throw DataError("no alpha carbons in " + (id.empty() ? std::string("input") : id));
  Protein p;
  p.id = std::move(id);
  p.sequence = std::move(seq);
  p.ca_coords.resize(static_cast<Index>(coords.size()), 3);
  for (std::size_t i = 0; i < coords.size(); ++i) p.ca_coords.row(static_cast<Index>(i)) = coords[i];
  p.plddt = std::move(plddt);
  p.validate();
  return p;
}

inline Protein parse_pdb_min(std::string_view text, std::string id) {
  std::vector<int> seq;
  std::vector<Vec3> coords;
  std::vector<double> plddt;
  std::set<std::pair<long long, char>> seen;
  std::optional<char> chain;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto line = lines[ln];
    const auto where = [&] { return "line " + std::to_string(ln + 1); };
    if (line.starts_with("ENDMDL")) break;
    if (!line.starts_with("ATOM  ")) continue;
    if (trim(column(line, 13, 16)) != "CA") continue;
    const char alt = line.size() >= 17 ? line[16] : ' ';
    if (alt != ' ' && alt != 'A') continue;
    const char ch = line.size() >= 22 ? line[21] : ' ';
    if (!chain) chain = ch;
    if (ch != *chain) continue;
    if (line.size() < 54) throw DataError("truncated ATOM record at " + where());
    const auto name = trim(column(line, 18, 20));
    const auto code = residue_code3(name);
    if (!code) throw DataError("unknown residue code '" + std::string(name) + "' at " + where());
    const auto resseq = parse_int(column(line, 23, 26));
    if (!resseq) throw DataError("bad residue number at " + where());
    const char icode = line.size() >= 27 ? line[26] : ' ';
    if (!seen.insert({*resseq, icode}).second)
      throw DataError("duplicate residue index " + std::to_string(*resseq) + " at " + where());
    const auto x = parse_double(column(line, 31, 38));
    const auto y = parse_double(column(line, 39, 46));
    const auto z = parse_double(column(line, 47, 54));
    if (!x || !y || !z) throw DataError("bad coordinates at " + where());
    double b = 100.0;
    if (line.size() >= 61) {
      const auto bf = trim(column(line, 61, 66));
      if (!bf.empty()) {
        const auto v = parse_double(bf);
        if (!v) throw DataError("bad B-factor at " + where());
        b = *v;
      }
    }
    seq.push_back(*code);
    coords.emplace_back(*x, *y, *z);
    plddt.push_back(b);
  }
  return assemble(std::move(id), std::move(seq), std::move(coords), std::move(plddt));
}

inline Protein parse_tsv(std::string_view text, std::string id) {
  std::vector<int> seq;
  std::vector<Vec3> coords;
  std::vector<double> plddt;
  std::set<long long> seen;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto line = trim(lines[ln]);
    const auto where = [&] { return "line " + std::to_string(ln + 1); };
    if (line.empty() || line.front() == '#') continue;
    const auto f = split_ws(line, true);
    if (f.size() != 5 && f.size() != 6)
      throw DataError("expected 5 or 6 tab-separated columns at " + where());
    const auto idx = parse_int(f[0]);
    if (!idx) throw DataError("bad residue index at " + where());
    if (!seen.insert(*idx).second)
      throw DataError("duplicate residue index " + std::to_string(*idx) + " at " + where());
    if (f[1].size() != 1 || !residue_code(f[1][0]))
      throw DataError("unknown residue code '" + std::string(f[1]) + "' at " + where());
    const auto x = parse_double(f[2]);
    const auto y = parse_double(f[3]);
    const auto z = parse_double(f[4]);
    if (!x || !y || !z) throw DataError("bad coordinates at " + where());
    double p = 100.0;
    if (f.size() == 6) {
      const auto v = parse_double(f[5]);
      if (!v) throw DataError("bad pLDDT at " + where());
      p = *v;
    }
    seq.push_back(*residue_code(f[1][0]));
    coords.emplace_back(*x, *y, *z);
    plddt.push_back(p);
  }
  return assemble(std::move(id), std::move(seq), std::move(coords), std::move(plddt));
}

}  // namespace detail

/// Decodes a structure. pdb-min keeps ATOM records named CA from the first
/// chain and first model; everything else is ignored. The B-factor column
/// becomes pLDDT (100 when absent).
inline Protein parse_structure(std::string_view bytes, StructureFormat format, std::string id = {}) {
  return format == StructureFormat::pdb_min ? detail::parse_pdb_min(bytes, std::move(id))
                                            : detail::parse_tsv(bytes, std::move(id));
}

inline StructureFormat format_from_path(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".pdb" || ext == ".ent") return StructureFormat::pdb_min;
  if (ext == ".tsv" || ext == ".txt") return StructureFormat::tsv;
  throw DataError("cannot infer structure format from " + path + " (expected .pdb or .tsv)");
}

inline Protein read_structure(const std::string& path, std::optional<StructureFormat> format = {}) {
  const auto fmt = format ? *format : format_from_path(path);
  const auto text = read_file(path);
  try {
    return parse_structure(text, fmt, std::filesystem::path(path).stem().string());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// tsv writer; coordinates use the shortest round-trip decimal form so that
/// parse_structure(serialize_tsv(p)) reproduces p exactly.
inline std::string serialize_tsv(const Protein& p) {
  std::string out = "# index\tresidue\tx\ty\tz\tplddt\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto r = static_cast<Index>(i);
    out += std::to_string(i + 1);
    out += '\t';
    out += residue_letter(p.sequence[i]);
    for (int c = 0; c < 3; ++c) {
      out += '\t';
      out += format_double(p.ca_coords(r, c));
    }
    out += '\t';
    out += format_double(p.plddt[i]);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mutations

struct Site {
  int position = 0;  ///< 0-based residue index
  int wt = 0;
  int mt = 0;
  friend bool operator==(const Site&, const Site&) = default;
};

struct MutationSet {
  std::vector<Site> sites;

  std::vector<int> positions() const {
    std::vector<int> out;
    out.reserve(sites.size());
    for (const auto& s : sites) out.push_back(s.position);
    return out;
  }
  bool empty() const { return sites.empty(); }
  friend bool operator==(const MutationSet&, const MutationSet&) = default;
};

/// Wild-type rows in assay files carry one of these instead of tokens.
inline bool is_wild_type_token(std::string_view text) {
  const auto t = trim(text);
  return t.empty() || t == "WT" || t == "wt" || t == "_wt" || t == "wildtype";
}

/// Parses "<WT><pos><MT>[:...]" with 1-based positions shifted by offset.
/// When a sequence is given the wild-type letters and ranges are checked.
inline MutationSet parse_mutation(std::string_view text, int offset,
                                  std::span<const int> sequence = {}) {
  MutationSet out;
  if (is_wild_type_token(text)) return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(':', start);
    if (end == std::string_view::npos) end = text.size();
    const auto tok = trim(text.substr(start, end - start));
    start = end + 1;
    if (tok.size() < 3) throw DataError("malformed mutation token '" + std::string(tok) + "'");
    const auto wt = residue_code(tok.front());
    const auto mt = residue_code(tok.back());
    const auto pos = parse_int(tok.substr(1, tok.size() - 2));
    if (!wt || !mt || !pos) throw DataError("malformed mutation token '" + std::string(tok) + "'");
    if (*wt == *mt) throw DataError("mutation token '" + std::string(tok) + "' has identical wild-type and mutant");
    const long long index = *pos - 1 - offset;
    if (index < 0) throw DataError("mutation token '" + std::string(tok) + "' maps before residue 1");
    if (!sequence.empty()) {
      if (index >= static_cast<long long>(sequence.size()))
        throw DataError("mutation token '" + std::string(tok) + "' is beyond the sequence end");
      if (sequence[static_cast<std::size_t>(index)] != *wt)
        throw DataError("wild-type mismatch at position " + std::to_string(*pos) + ": sequence has " +
                        residue_letter(sequence[static_cast<std::size_t>(index)]) + ", token says " +
                        tok.front());
    }
    out.sites.push_back({static_cast<int>(index), *wt, *mt});
    if (end == text.size()) break;
  }
  std::sort(out.sites.begin(), out.sites.end(),
            [](const Site& a, const Site& b) { return a.position < b.position; });
  for (std::size_t i = 1; i < out.sites.size(); ++i)
    if (out.sites[i].position == out.sites[i - 1].position)
      throw DataError("duplicate mutation position in '" + std::string(text) + "'");
  return out;
}

inline std::string format_site(const Site& s, int offset) {
  return std::string(1, residue_letter(s.wt)) + std::to_string(s.position + 1 + offset) + residue_letter(s.mt);
}

inline std::string format_mutation(const MutationSet& m, int offset) {
  std::string out;
  for (const auto& s : m.sites) {
    if (!out.empty()) out += ':';
    out += format_site(s, offset);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Residue embeddings ("S3FE" binary format)

struct ResidueEmbeddings {
  Matrix rows;
  /// Which positions were masked when the rows were produced; see mask_tag().
  std::string context_tag;

  Index dim() const { return rows.cols(); }
};

/// Canonical context tag for a set of masked positions ("" when none).
inline std::string mask_tag(std::span<const int> positions) {
  if (positions.empty()) return {};
  std::vector<int> sorted(positions.begin(), positions.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::string out = "mask=";
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(sorted[i]);
  }
  return out;
}

/// Inverse of mask_tag; returns nullopt for tags not in canonical form.
inline std::optional<std::vector<int>> parse_mask_tag(std::string_view tag) {
  std::vector<int> out;
  if (tag.empty()) return out;
  if (!tag.starts_with("mask=")) return std::nullopt;
  tag.remove_prefix(5);
  std::size_t start = 0;
  while (start <= tag.size()) {
    auto end = tag.find(',', start);
    if (end == std::string_view::npos) end = tag.size();
    const auto v = parse_int(tag.substr(start, end - start));
    if (!v || *v < 0) return std::nullopt;
    out.push_back(static_cast<int>(*v));
    start = end + 1;
    if (end == tag.size()) break;
  }
  return out;
}

namespace detail {

inline constexpr char kEmbeddingMagic[4] = {'S', '3', 'F', 'E'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

inline float get_f32(std::string_view in, std::size_t at) { return std::bit_cast<float>(get_u32(in, at)); }

}  // namespace detail

/// Layout: "S3FE", u32 version, u32 n_r, u32 dim, n_r*dim f32 (row-major),
/// then optionally u32 tag length + UTF-8 tag bytes. Little-endian.
inline std::string encode_embeddings(const ResidueEmbeddings& e) {
  std::string out(detail::kEmbeddingMagic, 4);
  detail::put_u32(out, detail::kEmbeddingVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(e.rows.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(e.rows.cols()));
  for (Index i = 0; i < e.rows.rows(); ++i)
    for (Index j = 0; j < e.rows.cols(); ++j) detail::put_f32(out, static_cast<float>(e.rows(i, j)));
  if (!e.context_tag.empty()) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.context_tag.size()));
    out += e.context_tag;
  }
  return out;
}

inline ResidueEmbeddings decode_embeddings(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), detail::kEmbeddingMagic, 4) != 0)
    throw DataError("embedding file: magic mismatch");
  const auto version = detail::get_u32(bytes, 4);
  if (version != detail::kEmbeddingVersion)
    throw DataError("embedding file: unsupported version " + std::to_string(version));
  const std::uint64_t n = detail::get_u32(bytes, 8);
  const std::uint64_t dim = detail::get_u32(bytes, 12);
  if (dim == 0) throw DataError("embedding file: zero dimension");
  const std::uint64_t payload = n * dim * 4;
  if (bytes.size() < 16 + payload) throw DataError("embedding file: payload size mismatch");
  ResidueEmbeddings e;
  e.rows.resize(static_cast<Index>(n), static_cast<Index>(dim));
  std::size_t at = 16;
  for (Index i = 0; i < e.rows.rows(); ++i)
    for (Index j = 0; j < e.rows.cols(); ++j, at += 4) {
      const float v = detail::get_f32(bytes, at);
      if (!std::isfinite(v)) throw DataError("embedding file: non-finite value");
      e.rows(i, j) = v;
    }
  const auto rest = bytes.size() - at;
  if (rest != 0) {
    if (rest < 4) throw DataError("embedding file: payload size mismatch");
    const auto len = detail::get_u32(bytes, at);
    if (rest != 4 + static_cast<std::size_t>(len)) throw DataError("embedding file: payload size mismatch");
    e.context_tag = std::string(bytes.substr(at + 4, len));
  }
  return e;
}

inline ResidueEmbeddings load_embeddings(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return decode_embeddings(bytes);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline void save_embeddings(const std::string& path, const ResidueEmbeddings& e) {
  write_file(path, encode_embeddings(e));
}

// ---------------------------------------------------------------------------
// Assay tables and external scores

struct AssayVariant {
  std::string mutant;
  double dms_score = 0.0;
  std::optional<int> dms_bin;
};

struct AssayTable {
  std::string protein_id;
  std::vector<AssayVariant> variants;
  /// Remaining CSV columns by name, one entry per variant (used for grouping).
  std::map<std::string, std::vector<std::string>> extra;

  bool has_bins() const { return !variants.empty() && variants.front().dms_bin.has_value(); }
};

inline AssayTable parse_assay(std::string_view text, const std::string& origin = "<assay>") {
  const auto csv = parse_csv(text, origin);
  const auto mut_col = csv.column("mutant");
  const auto score_col = csv.column("DMS_score");
  if (!mut_col) throw DataError(origin + ": missing column 'mutant'");
  if (!score_col) throw DataError(origin + ": missing column 'DMS_score'");
  const auto bin_col = csv.column("DMS_score_bin");
  AssayTable table;
  table.protein_id = std::filesystem::path(origin).stem().string();
  for (std::size_t c = 0; c < csv.header.size(); ++c)
    if (c != *mut_col && c != *score_col && (!bin_col || c != *bin_col)) table.extra[csv.header[c]] = {};
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const auto where = origin + ":" + std::to_string(csv.line_numbers[r]);
    AssayVariant v;
    v.mutant = row[*mut_col];
    const auto s = parse_double(row[*score_col]);
    if (!s || !std::isfinite(*s)) throw DataError(where + ": unparseable DMS_score '" + row[*score_col] + "'");
    v.dms_score = *s;
    if (bin_col) {
      const auto b = parse_double(row[*bin_col]);
      if (!b || (*b != 0.0 && *b != 1.0))
        throw DataError(where + ": DMS_score_bin must be 0 or 1, found '" + row[*bin_col] + "'");
      v.dms_bin = static_cast<int>(*b);
    }
    table.variants.push_back(std::move(v));
    for (std::size_t c = 0; c < csv.header.size(); ++c)
      if (auto it = table.extra.find(csv.header[c]); it != table.extra.end()) it->second.push_back(row[c]);
  }
  return table;
}

inline AssayTable load_assay(const std::string& path) { return parse_assay(read_file(path), path); }

inline std::string serialize_assay(const AssayTable& t) {
  std::string out = t.has_bins() ? "mutant,DMS_score,DMS_score_bin\n" : "mutant,DMS_score\n";
  for (const auto& v : t.variants) {
    out += csv_escape(v.mutant) + "," + format_double(v.dms_score);
    if (v.dms_bin) out += "," + std::to_string(*v.dms_bin);
    out += '\n';
  }
  return out;
}

/// Reads `mutant,score` (extra columns allowed). Duplicate keys are rejected.
inline std::map<std::string, double> parse_external_scores(std::string_view text,
                                                           const std::string& origin = "<scores>",
                                                           std::string_view score_column = "score") {
  const auto csv = parse_csv(text, origin);
  const auto mut_col = csv.column("mutant");
  const auto score_col = csv.column(score_column);
  if (!mut_col || !score_col)
    throw DataError(origin + ": expected columns 'mutant' and '" + std::string(score_column) + "'");
  std::map<std::string, double> out;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const auto where = origin + ":" + std::to_string(csv.line_numbers[r]);
    const auto s = parse_double(row[*score_col]);
    if (!s || !std::isfinite(*s)) throw DataError(where + ": unparseable score '" + row[*score_col] + "'");
    if (!out.emplace(row[*mut_col], *s).second)
      throw DataError(where + ": duplicate mutant '" + row[*mut_col] + "'");
  }
  return out;
}

inline std::map<std::string, double> load_external_scores(const std::string& path,
                                                          std::string_view score_column = "score") {
  return parse_external_scores(read_file(path), path, score_column);
}

}  // namespace s3f
