#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <map>

#include "s3f/protein_io.hpp"
#include "s3f/rng.hpp"
#include "support/toy.hpp"

using namespace s3f;

namespace {

std::string atom_line(int serial, const std::string& name, const std::string& res, char chain, int seq, double x,
                      double y, double z, double b, char alt = ' ') {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "ATOM  %5d %-4s%c%3s %c%4d    %8.3f%8.3f%8.3f%6.2f%6.2f           %c", serial,
                name.c_str(), alt, res.c_str(), chain, seq, x, y, z, 1.0, b, name[0]);
  return buf;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("s3f_test_" + name)).string();
}

}  // namespace

TEST(ParseStructure, SingleCaRecord) {
  const auto text = atom_line(1, "CA", "ALA", 'A', 1, 0, 0, 0, 95.0) + "\n";
  const auto p = parse_structure(text, StructureFormat::pdb_min);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p.sequence[0], *residue_code('A'));
  EXPECT_DOUBLE_EQ(p.plddt[0], 95.0);
  EXPECT_EQ(p.ca_coords.row(0), Vec3(0, 0, 0));
}

TEST(ParseStructure, NoAlphaCarbons) {
  const auto text = atom_line(1, "CB", "ALA", 'A', 1, 0, 0, 0, 95.0) + "\n" +
                    atom_line(2, "OG", "SER", 'A', 2, 1, 0, 0, 95.0) + "\n";
  try {
    parse_structure(text, StructureFormat::pdb_min);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("no alpha carbons"), std::string::npos);
  }
}

TEST(ParseStructure, IgnoresHeadersAndOtherAtoms) {
  std::string text = "HEADER    TEST\nREMARK 1\n";
  text += atom_line(1, "N", "GLY", 'A', 1, 9, 9, 9, 50) + "\n";
  text += atom_line(2, "CA", "GLY", 'A', 1, 1, 2, 3, 50) + "\n";
  text += "HETATM    3  O   HOH A 100       0.000   0.000   0.000  1.00  0.00           O\n";
  text += atom_line(4, "CA", "TRP", 'A', 2, 4, 5, 6, 80) + "\n";
  const auto p = parse_structure(text, StructureFormat::pdb_min);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(residue_letter(p.sequence[0]), 'G');
  EXPECT_EQ(residue_letter(p.sequence[1]), 'W');
  EXPECT_DOUBLE_EQ(p.ca_coords(1, 2), 6.0);
}

TEST(ParseStructure, UnknownResidueNamesLine) {
  std::string text = atom_line(1, "CA", "ALA", 'A', 1, 0, 0, 0, 90) + "\n";
  text += atom_line(2, "CA", "XYZ", 'A', 2, 1, 0, 0, 90) + "\n";
  try {
    parse_structure(text, StructureFormat::pdb_min);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(ParseStructure, DuplicateResidueRejected) {
  std::string text = atom_line(1, "CA", "ALA", 'A', 1, 0, 0, 0, 90) + "\n";
  text += atom_line(2, "CA", "GLY", 'A', 1, 1, 0, 0, 90) + "\n";
  EXPECT_THROW(parse_structure(text, StructureFormat::pdb_min), DataError);
}

TEST(ParseStructure, AltLocAndModels) {
  std::string text = "MODEL        1\n";
  text += atom_line(1, "CA", "ALA", 'A', 1, 0, 0, 0, 90, 'A') + "\n";
  text += atom_line(2, "CA", "ALA", 'A', 1, 5, 0, 0, 90, 'B') + "\n";
  text += atom_line(3, "CA", "GLY", 'A', 2, 1, 0, 0, 90) + "\n";
  text += "ENDMDL\nMODEL        2\n";
  text += atom_line(4, "CA", "ALA", 'A', 1, 7, 7, 7, 90) + "\n";
  const auto p = parse_structure(text, StructureFormat::pdb_min);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_DOUBLE_EQ(p.ca_coords(0, 0), 0.0);
}

TEST(ParseStructure, TsvThreeResidues) {
  const std::string text = "# index\tresidue\tx\ty\tz\tplddt\n1\tM\t0.1\t-2.5\t3.25\t88.5\n2\tK\t1e-3\t7\t-0.3\t70\n3\tV\t4.4\t5.5\t6.6\t12\n";
  const auto p = parse_structure(text, StructureFormat::tsv);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p.ca_coords(0, 0), 0.1);
  EXPECT_EQ(p.ca_coords(0, 1), -2.5);
  EXPECT_EQ(p.ca_coords(1, 0), 1e-3);
  EXPECT_EQ(p.ca_coords(1, 2), -0.3);
  EXPECT_EQ(p.ca_coords(2, 2), 6.6);
  EXPECT_EQ(p.plddt[0], 88.5);
  EXPECT_EQ(residue_letter(p.sequence[2]), 'V');
}

TEST(ParseStructure, TsvWithoutPlddtDefaultsTo100) {
  const auto p = parse_structure("1\tA\t0\t0\t0\n2\tC\t1\t1\t1\n", StructureFormat::tsv);
  EXPECT_EQ(p.plddt, (std::vector<double>{100.0, 100.0}));
}

TEST(ParseStructure, TsvRoundTripIsExact) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = toy::random_protein(5 + trial, rng);
    for (auto& v : p.plddt) v = 100.0 * rng.uniform();
    p.ca_coords *= 1.0 + rng.uniform();
    const auto q = parse_structure(serialize_tsv(p), StructureFormat::tsv, p.id);
    EXPECT_EQ(q.sequence, p.sequence);
    EXPECT_EQ(q.plddt, p.plddt);
    EXPECT_TRUE((q.ca_coords.array() == p.ca_coords.array()).all());
  }
}

TEST(ParseStructure, MissingFileNamesPath) {
  try {
    read_structure("/nonexistent/dir/file.pdb");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/file.pdb"), std::string::npos);
  }
}

TEST(ParseMutation, SingleToken) {
  std::vector<int> seq(30, *residue_code('G'));
  seq[23] = *residue_code('A');
  const auto m = parse_mutation("A24G", 0, seq);
  ASSERT_EQ(m.sites.size(), 1u);
  EXPECT_EQ(m.sites[0], (Site{23, *residue_code('A'), *residue_code('G')}));
}

TEST(ParseMutation, SortedSites) {
  const auto m = parse_mutation("F56L:A24G", 0);
  ASSERT_EQ(m.sites.size(), 2u);
  EXPECT_EQ(m.sites[0].position, 23);
  EXPECT_EQ(m.sites[1].position, 55);
  EXPECT_EQ(format_mutation(m, 0), "A24G:F56L");
}

TEST(ParseMutation, Rejections) {
  EXPECT_THROW(parse_mutation("A24A", 0), DataError);
  EXPECT_THROW(parse_mutation("A24", 0), DataError);
  EXPECT_THROW(parse_mutation("Z24A", 0), DataError);
  EXPECT_THROW(parse_mutation("A24G:A24C", 0), DataError);
  std::vector<int> seq(30, *residue_code('G'));
  try {
    parse_mutation("A24G", 0, seq);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("24"), std::string::npos);
  }
  EXPECT_THROW(parse_mutation("G31A", 0, seq), DataError);
}

TEST(ParseMutation, OffsetShiftsNumbering) {
  const auto m = parse_mutation("A110G", 100);
  EXPECT_EQ(m.sites[0].position, 9);
  EXPECT_EQ(format_mutation(m, 100), "A110G");
}

TEST(ParseMutation, WildTypeTokens) {
  EXPECT_TRUE(parse_mutation("", 0).empty());
  EXPECT_TRUE(parse_mutation("WT", 0).empty());
  EXPECT_TRUE(parse_mutation("_wt", 0).empty());
}

TEST(ParseMutation, PositionsStrictlyIncreasing) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::map<int, std::string> tokens;
    const int k = 1 + static_cast<int>(rng.index(5));
    while (static_cast<int>(tokens.size()) < k) {
      const int pos = 1 + static_cast<int>(rng.index(200));
      const int wt = static_cast<int>(rng.index(20));
      const int mt = (wt + 1 + static_cast<int>(rng.index(19))) % 20;
      tokens[pos] = std::string(1, residue_letter(wt)) + std::to_string(pos) + residue_letter(mt);
    }
    std::vector<std::string> shuffled;
    for (auto& [_, t] : tokens) shuffled.push_back(t);
    rng.shuffle(shuffled.begin(), shuffled.end());
    std::string text;
    for (const auto& t : shuffled) text += (text.empty() ? "" : ":") + t;
    const auto m = parse_mutation(text, 0);
    for (std::size_t i = 1; i < m.sites.size(); ++i) EXPECT_LT(m.sites[i - 1].position, m.sites[i].position);
  }
}

TEST(Embeddings, ZeroPayload) {
  std::string bytes = "S3FE";
  detail::put_u32(bytes, 1);
  detail::put_u32(bytes, 2);
  detail::put_u32(bytes, 3);
  bytes.append(24, '\0');
  const auto e = decode_embeddings(bytes);
  EXPECT_EQ(e.rows.rows(), 2);
  EXPECT_EQ(e.rows.cols(), 3);
  EXPECT_TRUE(e.rows.isZero(0.0));
  EXPECT_EQ(e.context_tag, "");
}

TEST(Embeddings, TruncatedPayload) {
  std::string bytes = "S3FE";
  detail::put_u32(bytes, 1);
  detail::put_u32(bytes, 2);
  detail::put_u32(bytes, 3);
  bytes.append(20, '\0');
  try {
    decode_embeddings(bytes);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("payload size mismatch"), std::string::npos);
  }
}

TEST(Embeddings, MagicAndNonFinite) {
  EXPECT_THROW(decode_embeddings(std::string("XXXX") + std::string(12, '\0')), DataError);
  ResidueEmbeddings e;
  e.rows = Matrix::Zero(1, 1);
  auto bytes = encode_embeddings(e);
  const float inf = std::numeric_limits<float>::infinity();
  std::memcpy(bytes.data() + 16, &inf, 4);
  EXPECT_THROW(decode_embeddings(bytes), DataError);
}

TEST(Embeddings, RoundTripBitExact) {
  Rng rng(11);
  ResidueEmbeddings e;
  e.rows.resize(5, 8);
  for (Index i = 0; i < e.rows.size(); ++i) e.rows.data()[i] = static_cast<float>(rng.normal() * 100.0);
  e.context_tag = mask_tag(std::vector<int>{4, 1});
  const auto path = tmp_path("emb.s3fe");
  save_embeddings(path, e);
  const auto back = load_embeddings(path);
  EXPECT_TRUE((back.rows.array() == e.rows.array()).all());
  EXPECT_EQ(back.context_tag, "mask=1,4");
  std::filesystem::remove(path);
}

TEST(Embeddings, MaskTagRoundTrip) {
  EXPECT_EQ(mask_tag(std::vector<int>{}), "");
  EXPECT_EQ(*parse_mask_tag("mask=3,7"), (std::vector<int>{3, 7}));
  EXPECT_FALSE(parse_mask_tag("bogus").has_value());
}

TEST(Assay, TwoRowsInOrder) {
  const auto t = parse_assay("mutant,DMS_score\nA1G,1.0\nC2D,2.0\n");
  ASSERT_EQ(t.variants.size(), 2u);
  EXPECT_EQ(t.variants[0].mutant, "A1G");
  EXPECT_EQ(t.variants[1].dms_score, 2.0);
  EXPECT_FALSE(t.has_bins());
}

TEST(Assay, MissingColumnAndBadScore) {
  EXPECT_THROW(parse_assay("mutant,score\nA1G,1.0\n"), DataError);
  EXPECT_THROW(parse_assay("mutant,DMS_score\nA1G,abc\n"), DataError);
  EXPECT_THROW(parse_assay("mutant,DMS_score,DMS_score_bin\nA1G,1,2\n"), DataError);
}

TEST(Assay, BinsRoundTrip) {
  Rng rng(5);
  AssayTable t;
  for (int i = 0; i < 40; ++i)
    t.variants.push_back({"A" + std::to_string(i + 1) + "G", rng.normal(), static_cast<int>(rng.index(2))});
  const auto back = parse_assay(serialize_assay(t));
  ASSERT_EQ(back.variants.size(), t.variants.size());
  for (std::size_t i = 0; i < t.variants.size(); ++i) {
    EXPECT_EQ(back.variants[i].mutant, t.variants[i].mutant);
    EXPECT_EQ(back.variants[i].dms_score, t.variants[i].dms_score);
    EXPECT_EQ(back.variants[i].dms_bin, t.variants[i].dms_bin);
  }
}

TEST(Assay, ExtraColumnsKept) {
  const auto t = parse_assay("mutant,DMS_score,function\nA1G,1,binding\nC2D,2,stability\n");
  EXPECT_EQ(t.extra.at("function"), (std::vector<std::string>{"binding", "stability"}));
}

TEST(ExternalScores, SingleAndDuplicate) {
  EXPECT_EQ(parse_external_scores("mutant,score\nA24G,0.5\n").size(), 1u);
  EXPECT_THROW(parse_external_scores("mutant,score\nA24G,0.5\nA24G,0.7\n"), DataError);
}

TEST(ExternalScores, MatchesNaiveDictionary) {
  Rng rng(9);
  std::string text = "mutant,score\n";
  std::map<std::string, double> naive;
  while (naive.size() < 100) {
    const auto key = std::string(1, residue_letter(static_cast<int>(rng.index(20)))) +
                     std::to_string(1 + rng.index(500)) + residue_letter(static_cast<int>(rng.index(20)));
    if (naive.count(key)) continue;
    const double v = rng.normal();
    naive[key] = v;
    text += key + "," + format_double(v) + "\n";
  }
  EXPECT_EQ(parse_external_scores(text), naive);
}
