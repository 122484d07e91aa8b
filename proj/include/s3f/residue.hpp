#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace s3f {

inline constexpr int kNumResidueTypes = 20;
/// Residue alphabet; the code of a residue is its position in this string.
inline constexpr std::string_view kResidueLetters = "ACDEFGHIKLMNPQRSTVWY";

inline constexpr std::array<std::string_view, kNumResidueTypes> kResidueNames3 = {
    "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU",
    "MET", "ASN", "PRO", "GLN", "ARG", "SER", "THR", "VAL", "TRP", "TYR"};

inline std::optional<int> residue_code(char letter) {
  const auto pos = kResidueLetters.find(letter);
  if (pos == std::string_view::npos) return std::nullopt;
  return static_cast<int>(pos);
}

inline std::optional<int> residue_code3(std::string_view name) {
  for (int i = 0; i < kNumResidueTypes; ++i)
    if (kResidueNames3[i] == name) return i;
  return std::nullopt;
}

inline char residue_letter(int code) { return kResidueLetters.at(static_cast<std::size_t>(code)); }

}  // namespace s3f
