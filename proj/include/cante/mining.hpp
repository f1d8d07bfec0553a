#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cante/contour.hpp"

namespace cante {

using Pattern = std::vector<int>;

/// Contour-step sequences of one singer together with the phrases they came
/// from (source recording and line segments).
struct SequenceDatabase {
  std::string owner;
  std::vector<ContourSequence> sequences;

  std::vector<Pattern> symbols() const;
};

struct Occurrence {
  std::string source_id;
  Eigen::Index start_frame = 0;
  Eigen::Index end_frame = 0;

  bool operator==(const Occurrence&) const = default;
};

struct Motif {
  Pattern pattern;
  int support = 0;
  std::vector<Occurrence> occurrences;
};

struct MotifDictionary {
  std::string singer;
  std::vector<Motif> motifs;
};

struct MiningParams {
  int min_support = 5;
  int len_min = 3;
  int len_max = 12;
};

/// Closed frequent subsequences (BIDE with BackScan pruning), sorted by
/// support descending then pattern. Occurrences are left empty.
std::vector<Motif> mine_closed(const std::vector<Pattern>& db, const MiningParams& params);
std::vector<Motif> mine_closed(const SequenceDatabase& db, const MiningParams& params);

/// True if `pattern` is a (not necessarily contiguous) subsequence of `seq`.
bool contains_subsequence(const Pattern& seq, const Pattern& pattern);

/// Frame spans of successive non-overlapping left-most greedy embeddings of
/// `pattern` in the phrase's steps. Step j joins segments j and j+1, so an
/// embedding covering steps a..b spans segments a..b+1.
std::vector<std::pair<Eigen::Index, Eigen::Index>> locate_occurrences(const Pattern& pattern,
                                                                     const ContourSequence& seq);

/// Mines each singer's database and records the first occurrence of each
/// motif in every phrase that contains it.
std::vector<MotifDictionary> build_dictionary(const std::vector<SequenceDatabase>& databases,
                                              const MiningParams& params);

void save_dictionary_json(const std::filesystem::path& path, const MotifDictionary& dict);
MotifDictionary load_dictionary_json(const std::filesystem::path& path);

}  // namespace cante
