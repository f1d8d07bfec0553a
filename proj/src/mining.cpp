#include "cante/mining.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>

#include "cante/error.hpp"
#include "cante/log.hpp"

namespace cante {

std::vector<Pattern> SequenceDatabase::symbols() const {
  std::vector<Pattern> out;
  out.reserve(sequences.size());
  for (const auto& s : sequences) out.push_back(s.steps);
  return out;
}

bool contains_subsequence(const Pattern& seq, const Pattern& pattern) {
  std::size_t j = 0;
  for (std::size_t i = 0; i < seq.size() && j < pattern.size(); ++i) {
    if (seq[i] == pattern[j]) ++j;
  }
  return j == pattern.size();
}

namespace {

// Projected entry: sequence id and the index just past the first instance of
// the current prefix.
struct Projection {
  int seq;
  int start;
};

class Bide {
 public:
  Bide(const std::vector<Pattern>& db, const MiningParams& params) : params_(params) {
    // Dense item ids keep the per-period bookkeeping in flat arrays.
    std::vector<int> alphabet;
    for (const auto& s : db) alphabet.insert(alphabet.end(), s.begin(), s.end());
    std::sort(alphabet.begin(), alphabet.end());
    alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());
    symbols_ = alphabet;
    db_.reserve(db.size());
    for (const auto& s : db) {
      std::vector<int> ids;
      ids.reserve(s.size());
      for (int x : s) {
        ids.push_back(static_cast<int>(std::lower_bound(alphabet.begin(), alphabet.end(), x) -
                                       alphabet.begin()));
      }
      db_.push_back(std::move(ids));
    }
    stamp_.assign(symbols_.size(), -1);
  }

  std::vector<Motif> run() {
    const int n_items = static_cast<int>(symbols_.size());
    std::vector<std::vector<Projection>> by_item(static_cast<std::size_t>(n_items));
    for (int s = 0; s < static_cast<int>(db_.size()); ++s) {
      const auto& seq = db_[static_cast<std::size_t>(s)];
      for (int i = 0; i < static_cast<int>(seq.size()); ++i) {
        auto& proj = by_item[static_cast<std::size_t>(seq[static_cast<std::size_t>(i)])];
        if (proj.empty() || proj.back().seq != s) proj.push_back({s, i + 1});
      }
    }
    for (int item = 0; item < n_items; ++item) {
      const auto& proj = by_item[static_cast<std::size_t>(item)];
      if (static_cast<int>(proj.size()) < params_.min_support) continue;
      prefix_.assign(1, item);
      if (backscan_prunable(proj)) continue;
      grow(proj);
    }
    std::sort(out_.begin(), out_.end(), [](const Motif& a, const Motif& b) {
      if (a.support != b.support) return a.support > b.support;
      return a.pattern < b.pattern;
    });
    return std::move(out_);
  }

 private:
  void grow(const std::vector<Projection>& proj) {
    const int support = static_cast<int>(proj.size());
    const int n_items = static_cast<int>(symbols_.size());
    std::vector<int> counts(static_cast<std::size_t>(n_items), 0);
    for (std::size_t p = 0; p < proj.size(); ++p) {
      const auto& seq = db_[static_cast<std::size_t>(proj[p].seq)];
      for (std::size_t i = static_cast<std::size_t>(proj[p].start); i < seq.size(); ++i) {
        const int item = seq[i];
        if (stamp_[static_cast<std::size_t>(item)] != static_cast<int>(p) + stamp_base_) {
          stamp_[static_cast<std::size_t>(item)] = static_cast<int>(p) + stamp_base_;
          ++counts[static_cast<std::size_t>(item)];
        }
      }
    }
    stamp_base_ += static_cast<int>(proj.size());

    const bool forward_closed =
        std::none_of(counts.begin(), counts.end(), [&](int c) { return c == support; });
    const int len = static_cast<int>(prefix_.size());
    if (forward_closed && len >= params_.len_min && !has_backward_extension(proj)) {
      Motif m;
      m.pattern.reserve(prefix_.size());
      for (int id : prefix_) m.pattern.push_back(symbols_[static_cast<std::size_t>(id)]);
      m.support = support;
      out_.push_back(std::move(m));
    }
    if (len >= params_.len_max) return;

    for (int item = 0; item < n_items; ++item) {
      if (counts[static_cast<std::size_t>(item)] < params_.min_support) continue;
      std::vector<Projection> next;
      next.reserve(static_cast<std::size_t>(counts[static_cast<std::size_t>(item)]));
      for (const auto& pr : proj) {
        const auto& seq = db_[static_cast<std::size_t>(pr.seq)];
        for (int i = pr.start; i < static_cast<int>(seq.size()); ++i) {
          if (seq[static_cast<std::size_t>(i)] == item) {
            next.push_back({pr.seq, i + 1});
            break;
          }
        }
      }
      prefix_.push_back(item);
      if (!backscan_prunable(next)) grow(next);
      prefix_.pop_back();
    }
  }

  // Positions of the first (left-most) instance of the prefix in `seq`.
  void first_instance(const std::vector<int>& seq, std::vector<int>& pos) const {
    pos.resize(prefix_.size());
    std::size_t j = 0;
    for (int i = 0; i < static_cast<int>(seq.size()) && j < prefix_.size(); ++i) {
      if (seq[static_cast<std::size_t>(i)] == prefix_[j]) pos[j++] = i;
    }
  }

  // Last-in-last (from_end = true, anchored at the last e_n of the sequence)
  // or last-in-first (anchored at e_n of the first instance) appearances.
  void last_appearances(const std::vector<int>& seq, const std::vector<int>& first, bool in_last,
                        std::vector<int>& pos) const {
    const std::size_t n = prefix_.size();
    pos.resize(n);
    int limit = in_last ? static_cast<int>(seq.size()) : first[n - 1] + 1;
    for (std::size_t k = n; k-- > 0;) {
      int i = limit - 1;
      while (seq[static_cast<std::size_t>(i)] != prefix_[k]) --i;
      pos[k] = i;
      limit = i;
    }
  }

  // True if for some i an item occurs in the i-th (semi-)maximum period of
  // every sequence containing the prefix.
  bool common_item_in_periods(const std::vector<Projection>& proj, bool semi) {
    const std::size_t n = prefix_.size();
    const std::size_t n_items = symbols_.size();
    const int support = static_cast<int>(proj.size());
    period_counts_.assign(n * n_items, 0);
    std::vector<int> first, last;
    std::vector<int> seen(n_items, -1);
    for (int p = 0; p < support; ++p) {
      const auto& seq = db_[static_cast<std::size_t>(proj[static_cast<std::size_t>(p)].seq)];
      first_instance(seq, first);
      last_appearances(seq, first, !semi, last);
      for (std::size_t i = 0; i < n; ++i) {
        const int lo = i == 0 ? 0 : first[i - 1] + 1;
        const int hi = last[i];
        const int tag = p * static_cast<int>(n) + static_cast<int>(i);
        for (int q = lo; q < hi; ++q) {
          const auto item = static_cast<std::size_t>(seq[static_cast<std::size_t>(q)]);
          if (seen[item] == tag) continue;
          seen[item] = tag;
          if (++period_counts_[i * n_items + item] == support) return true;
        }
      }
    }
    return false;
  }

  bool has_backward_extension(const std::vector<Projection>& proj) {
    return common_item_in_periods(proj, false);
  }

  bool backscan_prunable(const std::vector<Projection>& proj) {
    return common_item_in_periods(proj, true);
  }

  MiningParams params_;
  std::vector<int> symbols_;
  std::vector<std::vector<int>> db_;
  std::vector<int> prefix_;
  std::vector<int> stamp_;
  int stamp_base_ = 0;
  std::vector<int> period_counts_;
  std::vector<Motif> out_;
};

}  // namespace

std::vector<Motif> mine_closed(const std::vector<Pattern>& db, const MiningParams& params) {
  if (params.min_support < 2) throw ArgumentError("min_support must be >= 2");
  if (params.len_min < 1 || params.len_min > params.len_max) {
    throw ArgumentError("invalid pattern length bounds");
  }
  if (db.empty() || params.min_support > static_cast<int>(db.size())) return {};
  return Bide(db, params).run();
}

std::vector<Motif> mine_closed(const SequenceDatabase& db, const MiningParams& params) {
  return mine_closed(db.symbols(), params);
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> locate_occurrences(const Pattern& pattern,
                                                                     const ContourSequence& seq) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  if (pattern.empty()) return out;
  std::size_t from = 0;
  while (from < seq.steps.size()) {
    std::size_t j = 0;
    std::size_t first = 0;
    std::size_t i = from;
    for (; i < seq.steps.size(); ++i) {
      if (seq.steps[i] == pattern[j]) {
        if (j == 0) first = i;
        if (++j == pattern.size()) break;
      }
    }
    if (j < pattern.size()) break;
    out.emplace_back(seq.segments[first].start_frame, seq.segments[i + 1].end_frame);
    from = i + 1;
  }
  return out;
}

std::vector<MotifDictionary> build_dictionary(const std::vector<SequenceDatabase>& databases,
                                              const MiningParams& params) {
  std::vector<MotifDictionary> out;
  for (const auto& db : databases) {
    MotifDictionary dict;
    dict.singer = db.owner;
    if (db.sequences.empty()) {
      log::warn("mine", {{"singer", db.owner}, {"msg", "no sequences; empty dictionary"}});
      out.push_back(std::move(dict));
      continue;
    }
    dict.motifs = mine_closed(db, params);
    for (auto& motif : dict.motifs) {
      for (const auto& seq : db.sequences) {
        const auto spans = locate_occurrences(motif.pattern, seq);
        if (!spans.empty()) {
          motif.occurrences.push_back({seq.source_id, spans.front().first, spans.front().second});
        }
      }
    }
    log::info("mine", {{"singer", db.owner},
                       {"sequences", std::to_string(db.sequences.size())},
                       {"motifs", std::to_string(dict.motifs.size())}});
    out.push_back(std::move(dict));
  }
  return out;
}

void save_dictionary_json(const std::filesystem::path& path, const MotifDictionary& dict) {
  nlohmann::json motifs = nlohmann::json::array();
  for (const auto& m : dict.motifs) {
    nlohmann::json occ = nlohmann::json::array();
    for (const auto& o : m.occurrences) {
      occ.push_back({{"source_id", o.source_id},
                     {"start_frame", o.start_frame},
                     {"end_frame", o.end_frame}});
    }
    motifs.push_back({{"pattern", m.pattern}, {"support", m.support}, {"occurrences", occ}});
  }
  const nlohmann::json j = {{"singer", dict.singer}, {"motifs", motifs}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
}

MotifDictionary load_dictionary_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing dictionary " + path.string());
  MotifDictionary dict;
  try {
    nlohmann::json j;
    in >> j;
    dict.singer = j.at("singer").get<std::string>();
    for (const auto& m : j.at("motifs")) {
      Motif motif;
      motif.pattern = m.at("pattern").get<Pattern>();
      motif.support = m.at("support").get<int>();
      for (const auto& o : m.at("occurrences")) {
        motif.occurrences.push_back({o.at("source_id").get<std::string>(),
                                     o.at("start_frame").get<Eigen::Index>(),
                                     o.at("end_frame").get<Eigen::Index>()});
      }
      dict.motifs.push_back(std::move(motif));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return dict;
}

}  // namespace cante
