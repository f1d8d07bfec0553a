#include "cante/contour.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "cante/error.hpp"

namespace cante {
namespace {

// Sorted distinct values with multiplicities, shifted by the minimum so the
// prefix sums stay small (and exact for integer-valued cents).
struct WeightedValues {
  std::vector<double> value;  // centred
  std::vector<double> weight;
  double origin = 0.0;
};

WeightedValues compress(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  WeightedValues wv;
  if (sorted.empty()) return wv;
  wv.origin = sorted.front();
  for (double v : sorted) {
    const double c = v - wv.origin;
    if (!wv.value.empty() && wv.value.back() == c) {
      wv.weight.back() += 1.0;
    } else {
      wv.value.push_back(c);
      wv.weight.push_back(1.0);
    }
  }
  return wv;
}

class KMeansDp {
 public:
  KMeansDp(const WeightedValues& wv, int k_max) : m_(static_cast<int>(wv.value.size())) {
    w_.assign(m_ + 1, 0.0);
    s1_.assign(m_ + 1, 0.0);
    s2_.assign(m_ + 1, 0.0);
    for (int i = 0; i < m_; ++i) {
      w_[i + 1] = w_[i] + wv.weight[i];
      s1_[i + 1] = s1_[i] + wv.weight[i] * wv.value[i];
      s2_[i + 1] = s2_[i] + wv.weight[i] * wv.value[i] * wv.value[i];
    }
    const double inf = std::numeric_limits<double>::infinity();
    cost_.assign(static_cast<std::size_t>(k_max + 1), std::vector<double>(m_ + 1, inf));
    back_.assign(static_cast<std::size_t>(k_max + 1), std::vector<int>(m_ + 1, 0));
    cost_[0][0] = 0.0;
    for (int k = 1; k <= k_max; ++k) {
      for (int j = k; j <= m_; ++j) {
        double best = inf;
        int arg = k;
        // Last cluster covers distinct values [i, j] (1-based).
        for (int i = k; i <= j; ++i) {
          const double c = cost_[k - 1][i - 1] + range_cost(i, j);
          if (c < best) {
            best = c;
            arg = i;
          }
        }
        cost_[k][j] = best;
        back_[k][j] = arg;
      }
    }
  }

  double sse(int k) const { return cost_[k][m_]; }

  // Cluster boundaries as [first, last] 1-based indices into distinct values.
  std::vector<std::pair<int, int>> partition(int k) const {
    std::vector<std::pair<int, int>> out(static_cast<std::size_t>(k));
    int j = m_;
    for (int c = k; c >= 1; --c) {
      const int i = back_[c][j];
      out[static_cast<std::size_t>(c - 1)] = {i, j};
      j = i - 1;
    }
    return out;
  }

  double range_weight(int i, int j) const { return w_[j] - w_[i - 1]; }
  double range_sum(int i, int j) const { return s1_[j] - s1_[i - 1]; }

  double range_cost(int i, int j) const {
    const double w = w_[j] - w_[i - 1];
    const double s1 = s1_[j] - s1_[i - 1];
    const double s2 = s2_[j] - s2_[i - 1];
    return std::max(0.0, (w * s2 - s1 * s1) / w);
  }

 private:
  int m_;
  std::vector<double> w_, s1_, s2_;
  std::vector<std::vector<double>> cost_;
  std::vector<std::vector<int>> back_;
};

}  // namespace

int ClusterModel::assign(double value) const {
  const auto n = centroids.size();
  const double* begin = centroids.data();
  const auto idx = std::upper_bound(begin, begin + n, value) - begin;
  if (idx == 0) return 0;
  if (idx == n) return static_cast<int>(n - 1);
  const double below = value - centroids[idx - 1];
  const double above = centroids[idx] - value;
  return above < below ? static_cast<int>(idx) : static_cast<int>(idx - 1);
}

ClusterModel cluster_1d(std::span<const double> values, int k) {
  const WeightedValues wv = compress(values);
  const int distinct = static_cast<int>(wv.value.size());
  if (k < 1 || k > distinct) {
    throw ArgumentError("k must lie in [1, distinct values] (k=" + std::to_string(k) +
                        ", distinct=" + std::to_string(distinct) + ")");
  }
  const KMeansDp dp(wv, k);
  ClusterModel model;
  model.k = k;
  model.sse = dp.sse(k);
  model.centroids.resize(k);
  const auto parts = dp.partition(k);
  for (int c = 0; c < k; ++c) {
    const auto [i, j] = parts[static_cast<std::size_t>(c)];
    model.centroids[c] = wv.origin + dp.range_sum(i, j) / dp.range_weight(i, j);
  }
  return model;
}

std::vector<double> optimal_sse_curve(std::span<const double> values, int k_max) {
  const WeightedValues wv = compress(values);
  const int distinct = static_cast<int>(wv.value.size());
  if (k_max < 1 || k_max > distinct) throw ArgumentError("k_max out of range");
  const KMeansDp dp(wv, k_max);
  std::vector<double> out(static_cast<std::size_t>(k_max + 1), 0.0);
  for (int k = 1; k <= k_max; ++k) out[static_cast<std::size_t>(k)] = dp.sse(k);
  return out;
}

int select_k(std::span<const double> values, int k_min, int k_max) {
  if (values.empty()) throw ArgumentError("select_k needs at least one value");
  if (k_min < 1 || k_min > k_max) throw ArgumentError("invalid k range");
  const int distinct = static_cast<int>(compress(values).value.size());
  k_max = std::min(k_max, distinct);
  k_min = std::min(k_min, k_max);
  const auto curve = optimal_sse_curve(values, k_max);
  const double n = static_cast<double>(values.size());
  int best_k = k_min;
  double best = std::numeric_limits<double>::infinity();
  for (int k = k_min; k <= k_max; ++k) {
    const double sse = curve[static_cast<std::size_t>(k)];
    const double bic = sse <= 0.0 ? -std::numeric_limits<double>::infinity()
                                  : n * std::log(sse / n) + k * std::log(n);
    if (bic < best) {
      best = bic;
      best_k = k;
    }
  }
  return best_k;
}

namespace {

struct Run {
  int cluster;
  Eigen::Index start;
  Eigen::Index end;
  int count;      // voiced frames
  double total;   // sum of voiced cents
};

void coalesce(std::vector<Run>& runs) {
  std::vector<Run> out;
  for (const Run& r : runs) {
    if (!out.empty() && out.back().cluster == r.cluster) {
      out.back().end = r.end;
      out.back().count += r.count;
      out.back().total += r.total;
    } else {
      out.push_back(r);
    }
  }
  runs.swap(out);
}

void absorb_short_runs(std::vector<Run>& runs, const ClusterModel& model, int min_frames) {
  while (runs.size() > 1) {
    std::size_t shortest = runs.size();
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (runs[i].count < min_frames &&
          (shortest == runs.size() || runs[i].count < runs[shortest].count)) {
        shortest = i;
      }
    }
    if (shortest == runs.size()) break;
    const Run victim = runs[shortest];
    const double mean = victim.total / victim.count;
    std::size_t target;
    if (shortest == 0) {
      target = 1;
    } else if (shortest + 1 == runs.size()) {
      target = shortest - 1;
    } else {
      const double left = std::abs(model.centroids[runs[shortest - 1].cluster] - mean);
      const double right = std::abs(model.centroids[runs[shortest + 1].cluster] - mean);
      target = right < left ? shortest + 1 : shortest - 1;
    }
    Run& t = runs[target];
    t.start = std::min(t.start, victim.start);
    t.end = std::max(t.end, victim.end);
    t.count += victim.count;
    t.total += victim.total;
    runs.erase(runs.begin() + static_cast<std::ptrdiff_t>(shortest));
    coalesce(runs);
  }
}

}  // namespace

std::vector<LineSegment> segment(const PitchTrack& track, const ClusterModel& model,
                                 const SegmentParams& params) {
  if (params.min_frames < 1) throw ArgumentError("min_frames must be >= 1");
  std::vector<LineSegment> out;
  const Eigen::Index n = track.size();
  const double period = track.frame_period();

  std::vector<Run> runs;
  int phrase = 0;
  Eigen::Index last_voiced = -1;
  auto flush = [&] {
    coalesce(runs);
    absorb_short_runs(runs, model, params.min_frames);
    for (const Run& r : runs) {
      out.push_back({r.cluster, r.start, r.end, r.total / r.count, phrase});
    }
    runs.clear();
    ++phrase;
  };

  for (Eigen::Index t = 0; t < n; ++t) {
    if (!track.voiced(t)) continue;
    if (last_voiced >= 0 && static_cast<double>(t - last_voiced - 1) * period > params.max_gap_seconds) {
      flush();
    }
    const double v = track.f0_cents[t];
    const int c = model.assign(v);
    if (!runs.empty() && runs.back().cluster == c) {
      runs.back().end = t + 1;
      runs.back().count += 1;
      runs.back().total += v;
    } else {
      runs.push_back({c, t, t + 1, 1, v});
    }
    last_voiced = t;
  }
  if (!runs.empty()) flush();
  return out;
}

std::vector<ContourSequence> contour_of(const std::vector<LineSegment>& segments,
                                        const std::string& source_id) {
  std::vector<ContourSequence> out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const LineSegment& s = segments[i];
    if (i == 0 || s.phrase != segments[i - 1].phrase) {
      out.push_back({});
      out.back().source_id = source_id;
    } else {
      const int step = s.cluster_index - out.back().segments.back().cluster_index;
      if (step == 0) throw ArgumentError("consecutive segments share a cluster");
      out.back().steps.push_back(step);
    }
    out.back().segments.push_back(s);
  }
  return out;
}

std::vector<double> voiced_cents(const PitchTrack& track) {
  std::vector<double> v;
  for (Eigen::Index t = 0; t < track.size(); ++t) {
    if (track.voiced(t)) v.push_back(track.f0_cents[t]);
  }
  return v;
}

ClusterModel fit_clusters(std::span<const double> values, const ContourParams& params) {
  const int k = select_k(values, params.k_min, params.k_max);
  return cluster_1d(values, k);
}

std::vector<ContourSequence> approximate_contour(const PitchTrack& track,
                                                 const ContourParams& params,
                                                 const ClusterModel* model) {
  const std::vector<double> values = voiced_cents(track);
  if (values.empty()) return {};
  ClusterModel local;
  if (model == nullptr) {
    local = fit_clusters(values, params);
    model = &local;
  }
  return contour_of(segment(track, *model, params.segment), track.source_id);
}

void save_contours_json(const std::filesystem::path& path,
                        const std::vector<ContourSequence>& phrases) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : phrases) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : p.segments) {
      segs.push_back({{"cluster", s.cluster_index},
                      {"start_frame", s.start_frame},
                      {"end_frame", s.end_frame},
                      {"mean_cents", s.mean_cents}});
    }
    j.push_back({{"source_id", p.source_id}, {"steps", p.steps}, {"segments", segs}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
}

std::vector<ContourSequence> load_contours_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing contour file " + path.string());
  std::vector<ContourSequence> out;
  try {
    nlohmann::json j;
    in >> j;
    int phrase = 0;
    for (const auto& p : j) {
      ContourSequence seq;
      seq.source_id = p.at("source_id").get<std::string>();
      seq.steps = p.at("steps").get<std::vector<int>>();
      for (const auto& s : p.at("segments")) {
        seq.segments.push_back({s.at("cluster").get<int>(), s.at("start_frame").get<Eigen::Index>(),
                                s.at("end_frame").get<Eigen::Index>(),
                                s.at("mean_cents").get<double>(), phrase});
      }
      if (seq.segments.size() != seq.steps.size() + 1) {
        throw FormatError(path.string() + ": steps/segments length mismatch");
      }
      out.push_back(std::move(seq));
      ++phrase;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace cante
