#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cante/pitch.hpp"

namespace cante {

/// Optimal one-dimensional k-means partition.
struct ClusterModel {
  Eigen::VectorXd centroids;  // strictly increasing
  int k = 0;
  double sse = 0.0;

  /// Nearest centroid; ties go to the lower index.
  int assign(double value) const;
};

/// Globally optimal 1-D k-means by dynamic programming over the sorted
/// distinct values (weighted by multiplicity). Requires 1 <= k <= number of
/// distinct values.
ClusterModel cluster_1d(std::span<const double> values, int k);

/// Minimum-SSE value for every k in [1, k_max]; index 0 is unused.
std::vector<double> optimal_sse_curve(std::span<const double> values, int k_max);

/// k in [k_min, k_max] minimizing n*ln(sse/n) + k*ln(n); ties go to the
/// smaller k. The range is clipped to the number of distinct values.
int select_k(std::span<const double> values, int k_min, int k_max);

struct LineSegment {
  int cluster_index = 0;
  Eigen::Index start_frame = 0;
  Eigen::Index end_frame = 0;  // exclusive
  double mean_cents = 0.0;
  int phrase = 0;
};

struct ContourSequence {
  std::vector<int> steps;  // steps[j] = segments[j+1].cluster_index - segments[j].cluster_index
  std::vector<LineSegment> segments;
  std::string source_id;
};

struct SegmentParams {
  int min_frames = 5;
  double max_gap_seconds = 0.25;
};

/// Maximal same-cluster runs of voiced frames. Unvoiced gaps up to
/// max_gap_seconds are bridged, longer gaps start a new phrase; runs with
/// fewer than min_frames voiced frames are absorbed by the neighbour whose
/// centroid is nearer.
std::vector<LineSegment> segment(const PitchTrack& track, const ClusterModel& model,
                                 const SegmentParams& params = {});

/// One ContourSequence per phrase.
std::vector<ContourSequence> contour_of(const std::vector<LineSegment>& segments,
                                        const std::string& source_id = {});

struct ContourParams {
  int k_min = 2;
  int k_max = 16;
  SegmentParams segment;
};

std::vector<double> voiced_cents(const PitchTrack& track);

/// Clustering model for one recording (BIC-selected k).
ClusterModel fit_clusters(std::span<const double> values, const ContourParams& params = {});

/// Track -> phrases. Uses `model` if given (corpus-wide clustering), else fits
/// a per-recording model.
std::vector<ContourSequence> approximate_contour(const PitchTrack& track,
                                                 const ContourParams& params = {},
                                                 const ClusterModel* model = nullptr);

void save_contours_json(const std::filesystem::path& path,
                        const std::vector<ContourSequence>& phrases);
std::vector<ContourSequence> load_contours_json(const std::filesystem::path& path);

}  // namespace cante
