#pragma once

#include <optional>
#include <string>
#include <vector>

#include "safire/net.hpp"
#include "safire/types.hpp"

namespace safire::inference {

enum class ClusterMethod { kKMeans, kDbscan };

struct ClusterAssignment {
  std::vector<int> labels;  // per feature, 0..count-1
  int count = 0;            // M
  ClusterMethod method = ClusterMethod::kKMeans;
  bool reduced = false;  // fewer distinct features than requested clusters
};

/// g×g prompts at cell centers, raster order.
std::vector<PointPrompt> grid_prompts(int h, int w, int g);

struct RepresentativeFeature {
  std::vector<double> values;  // kEmbedDim
  bool fallback = false;       // prediction selected no cell
};

/// Mean embedding over the cells the prediction map selects (downsampled
/// logits > 0). Falls back to the prompt's own cell when nothing is
/// selected.
RepresentativeFeature representative_feature(const EmbeddingGrid& grid, const PredictionMap& x,
                                             PointPrompt prompt);

/// k-means++ with 10 restarts and up to 100 Lloyd iterations, best inertia
/// kept. If there are fewer distinct features than m the cluster count is
/// reduced and `reduced` is set.
ClusterAssignment kmeans(const std::vector<std::vector<double>>& features, int m, Seed seed);

/// Density clustering on L2-normalized features (Euclidean distance). Noise
/// points join the cluster of their nearest core point; an all-noise result
/// collapses to a single cluster.
ClusterAssignment dbscan(const std::vector<std::vector<double>>& features, double eps,
                         int min_pts);

/// Per cluster, the index of the most confident prompt (ties: lowest index).
std::vector<int> select_confident(const ClusterAssignment& assign,
                                  const std::vector<double>& confidences);

/// Binary combination of the two selected maps: ½(σ(x_a) + 1 − σ(x_b)).
PredictionMap combine_binary(const PredictionMap& x_a, const PredictionMap& x_b);

struct SoftmaxCombined {
  std::vector<int32_t> labels;            // per pixel, = index of winning map
  std::vector<PredictionMap> soft;        // per input map, softmax weights
  int height = 0, width = 0;
};

/// Per-pixel softmax across the selected maps; hard label = argmax with ties
/// to the lowest map index.
SoftmaxCombined combine_softmax(const std::vector<const PredictionMap*>& maps);

struct InferOptions {
  int grid = 16;
  bool multi = false;  // false: binary heatmap, true: source partition
  ClusterMethod cluster = ClusterMethod::kKMeans;
  int m = 2;  // cluster count for k-means (binary forces 2)
  double dbscan_eps = 0.3;
  int dbscan_min_pts = 3;
  Seed seed = 0;
};

struct InferResult {
  PredictionMap heatmap;                   // binary mode, values in [0,1]
  SourcePartition partition;               // multi mode
  std::vector<PredictionMap> soft_maps;    // multi mode, one per emitted label
  int clusters = 0;                        // effective M
  bool single_cluster_fallback = false;
  std::vector<double> confidences;         // per selected mask
  std::vector<int> cluster_sizes;
  int fallback_features = 0;               // prompts that used the cell fallback
};

InferResult infer(const net::ModelParams& params, const Image& img, const InferOptions& opts);

/// The unprompted baseline: one decode with a zero prompt embedding,
/// heatmap = σ(X).
PredictionMap infer_baseline(const net::ModelParams& params, const Image& img);

void write_sidecar_json(const InferResult& res, const std::string& path);

}  // namespace safire::inference
