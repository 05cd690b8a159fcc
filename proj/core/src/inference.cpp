#include "safire/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "safire/rng.hpp"

namespace safire::inference {

namespace {

double sigmoid(double x) {
  return x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<PointPrompt> grid_prompts(int h, int w, int g) {
  if (g < 1 || h < g || w < g) throw ArgumentError("grid_prompts: need h,w >= g >= 1");
  std::vector<PointPrompt> out;
  out.reserve(size_t(g) * g);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j)
      out.push_back({int((i + 0.5) * h / g), int((j + 0.5) * w / g)});
  return out;
}

RepresentativeFeature representative_feature(const EmbeddingGrid& grid, const PredictionMap& x,
                                             PointPrompt prompt) {
  auto down = net::downsample_bilinear(x, grid.rows, grid.cols);
  RepresentativeFeature out;
  out.values.assign(size_t(grid.dim), 0.0);
  // Cells are averaged as directions: embedding norms vary per cell and a
  // few high-energy cells would otherwise dominate the mean.
  auto accumulate_unit = [&](const float* e) {
    double n = 0;
    for (int k = 0; k < grid.dim; ++k) n += double(e[k]) * e[k];
    n = std::sqrt(n);
    if (n < 1e-12) return;
    for (int k = 0; k < grid.dim; ++k) out.values[k] += double(e[k]) / n;
  };
  int selected = 0;
  for (int c = 0; c < grid.cells(); ++c) {
    if (down[c] > 0.0) {
      accumulate_unit(grid.cell(c));
      ++selected;
    }
  }
  if (selected > 0) {
    for (double& v : out.values) v /= selected;
  } else {
    out.fallback = true;
    const int cr = std::min(prompt.row / kDownsample, grid.rows - 1);
    const int cc = std::min(prompt.col / kDownsample, grid.cols - 1);
    accumulate_unit(grid.cell(cr, cc));
  }
  return out;
}

ClusterAssignment kmeans(const std::vector<std::vector<double>>& features, int m, Seed seed) {
  if (features.empty()) throw ArgumentError("kmeans: empty feature set");
  if (m < 1) throw ArgumentError("kmeans: m must be >= 1");
  const int n = int(features.size());

  // Count distinct features; requesting more clusters than that degenerates.
  std::vector<int> distinct;
  for (int i = 0; i < n; ++i) {
    bool found = false;
    for (int d : distinct)
      if (features[i] == features[d]) found = true;
    if (!found) distinct.push_back(i);
  }
  ClusterAssignment out;
  out.method = ClusterMethod::kKMeans;
  if (int(distinct.size()) < m) {
    out.reduced = true;
    m = int(distinct.size());
  }
  out.count = m;
  if (m == 1) {
    out.labels.assign(size_t(n), 0);
    return out;
  }

  Rng rng(Rng::mix(seed, 0x6b6d65616e73));
  double best_inertia = std::numeric_limits<double>::infinity();
  std::vector<int> best_labels(size_t(n), 0);

  for (int restart = 0; restart < 10; ++restart) {
    // k-means++ seeding.
    std::vector<std::vector<double>> centers;
    centers.push_back(features[rng.below(uint64_t(n))]);
    std::vector<double> d2(static_cast<size_t>(n), 0.0);
    while (int(centers.size()) < m) {
      double sum = 0;
      for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& c : centers) best = std::min(best, sqdist(features[i], c));
        d2[i] = best;
        sum += best;
      }
      if (sum <= 0) {
        centers.push_back(features[rng.below(uint64_t(n))]);
        continue;
      }
      double target = rng.uniform() * sum;
      int pick = n - 1;
      double acc = 0;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
      centers.push_back(features[pick]);
    }

    std::vector<int> labels(size_t(n), 0);
    for (int iter = 0; iter < 100; ++iter) {
      bool changed = false;
      for (int i = 0; i < n; ++i) {
        int best = 0;
        double bd = sqdist(features[i], centers[0]);
        for (int c = 1; c < m; ++c) {
          const double d = sqdist(features[i], centers[c]);
          if (d < bd) {
            bd = d;
            best = c;
          }
        }
        if (labels[i] != best) {
          labels[i] = best;
          changed = true;
        }
      }
      std::vector<int> counts(size_t(m), 0);
      std::vector<std::vector<double>> sums(size_t(m),
                                            std::vector<double>(features[0].size(), 0.0));
      for (int i = 0; i < n; ++i) {
        ++counts[labels[i]];
        for (size_t k = 0; k < features[i].size(); ++k) sums[labels[i]][k] += features[i][k];
      }
      for (int c = 0; c < m; ++c) {
        if (counts[c] == 0) continue;  // keep previous center for empty clusters
        for (size_t k = 0; k < sums[c].size(); ++k) centers[c][k] = sums[c][k] / counts[c];
      }
      if (!changed) break;
    }
    double inertia = 0;
    for (int i = 0; i < n; ++i) inertia += sqdist(features[i], centers[labels[i]]);
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_labels = labels;
    }
  }

  // Compact labels (empty clusters possible) keeping first-appearance order.
  std::vector<int> remap(size_t(m), -1);
  int next = 0;
  for (int& l : best_labels) {
    if (remap[l] < 0) remap[l] = next++;
    l = remap[l];
  }
  out.count = next;
  out.labels = std::move(best_labels);
  return out;
}

ClusterAssignment dbscan(const std::vector<std::vector<double>>& features, double eps,
                         int min_pts) {
  if (features.empty()) throw ArgumentError("dbscan: empty feature set");
  const int n = int(features.size());
  // Work on L2-normalized copies.
  std::vector<std::vector<double>> f = features;
  for (auto& v : f) {
    double nn = 0;
    for (double x : v) nn += x * x;
    nn = std::sqrt(std::max(nn, 1e-24));
    for (double& x : v) x /= nn;
  }
  const double eps2 = eps * eps;
  std::vector<std::vector<int>> nbr(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (sqdist(f[i], f[j]) <= eps2) nbr[i].push_back(j);  // includes self

  std::vector<bool> core(size_t(n), false);
  for (int i = 0; i < n; ++i) core[i] = int(nbr[i].size()) >= min_pts;

  std::vector<int> labels(size_t(n), -1);
  int next = 0;
  std::vector<int> stack;
  for (int i = 0; i < n; ++i) {
    if (!core[i] || labels[i] >= 0) continue;
    const int id = next++;
    labels[i] = id;
    stack.push_back(i);
    while (!stack.empty()) {
      int p = stack.back();
      stack.pop_back();
      for (int q : nbr[p]) {
        if (labels[q] < 0) {
          labels[q] = id;
          if (core[q]) stack.push_back(q);
        }
      }
    }
  }

  ClusterAssignment out;
  out.method = ClusterMethod::kDbscan;
  if (next == 0) {
    out.count = 1;
    out.labels.assign(size_t(n), 0);
    return out;
  }
  // Remaining noise points: nearest core point's cluster.
  for (int i = 0; i < n; ++i) {
    if (labels[i] >= 0) continue;
    double bd = std::numeric_limits<double>::infinity();
    int bl = 0;
    for (int j = 0; j < n; ++j) {
      if (!core[j]) continue;
      const double d = sqdist(f[i], f[j]);
      if (d < bd) {
        bd = d;
        bl = labels[j];
      }
    }
    labels[i] = bl;
  }
  out.count = next;
  out.labels = std::move(labels);
  return out;
}

std::vector<int> select_confident(const ClusterAssignment& assign,
                                  const std::vector<double>& confidences) {
  if (assign.labels.size() != confidences.size())
    throw ArgumentError("select_confident: size mismatch");
  std::vector<int> best(size_t(assign.count), -1);
  for (size_t i = 0; i < confidences.size(); ++i) {
    int c = assign.labels[i];
    if (best[c] < 0 || confidences[i] > confidences[size_t(best[c])]) best[c] = int(i);
  }
  return best;
}

PredictionMap combine_binary(const PredictionMap& x_a, const PredictionMap& x_b) {
  if (x_a.height != x_b.height || x_a.width != x_b.width)
    throw ArgumentError("combine_binary: shape mismatch");
  PredictionMap out(x_a.height, x_a.width);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = float(0.5 * (sigmoid(x_a.data[i]) + 1.0 - sigmoid(x_b.data[i])));
  return out;
}

SoftmaxCombined combine_softmax(const std::vector<const PredictionMap*>& maps) {
  if (maps.size() < 2) throw ArgumentError("combine_softmax: need >= 2 maps");
  const int h = maps[0]->height, w = maps[0]->width;
  for (const auto* m : maps)
    if (m->height != h || m->width != w) throw ArgumentError("combine_softmax: shape mismatch");
  SoftmaxCombined out;
  out.height = h;
  out.width = w;
  out.labels.assign(size_t(h) * w, 0);
  out.soft.assign(maps.size(), PredictionMap(h, w));
  const int M = int(maps.size());
  for (size_t px = 0; px < size_t(h) * w; ++px) {
    double mx = -std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int m = 0; m < M; ++m) {
      const double v = maps[m]->data[px];
      if (v > mx) {
        mx = v;
        arg = m;
      }
    }
    double z = 0;
    for (int m = 0; m < M; ++m) z += std::exp(double(maps[m]->data[px]) - mx);
    for (int m = 0; m < M; ++m)
      out.soft[m].data[px] = float(std::exp(double(maps[m]->data[px]) - mx) / z);
    out.labels[px] = arg;
  }
  return out;
}

InferResult infer(const net::ModelParams& params, const Image& img, const InferOptions& opts) {
  if (img.height % kDownsample || img.width % kDownsample)
    throw ArgumentError("image dims " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " must be multiples of " +
                        std::to_string(kDownsample) + "; pad before calling");
  EmbeddingGrid grid = net::encode_image(params, img);
  auto prompts = grid_prompts(img.height, img.width, opts.grid);
  std::vector<net::PromptEmbedding> embeds;
  embeds.reserve(prompts.size());
  for (const auto& pt : prompts) embeds.push_back(net::encode_prompt(params, pt, grid));
  auto decoded = net::decode(params, grid, embeds);

  std::vector<std::vector<double>> features;
  features.reserve(decoded.size());
  InferResult res;
  for (size_t i = 0; i < decoded.size(); ++i) {
    auto rf = representative_feature(grid, decoded[i].map, prompts[i]);
    if (rf.fallback) ++res.fallback_features;
    features.push_back(std::move(rf.values));
  }

  ClusterAssignment assign;
  if (opts.cluster == ClusterMethod::kKMeans) {
    assign = kmeans(features, opts.multi ? opts.m : 2, opts.seed);
  } else {
    assign = dbscan(features, opts.dbscan_eps, opts.dbscan_min_pts);
  }

  std::vector<double> confs(decoded.size());
  for (size_t i = 0; i < decoded.size(); ++i) confs[i] = decoded[i].confidence;
  auto selected = select_confident(assign, confs);
  res.clusters = assign.count;
  res.cluster_sizes.assign(size_t(assign.count), 0);
  for (int l : assign.labels) ++res.cluster_sizes[l];

  if (!opts.multi) {
    // Binary mode wants exactly two sides.
    std::vector<int> keep;
    if (assign.count >= 2) {
      // Keep the two largest clusters (ties: lower cluster id).
      std::vector<int> order(static_cast<size_t>(assign.count), 0);
      for (int i = 0; i < assign.count; ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return res.cluster_sizes[a] > res.cluster_sizes[b];
      });
      keep = {order[0], order[1]};
    }
    if (keep.empty()) {
      res.single_cluster_fallback = true;
      const int j = selected[0];
      res.confidences = {confs[j]};
      res.heatmap = PredictionMap(img.height, img.width);
      for (size_t i = 0; i < res.heatmap.data.size(); ++i)
        res.heatmap.data[i] = float(sigmoid(decoded[j].map.data[i]));
      return res;
    }
    const PredictionMap* a = &decoded[selected[keep[0]]].map;
    const PredictionMap* b = &decoded[selected[keep[1]]].map;
    double conf_a = confs[selected[keep[0]]], conf_b = confs[selected[keep[1]]];
    // Forged-side convention: the selected mask covering the smaller area
    // is x_a. Permuted metrics make the orientation harmless; files need a
    // deterministic choice.
    auto area = [](const PredictionMap& m) {
      size_t n = 0;
      for (float v : m.data)
        if (v > 0.f) ++n;
      return n;
    };
    if (area(*b) < area(*a)) {
      std::swap(a, b);
      std::swap(conf_a, conf_b);
    }
    res.heatmap = combine_binary(*a, *b);
    res.confidences = {conf_a, conf_b};
    return res;
  }

  // Multi-source mode.
  if (assign.count < 2) {
    res.single_cluster_fallback = true;
    const int j = selected[0];
    res.confidences = {confs[j]};
    res.partition = SourcePartition(img.height, img.width, 1);
    res.soft_maps.emplace_back(img.height, img.width);
    for (float& v : res.soft_maps[0].data) v = 1.f;
    return res;
  }
  std::vector<const PredictionMap*> maps;
  for (int c = 0; c < assign.count; ++c) {
    maps.push_back(&decoded[selected[c]].map);
    res.confidences.push_back(confs[selected[c]]);
  }
  auto combined = combine_softmax(maps);
  // Compact emitted labels so every label occurs (argmax can starve a map).
  std::vector<int32_t> remap(maps.size(), -1);
  int next = 0;
  res.partition = SourcePartition(img.height, img.width, 1);
  for (size_t px = 0; px < combined.labels.size(); ++px) {
    int32_t l = combined.labels[px];
    if (remap[l] < 0) remap[l] = next++;
    res.partition.data[px] = uint8_t(remap[l]);
  }
  res.partition.sources = next;
  res.soft_maps.assign(size_t(next), PredictionMap(img.height, img.width));
  for (size_t m = 0; m < maps.size(); ++m) {
    if (remap[m] < 0) continue;  // starved map: soft evidence dropped
    res.soft_maps[size_t(remap[m])] = combined.soft[m];
  }
  return res;
}

PredictionMap infer_baseline(const net::ModelParams& params, const Image& img) {
  EmbeddingGrid grid = net::encode_image(params, img);
  auto decoded = net::decode(params, grid, {net::PromptEmbedding(size_t(kEmbedDim), 0.0)});
  PredictionMap out(img.height, img.width);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = float(sigmoid(decoded[0].map.data[i]));
  return out;
}

void write_sidecar_json(const InferResult& res, const std::string& path) {
  nlohmann::json j;
  j["clusters"] = res.clusters;
  j["confidences"] = res.confidences;
  j["cluster_sizes"] = res.cluster_sizes;
  j["fallback_features"] = res.fallback_features;
  j["single_cluster_fallback"] = res.single_cluster_fallback;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << j.dump(2) << "\n";
}

}  // namespace safire::inference
