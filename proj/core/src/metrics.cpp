#include "safire/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "safire/inference.hpp"
#include "safire/io.hpp"
#include "safire/rng.hpp"
#include "safire/synth.hpp"

namespace safire::metrics {

namespace {

void check_dims(int hy, int wy, int hx, int wx) {
  if (hy != hx || wy != wx)
    throw ArgumentError("shape mismatch: ground truth " + std::to_string(hy) + "x" +
                        std::to_string(wy) + " vs prediction " + std::to_string(hx) + "x" +
                        std::to_string(wx));
}

// Max-sum assignment of rows to distinct columns on a square matrix
// (Jonker-style shortest augmenting paths on the negated costs).
double assignment_max(const std::vector<std::vector<double>>& a) {
  const int n = int(a.size());
  std::vector<double> u(size_t(n) + 1), v(size_t(n) + 1);
  std::vector<int> p(size_t(n) + 1, 0), way(size_t(n) + 1, 0);
  const double inf = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(size_t(n) + 1, inf);
    std::vector<char> used(size_t(n) + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -a[size_t(i0) - 1][size_t(j) - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  // Sum in row order so the value is bit-identical to an exhaustive
  // enumeration of the same assignment.
  std::vector<int> col(size_t(n), 0);
  for (int j = 1; j <= n; ++j)
    if (p[j]) col[size_t(p[j]) - 1] = j - 1;
  double total = 0;
  for (int i = 0; i < n; ++i) total += a[size_t(i)][size_t(col[size_t(i)])];
  return total;
}

struct Contingency {
  int ny = 0, nx = 0;                  // distinct label counts
  std::vector<int64_t> cy, cx;         // per-label pixel counts (compacted)
  std::vector<std::vector<int64_t>> joint;  // ny × nx
};

Contingency contingency(const SourcePartition& y, const SourcePartition& x) {
  check_dims(y.height, y.width, x.height, x.width);
  std::vector<int> ymap(256, -1), xmap(256, -1);
  Contingency c;
  // Compact ids in label order so "lower label" tie rules survive.
  for (uint8_t v : y.data)
    if (ymap[v] < 0) ymap[v] = 0;
  for (uint8_t v : x.data)
    if (xmap[v] < 0) xmap[v] = 0;
  for (int l = 0; l < 256; ++l) {
    if (ymap[l] == 0) ymap[l] = c.ny++;
    if (xmap[l] == 0) xmap[l] = c.nx++;
  }
  c.cy.assign(size_t(c.ny), 0);
  c.cx.assign(size_t(c.nx), 0);
  c.joint.assign(size_t(c.ny), std::vector<int64_t>(size_t(c.nx), 0));
  for (size_t i = 0; i < y.data.size(); ++i) {
    const int a = ymap[y.data[i]], b = xmap[x.data[i]];
    ++c.cy[a];
    ++c.cx[b];
    ++c.joint[a][b];
  }
  return c;
}

// IoU matrix restricted to the kept prediction labels; kept.size() columns.
std::vector<std::vector<double>> iou_matrix(const Contingency& c, const std::vector<int>& kept) {
  std::vector<std::vector<double>> iou(size_t(c.ny), std::vector<double>(kept.size(), 0.0));
  for (int g = 0; g < c.ny; ++g)
    for (size_t k = 0; k < kept.size(); ++k) {
      const int l = kept[k];
      const int64_t inter = c.joint[g][l];
      const int64_t uni = c.cy[g] + c.cx[l] - inter;
      iou[g][k] = uni > 0 ? double(inter) / double(uni) : 0.0;
    }
  return iou;
}

std::vector<int> kept_labels(const Contingency& c) {
  std::vector<int> labels(static_cast<size_t>(c.nx), 0);
  std::iota(labels.begin(), labels.end(), 0);
  if (c.nx <= c.ny) return labels;
  // More predicted labels than GT classes: keep the ny largest regions,
  // ties toward the lower label (stable sort keeps label order).
  std::stable_sort(labels.begin(), labels.end(),
                   [&](int a, int b) { return c.cx[a] > c.cx[b]; });
  labels.resize(static_cast<size_t>(c.ny));
  std::sort(labels.begin(), labels.end());
  return labels;
}

std::vector<std::vector<double>> square_pad(const std::vector<std::vector<double>>& m) {
  const size_t rows = m.size(), cols = rows ? m[0].size() : 0;
  const size_t n = std::max(rows, cols);
  std::vector<std::vector<double>> out(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) out[i][j] = m[i][j];
  return out;
}

}  // namespace

double f1(const BinaryMask& y, const PredictionMap& x, double t) {
  check_dims(y.height, y.width, x.height, x.width);
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < y.data.size(); ++i) {
    const bool pred = x.data[i] > t;
    const bool gt = y.data[i] != 0;
    if (pred && gt)
      ++tp;
    else if (pred && !gt)
      ++fp;
    else if (!pred && gt)
      ++fn;
  }
  if (tp + fp + fn == 0) return 1.0;
  if (tp == 0) return 0.0;
  return 2.0 * double(tp) / double(2 * tp + fp + fn);
}

namespace {
PredictionMap complement(const PredictionMap& x) {
  PredictionMap out(x.height, x.width);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = 1.f - x.data[i];
  return out;
}
}  // namespace

double permuted_f1_fixed(const BinaryMask& y, const PredictionMap& x) {
  return std::max(f1(y, x, 0.5), f1(y, complement(x), 0.5));
}

double permuted_f1_best(const BinaryMask& y, const PredictionMap& x) {
  const PredictionMap inv = complement(x);
  double best = 0;
  for (int k = 1; k <= 255; ++k) {
    const double t = double(k) / 256.0;
    best = std::max({best, f1(y, x, t), f1(y, inv, t)});
  }
  return best;
}

double permuted_miou(const SourcePartition& y, const SourcePartition& x) {
  const auto c = contingency(y, x);
  const auto kept = kept_labels(c);
  const auto iou = iou_matrix(c, kept);
  return assignment_max(square_pad(iou)) / double(c.ny);
}

double brute_force_pmiou(const SourcePartition& y, const SourcePartition& x) {
  const auto c = contingency(y, x);
  const auto kept = kept_labels(c);
  if (std::max(c.ny, int(kept.size())) > 6)
    throw ArgumentError("brute_force_pmiou: more than 6 effective labels");
  const auto iou = square_pad(iou_matrix(c, kept));
  const int n = int(iou.size());
  std::vector<int> perm(static_cast<size_t>(n), 0);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1;
  do {
    double s = 0;
    for (int i = 0; i < n; ++i) s += iou[i][perm[i]];
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / double(c.ny);
}

double ari(const SourcePartition& y, const SourcePartition& x) {
  const auto c = contingency(y, x);
  auto comb2 = [](int64_t n) { return double(n) * double(n - 1) / 2.0; };
  double sum_ij = 0, sum_a = 0, sum_b = 0;
  for (int i = 0; i < c.ny; ++i)
    for (int j = 0; j < c.nx; ++j) sum_ij += comb2(c.joint[i][j]);
  for (int64_t a : c.cy) sum_a += comb2(a);
  for (int64_t b : c.cx) sum_b += comb2(b);
  const double total = comb2(int64_t(y.data.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial
  return (sum_ij - expected) / (max_index - expected);
}

std::vector<RobustnessRow> robustness_report(const net::ModelParams& params,
                                             const std::string& dataset_dir,
                                             const std::string& transform,
                                             const std::vector<double>& levels, Seed seed,
                                             int jobs) {
  namespace fs = std::filesystem;
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(dataset_dir + "/images"))
    if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw ConfigError("no images under " + dataset_dir + "/images");

  auto transform_image = [&](const Image& img, double level, Seed s) {
    if (transform == "blur") return synth::apply_blur(img, level);
    if (transform == "noise") return synth::apply_noise(img, level, s);
    if (transform == "jpeg") return synth::apply_jpeg(img, int(std::lround(level)));
    if (transform == "gamma") return synth::apply_gamma(img, level);
    throw ArgumentError("unknown transform: " + transform);
  };

  std::vector<RobustnessRow> rows;
  for (double level : levels) {
    RobustnessRow row;
    row.transform = transform;
    row.level = level;
    row.n_images = int(stems.size());
    std::vector<double> scores(stems.size(), 0.0);
#pragma omp parallel for schedule(dynamic) num_threads(jobs) if (jobs > 1)
    for (size_t i = 0; i < stems.size(); ++i) {
      Image img = io::read_image_png(dataset_dir + "/images/" + stems[i] + ".png");
      BinaryMask gt = io::read_mask_png(dataset_dir + "/binary/" + stems[i] + ".png");
      Image perturbed = transform_image(img, level, Rng::mix(seed, i));
      inference::InferOptions opts;
      opts.seed = Rng::mix(seed, 0x1000 + i);
      auto res = inference::infer(params, perturbed, opts);
      scores[i] = permuted_f1_fixed(gt, res.heatmap);
    }
    row.score = std::accumulate(scores.begin(), scores.end(), 0.0) / double(scores.size());
    rows.push_back(row);
  }
  return rows;
}

void write_robustness_csv(const std::vector<RobustnessRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "transform,level,score,n_images\n";
  os.precision(10);
  for (const auto& r : rows)
    os << r.transform << "," << r.level << "," << r.score << "," << r.n_images << "\n";
}

}  // namespace safire::metrics
