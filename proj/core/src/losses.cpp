#include "safire/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

namespace safire::losses {

namespace {

double softplus(double x) {  // log(1 + e^x), stable
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) { return x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

double info_nce(std::span<const double> q, std::span<const double> p,
                const std::vector<std::vector<double>>& negatives, double tau) {
  if (tau <= 0) throw ArgumentError("info_nce: tau must be positive");
  if (negatives.empty()) throw ArgumentError("info_nce: negatives must be non-empty");
  auto dot = [&](std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  double zp = dot(q, p) / tau;
  double m = zp;
  std::vector<double> zn(negatives.size());
  for (size_t i = 0; i < negatives.size(); ++i) {
    zn[i] = dot(q, negatives[i]) / tau;
    m = std::max(m, zn[i]);
  }
  double sum = std::exp(zp - m);
  for (double z : zn) sum += std::exp(z - m);
  return -(zp - m) + std::log(sum);
}

std::optional<double> r2r_loss(const R2RBatch& batch, double* grad_out) {
  const int n = batch.cells, V = batch.dim;
  const double tau = batch.tau;
  if (tau <= 0) throw ArgumentError("r2r_loss: tau must be positive");

  // Compact region ids and sizes.
  std::map<int32_t, int> region_of;
  for (int c = 0; c < n; ++c) region_of.emplace(batch.labels[c], 0);
  int r = 0;
  for (auto& [lab, id] : region_of) id = r++;
  if (r < 2) {
    if (grad_out) std::fill(grad_out, grad_out + size_t(n) * V, 0.0);
    return std::nullopt;
  }
  std::vector<int> reg(n);
  std::vector<int> reg_size(r, 0);
  for (int c = 0; c < n; ++c) {
    reg[c] = region_of[batch.labels[c]];
    ++reg_size[reg[c]];
  }

  // Normalized embeddings u, plus norms for the chain rule.
  std::vector<double> u(size_t(n) * V);
  std::vector<double> norms(n, 1.0);
  for (int c = 0; c < n; ++c) {
    const double* e = batch.embeddings + size_t(c) * V;
    double* uc = u.data() + size_t(c) * V;
    if (batch.normalize) {
      double nn = 0;
      for (int k = 0; k < V; ++k) nn += e[k] * e[k];
      nn = std::sqrt(std::max(nn, 1e-24));
      norms[c] = nn;
      for (int k = 0; k < V; ++k) uc[k] = e[k] / nn;
    } else {
      std::memcpy(uc, e, sizeof(double) * V);
    }
  }

  // Per-region sums of u for positives.
  std::vector<double> reg_sum(size_t(r) * V, 0.0);
  for (int c = 0; c < n; ++c) {
    const double* uc = u.data() + size_t(c) * V;
    double* s = reg_sum.data() + size_t(reg[c]) * V;
    for (int k = 0; k < V; ++k) s[k] += uc[k];
  }

  // Full dot matrix D[q][c] = u_q . u_c.
  std::vector<double> D(size_t(n) * n);
  for (int a = 0; a < n; ++a) {
    const double* ua = u.data() + size_t(a) * V;
    double* row = D.data() + size_t(a) * n;
    for (int b = 0; b < n; ++b) {
      const double* ub = u.data() + size_t(b) * V;
      double s = 0;
      for (int k = 0; k < V; ++k) s += ua[k] * ub[k];
      row[b] = s;
    }
  }

  std::vector<double> gu;  // d loss / d u (before mean scaling)
  if (grad_out) gu.assign(size_t(n) * V, 0.0);

  double total = 0.0;
  int anchors = 0;
  std::vector<double> pos(V);
  for (int q = 0; q < n; ++q) {
    const int i = reg[q];
    const int k_i = reg_size[i];
    if (k_i < 2) continue;  // singleton: Eq-2 positive undefined
    ++anchors;
    const double* uq = u.data() + size_t(q) * V;
    const double* row = D.data() + size_t(q) * n;

    // Positive: mean of own region excluding q.
    const double inv = 1.0 / (k_i - 1);
    for (int k = 0; k < V; ++k) pos[k] = (reg_sum[size_t(i) * V + k] - uq[k]) * inv;
    double dot_qp = 0;
    for (int k = 0; k < V; ++k) dot_qp += uq[k] * pos[k];
    const double zp = dot_qp / tau;

    // Log-sum-exp over {positive} ∪ {cells of other regions}.
    double m = zp;
    for (int c = 0; c < n; ++c)
      if (reg[c] != i) m = std::max(m, row[c] / tau);
    double Z = std::exp(zp - m);
    for (int c = 0; c < n; ++c)
      if (reg[c] != i) Z += std::exp(row[c] / tau - m);
    total += -(zp - m) + std::log(Z);

    if (grad_out) {
      const double wp = std::exp(zp - m) / Z;
      double* gq = gu.data() + size_t(q) * V;
      // d/dz_p = wp - 1 flows to u_q (via p) and to the positive members.
      const double cp = (wp - 1.0) / tau;
      for (int k = 0; k < V; ++k) gq[k] += cp * pos[k];
      const double cm = cp * inv;
      for (int c = 0; c < n; ++c) {
        if (reg[c] == i) {
          if (c != q) {
            double* gc = gu.data() + size_t(c) * V;
            for (int k = 0; k < V; ++k) gc[k] += cm * uq[k];
          }
        } else {
          const double wn = std::exp(row[c] / tau - m) / Z;
          const double cn = wn / tau;
          const double* uc = u.data() + size_t(c) * V;
          double* gc = gu.data() + size_t(c) * V;
          for (int k = 0; k < V; ++k) {
            gq[k] += cn * uc[k];
            gc[k] += cn * uq[k];
          }
        }
      }
    }
  }

  if (anchors == 0) {
    if (grad_out) std::fill(grad_out, grad_out + size_t(n) * V, 0.0);
    return std::nullopt;
  }
  const double loss = total / anchors;

  if (grad_out) {
    const double scale = 1.0 / anchors;
    for (int c = 0; c < n; ++c) {
      const double* g = gu.data() + size_t(c) * V;
      const double* uc = u.data() + size_t(c) * V;
      double* out = grad_out + size_t(c) * V;
      if (batch.normalize) {
        double gdotu = 0;
        for (int k = 0; k < V; ++k) gdotu += g[k] * uc[k];
        const double invn = 1.0 / norms[c];
        for (int k = 0; k < V; ++k) out[k] = scale * invn * (g[k] - gdotu * uc[k]);
      } else {
        for (int k = 0; k < V; ++k) out[k] = scale * g[k];
      }
    }
  }
  return loss;
}

BinaryMask bin(const PredictionMap& x) {
  BinaryMask m(x.height, x.width);
  for (size_t i = 0; i < x.data.size(); ++i) m.data[i] = x.data[i] > 0.f ? 1 : 0;
  return m;
}

namespace {

struct ValidCounts {
  size_t valid = 0, ones = 0, zeros = 0;
};

ValidCounts count_valid(const PointMask& yp) {
  ValidCounts c;
  for (int8_t v : yp.data) {
    if (v == 1) ++c.ones;
    else if (v == 0) ++c.zeros;
  }
  c.valid = c.ones + c.zeros;
  return c;
}

}  // namespace

double aass_loss(std::span<const double> logits, const PointMask& yp, double c_max,
                 double* grad_logits) {
  if (logits.size() != yp.data.size()) throw ArgumentError("aass_loss: size mismatch");
  const auto c = count_valid(yp);
  if (c.valid == 0) throw ArgumentError("aass_loss: point mask has no valid pixels");
  const double w1 = c.ones ? std::min(double(c.valid) / double(c.ones), c_max) : 0.0;
  const double w0 = c.zeros ? std::min(double(c.valid) / double(c.zeros), c_max) : 0.0;
  const double inv = 1.0 / double(c.valid);

  double loss = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    const int8_t y = yp.data[i];
    if (y < 0) {
      if (grad_logits) grad_logits[i] = 0.0;
      continue;
    }
    const double x = logits[i];
    if (y == 1) {
      loss += w1 * softplus(-x);  // -log σ(x)
      if (grad_logits) grad_logits[i] = inv * w1 * (sigmoid(x) - 1.0);
    } else {
      loss += w0 * softplus(x);  // -log(1-σ(x))
      if (grad_logits) grad_logits[i] = inv * w0 * sigmoid(x);
    }
  }
  return loss * inv;
}

double confidence_loss(std::span<const double> logits, const PointMask& yp, double s,
                       double* d_conf) {
  if (logits.size() != yp.data.size()) throw ArgumentError("confidence_loss: size mismatch");
  const auto c = count_valid(yp);
  if (c.valid == 0) throw ArgumentError("confidence_loss: point mask has no valid pixels");
  size_t correct = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    const int8_t y = yp.data[i];
    if (y < 0) continue;
    const int pred = logits[i] > 0.0 ? 1 : 0;
    if (pred == y) ++correct;
  }
  const double acc = double(correct) / double(c.valid);
  if (d_conf) *d_conf = 2.0 * (s - acc);
  return (acc - s) * (acc - s);
}

double total_loss(std::span<const double> logits, const PointMask& yp, double s,
                  const LossSpec& spec, double* grad_logits, double* d_conf) {
  if (spec.plain_bce) {
    // Unprompted baseline: uniform weights, no confidence term. The mask
    // carries plain {0,1} labels here.
    double loss = 0;
    const double inv = 1.0 / double(yp.data.size());
    for (size_t i = 0; i < logits.size(); ++i) {
      const double x = logits[i];
      if (yp.data[i] == 1) {
        loss += softplus(-x);
        if (grad_logits) grad_logits[i] = inv * (sigmoid(x) - 1.0);
      } else {
        loss += softplus(x);
        if (grad_logits) grad_logits[i] = inv * sigmoid(x);
      }
    }
    if (d_conf) *d_conf = 0.0;
    return loss * inv;
  }
  double dc = 0;
  const double la = aass_loss(logits, yp, spec.c_max, grad_logits);
  const double lc = confidence_loss(logits, yp, s, &dc);
  if (d_conf) *d_conf = spec.lambda_conf * dc;
  return la + spec.lambda_conf * lc;
}

namespace {
std::vector<double> widen(const PredictionMap& x) {
  return std::vector<double>(x.data.begin(), x.data.end());
}
}  // namespace

double aass_loss(const PredictionMap& x, const PointMask& yp, double c_max) {
  auto d = widen(x);
  return aass_loss(d, yp, c_max);
}

double confidence_loss(const PredictionMap& x, const PointMask& yp, double s) {
  auto d = widen(x);
  return confidence_loss(d, yp, s);
}

double total_loss(const PredictionMap& x, const PointMask& yp, double s, double lambda_conf,
                  double c_max) {
  auto d = widen(x);
  LossSpec spec;
  spec.lambda_conf = lambda_conf;
  spec.c_max = c_max;
  return total_loss(d, yp, s, spec);
}

std::vector<int32_t> downsample_partition(const SourcePartition& p, int k) {
  if (p.height % k || p.width % k) throw ArgumentError("downsample_partition: dims not multiple of k");
  const int rows = p.height / k, cols = p.width / k;
  std::vector<int32_t> out(size_t(rows) * cols);
  std::vector<int> counts;
  for (int gr = 0; gr < rows; ++gr)
    for (int gc = 0; gc < cols; ++gc) {
      counts.assign(size_t(p.sources), 0);
      for (int r = gr * k; r < (gr + 1) * k; ++r)
        for (int c = gc * k; c < (gc + 1) * k; ++c) ++counts[p.at(r, c)];
      int best = 0;
      for (int l = 1; l < p.sources; ++l)
        if (counts[l] > counts[best]) best = l;  // ties keep the smaller label
      out[size_t(gr) * cols + gc] = best;
    }
  return out;
}

}  // namespace safire::losses
