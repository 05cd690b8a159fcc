#include "safire/net.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <mutex>
#include <numbers>

#include "safire/rng.hpp"
#include "safire/io.hpp"

namespace safire::net {

namespace {

// rgb + two rectified high-pass bands of the luminance. Two cutoffs give a
// coarse spectral shape: noise lifts both bands, blur depresses the upper
// band more, quantization adds structured energy mostly to the lower band.
constexpr int kChannelsIn = 5;
constexpr double kResidualGain = 8.0;
constexpr double kHighpassCutoff2 = 0.6;
constexpr int kConv1 = 16, kConv2 = 24, kConv3 = kEmbedDim;
constexpr int kFourier = kEmbedDim / 2;
// Per-cell decoder input: [cell emb, prompt positional code, prompt-cell
// emb, dot(cell emb, prompt-cell emb)]. The dot term is what lets the
// decoder answer "same source as the clicked cell".
constexpr int kZDim = 3 * kEmbedDim + 1;

double sigmoid(double x) {
  return x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Planar double tensor, [ch][y][x].
struct Planes {
  int ch = 0, h = 0, w = 0;
  std::vector<double> data;
  Planes() = default;
  Planes(int c, int hh, int ww) : ch(c), h(hh), w(ww), data(size_t(c) * hh * ww, 0.0) {}
  double* plane(int c) { return data.data() + size_t(c) * h * w; }
  const double* plane(int c) const { return data.data() + size_t(c) * h * w; }
};

// 3x3 stride-2 pad-1 convolution.
void conv_forward(const Planes& in, const double* w, const double* b, Planes& out) {
  const int oh = in.h / 2, ow = in.w / 2;
  for (int o = 0; o < out.ch; ++o) {
    double* op = out.plane(o);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) op[size_t(y) * ow + x] = b[o];
    for (int i = 0; i < in.ch; ++i) {
      const double* ip = in.plane(i);
      const double* wk = w + (size_t(o) * in.ch + i) * 9;
      for (int y = 0; y < oh; ++y) {
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = 2 * y + ky - 1;
          if (iy < 0 || iy >= in.h) continue;
          const double* irow = ip + size_t(iy) * in.w;
          double* orow = op + size_t(y) * ow;
          for (int kx = 0; kx < 3; ++kx) {
            const double wv = wk[ky * 3 + kx];
            if (wv == 0.0) continue;
            for (int x = 0; x < ow; ++x) {
              const int ix = 2 * x + kx - 1;
              if (ix < 0 || ix >= in.w) continue;
              orow[x] += wv * irow[ix];
            }
          }
        }
      }
    }
  }
}

// Backward of conv_forward: accumulates weight/bias grads and (optionally)
// the input gradient.
void conv_backward(const Planes& in, const double* w, const Planes& dout, double* gw, double* gb,
                   Planes* din) {
  const int oh = dout.h, ow = dout.w;
  for (int o = 0; o < dout.ch; ++o) {
    const double* dop = dout.plane(o);
    double gbo = 0;
    for (size_t i = 0; i < size_t(oh) * ow; ++i) gbo += dop[i];
    gb[o] += gbo;
    for (int i = 0; i < in.ch; ++i) {
      const double* ip = in.plane(i);
      double* gwk = gw + (size_t(o) * in.ch + i) * 9;
      const double* wk = w ? w + (size_t(o) * in.ch + i) * 9 : nullptr;
      double* dip = din ? din->plane(i) : nullptr;
      for (int y = 0; y < oh; ++y) {
        const double* dorow = dop + size_t(y) * ow;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = 2 * y + ky - 1;
          if (iy < 0 || iy >= in.h) continue;
          const double* irow = ip + size_t(iy) * in.w;
          double* dirow = dip ? dip + size_t(iy) * in.w : nullptr;
          for (int kx = 0; kx < 3; ++kx) {
            double acc = 0;
            const double wv = dirow ? wk[ky * 3 + kx] : 0.0;
            for (int x = 0; x < ow; ++x) {
              const int ix = 2 * x + kx - 1;
              if (ix < 0 || ix >= in.w) continue;
              acc += dorow[x] * irow[ix];
              if (dirow) dirow[ix] += wv * dorow[x];
            }
            gwk[ky * 3 + kx] += acc;
          }
        }
      }
    }
  }
}

void tanh_inplace(Planes& p) {
  for (double& v : p.data) v = std::tanh(v);
}

std::mutex fftw_mutex;

// In-place FFT high-pass of one h×w plane.
void highpass_plane(std::vector<double>& plane, int h, int w, double cutoff) {
  const int wc = w / 2 + 1;
  std::vector<fftw_complex> freq(size_t(h) * wc);
  fftw_plan fwd, bwd;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex);
    fwd = fftw_plan_dft_r2c_2d(h, w, plane.data(), freq.data(), FFTW_ESTIMATE);
    bwd = fftw_plan_dft_c2r_2d(h, w, freq.data(), plane.data(), FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  const double limit = cutoff * 0.5;  // cutoff × Nyquist, in cycles/pixel
  for (int u = 0; u < h; ++u) {
    const double fu = double(std::min(u, h - u)) / h;
    for (int v = 0; v < wc; ++v) {
      const double fv = double(v) / w;  // half spectrum: v <= w/2
      if (std::sqrt(fu * fu + fv * fv) < limit) {
        freq[size_t(u) * wc + v][0] = 0.0;
        freq[size_t(u) * wc + v][1] = 0.0;
      }
    }
  }
  fftw_execute(bwd);
  const double scale = 1.0 / (double(h) * w);
  for (double& v : plane) v *= scale;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }
}

Planes build_input(const Image& img) {
  Planes in(kChannelsIn, img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const size_t px = size_t(r) * img.width + c;
      const double rr = img.at(r, c, 0), gg = img.at(r, c, 1), bb = img.at(r, c, 2);
      in.plane(0)[px] = rr;
      in.plane(1)[px] = gg;
      in.plane(2)[px] = bb;
      in.plane(3)[px] = 0.299 * rr + 0.587 * gg + 0.114 * bb;
    }
  const std::vector<double> luma(in.plane(3), in.plane(3) + size_t(img.height) * img.width);
  // Rectified, amplified residuals: source signatures (noise level, blur,
  // quantization) live in the local *energy* of the high-pass bands, which a
  // near-linear conv stack cannot recover from a signed residual.
  std::vector<double> band = luma;
  highpass_plane(band, img.height, img.width, kHighpassCutoff);
  for (double& v : band) v = std::abs(v) * kResidualGain;
  std::memcpy(in.plane(3), band.data(), band.size() * sizeof(double));
  band = luma;
  highpass_plane(band, img.height, img.width, kHighpassCutoff2);
  for (double& v : band) v = std::abs(v) * kResidualGain;
  std::memcpy(in.plane(4), band.data(), band.size() * sizeof(double));
  return in;
}

struct EncoderActs {
  Planes in, a1, a2, a3;  // post-activation
};

void encoder_forward(const ModelParams& p, const Image& img, EncoderActs& acts) {
  if (img.height % kDownsample || img.width % kDownsample)
    throw ArgumentError("image dims " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " not multiples of " +
                        std::to_string(kDownsample));
  acts.in = build_input(img);
  acts.a1 = Planes(kConv1, img.height / 2, img.width / 2);
  const float* w1 = p.data("enc.conv1.w");
  std::vector<double> w1d(w1, w1 + p.block("enc.conv1.w").size);
  const float* b1 = p.data("enc.conv1.b");
  std::vector<double> b1d(b1, b1 + kConv1);
  conv_forward(acts.in, w1d.data(), b1d.data(), acts.a1);
  tanh_inplace(acts.a1);

  acts.a2 = Planes(kConv2, img.height / 4, img.width / 4);
  const float* w2 = p.data("enc.conv2.w");
  std::vector<double> w2d(w2, w2 + p.block("enc.conv2.w").size);
  const float* b2 = p.data("enc.conv2.b");
  std::vector<double> b2d(b2, b2 + kConv2);
  conv_forward(acts.a1, w2d.data(), b2d.data(), acts.a2);
  tanh_inplace(acts.a2);

  acts.a3 = Planes(kConv3, img.height / 8, img.width / 8);
  const float* w3 = p.data("enc.conv3.w");
  std::vector<double> w3d(w3, w3 + p.block("enc.conv3.w").size);
  const float* b3 = p.data("enc.conv3.b");
  std::vector<double> b3d(b3, b3 + kConv3);
  conv_forward(acts.a2, w3d.data(), b3d.data(), acts.a3);
  tanh_inplace(acts.a3);
}

// Cell-major copy of the encoder output.
std::vector<double> cells_from_planes(const Planes& a3) {
  std::vector<double> cells(size_t(a3.h) * a3.w * a3.ch);
  for (int c = 0; c < a3.ch; ++c) {
    const double* pl = a3.plane(c);
    for (int y = 0; y < a3.h; ++y)
      for (int x = 0; x < a3.w; ++x)
        cells[(size_t(y) * a3.w + x) * a3.ch + c] = pl[size_t(y) * a3.w + x];
  }
  return cells;
}

struct DecodeActs {
  std::vector<double> hidden;       // cells × kHiddenDim
  std::vector<double> cell_logits;  // cells
  std::vector<double> mean_hidden;  // kHiddenDim
  double conf_pre = 0, conf = 0;
};

// The decoder sees embeddings only through their direction: per-image norm
// scales (e.g. from blur) would otherwise shift every logit threshold.
void normalize_embed(double* v) {
  double n = 0;
  for (int j = 0; j < kEmbedDim; ++j) n += v[j] * v[j];
  n = std::sqrt(n);
  if (n < 1e-12) return;
  for (int j = 0; j < kEmbedDim; ++j) v[j] /= n;
}

void decode_forward(const ModelParams& p, const double* cells, int ncells,
                    const PromptEmbedding* prompt, DecodeActs& acts) {
  const float* w1 = p.data("dec.w1");
  const float* b1 = p.data("dec.b1");
  const float* w2 = p.data("dec.w2");
  const float* b2 = p.data("dec.b2");
  const float* cw = p.data("conf.w");
  const float* cb = p.data("conf.b");

  acts.hidden.assign(size_t(ncells) * kHiddenDim, 0.0);
  acts.cell_logits.assign(size_t(ncells), 0.0);
  acts.mean_hidden.assign(kHiddenDim, 0.0);

  double z[kZDim];
  for (int j = 0; j < 2 * kEmbedDim; ++j)
    z[kEmbedDim + j] = (prompt && size_t(j) < prompt->size()) ? (*prompt)[j] : 0.0;
  normalize_embed(z + 2 * kEmbedDim);
  for (int c = 0; c < ncells; ++c) {
    const double* e = cells + size_t(c) * kEmbedDim;
    for (int j = 0; j < kEmbedDim; ++j) z[j] = e[j];
    normalize_embed(z);
    double dot = 0;
    for (int j = 0; j < kEmbedDim; ++j) dot += z[j] * z[2 * kEmbedDim + j];
    z[3 * kEmbedDim] = dot;
    double* h = acts.hidden.data() + size_t(c) * kHiddenDim;
    double logit = double(b2[0]);
    for (int k = 0; k < kHiddenDim; ++k) {
      double a = double(b1[k]);
      const float* row = w1 + size_t(k) * kZDim;
      for (int j = 0; j < kZDim; ++j) a += double(row[j]) * z[j];
      h[k] = std::tanh(a);
      logit += double(w2[k]) * h[k];
      acts.mean_hidden[k] += h[k];
    }
    acts.cell_logits[c] = logit;
  }
  for (int k = 0; k < kHiddenDim; ++k) acts.mean_hidden[k] /= ncells;
  acts.conf_pre = double(cb[0]);
  for (int k = 0; k < kHiddenDim; ++k) acts.conf_pre += double(cw[k]) * acts.mean_hidden[k];
  acts.conf = sigmoid(acts.conf_pre);
}

struct GradView {
  std::vector<double>& g;
  const ModelParams& p;
  double* operator[](const std::string& name) const { return g.data() + p.block(name).offset; }
};

void check_finite(const ModelParams& p, double loss, const char* where) {
  if (std::isfinite(loss)) return;
  std::string diag = std::string(where) + ": non-finite loss;";
  for (const auto& b : p.blocks) {
    bool bad = false;
    for (size_t i = 0; i < b.size; ++i)
      if (!std::isfinite(p.values[b.offset + i])) bad = true;
    if (bad) diag += " block " + b.name + " contains non-finite values;";
  }
  throw NumericalError(diag);
}

void zero_frozen(const ModelParams& p, std::vector<double>& grad) {
  for (const auto& b : p.blocks)
    if (p.frozen[size_t(b.group)])
      std::fill(grad.begin() + long(b.offset), grad.begin() + long(b.offset + b.size), 0.0);
}

}  // namespace

ModelParams ModelParams::init(Seed seed) {
  ModelParams p;
  auto add = [&](const std::string& name, std::vector<uint32_t> dims, int group) {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    p.blocks.push_back({name, p.values.size(), n, std::move(dims), group});
    p.values.resize(p.values.size() + n, 0.f);
  };
  add("enc.conv1.w", {kConv1, kChannelsIn, 3, 3}, kGroupEncoder);
  add("enc.conv1.b", {kConv1}, kGroupEncoder);
  add("enc.conv2.w", {kConv2, kConv1, 3, 3}, kGroupEncoder);
  add("enc.conv2.b", {kConv2}, kGroupEncoder);
  add("enc.conv3.w", {kConv3, kConv2, 3, 3}, kGroupEncoder);
  add("enc.conv3.b", {kConv3}, kGroupEncoder);
  add("prompt.proj", {kFourier, 2}, kGroupPrompt);
  add("dec.w1", {kHiddenDim, kZDim}, kGroupDecoder);
  add("dec.b1", {kHiddenDim}, kGroupDecoder);
  add("dec.w2", {kHiddenDim}, kGroupDecoder);
  add("dec.b2", {1}, kGroupDecoder);
  add("conf.w", {kHiddenDim}, kGroupConfidence);
  add("conf.b", {1}, kGroupConfidence);

  Rng rng(Rng::mix(seed, 0x5af12e));
  auto fill = [&](const std::string& name, double std) {
    auto& b = p.block(name);
    for (size_t i = 0; i < b.size; ++i) p.values[b.offset + i] = float(rng.normal() * std);
  };
  fill("enc.conv1.w", std::sqrt(2.0 / (kChannelsIn * 9)));
  fill("enc.conv2.w", std::sqrt(2.0 / (kConv1 * 9)));
  fill("enc.conv3.w", std::sqrt(2.0 / (kConv2 * 9)));
  fill("prompt.proj", 1.0);
  fill("dec.w1", std::sqrt(1.0 / kZDim));
  fill("dec.w2", std::sqrt(1.0 / kHiddenDim));
  fill("conf.w", std::sqrt(1.0 / kHiddenDim));
  return p;
}

const ParamBlock& ModelParams::block(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b;
  throw ArgumentError("unknown parameter block: " + name);
}

float* ModelParams::data(const std::string& name) { return values.data() + block(name).offset; }
const float* ModelParams::data(const std::string& name) const {
  return values.data() + block(name).offset;
}

void save_checkpoint(const ModelParams& p, const std::string& path,
                     const std::vector<float>* momentum) {
  io::NamedBlocks nb;
  for (const auto& b : p.blocks)
    nb.add(b.name, b.dims,
           std::vector<float>(p.values.begin() + long(b.offset),
                              p.values.begin() + long(b.offset + b.size)));
  if (momentum) {
    for (const auto& b : p.blocks)
      nb.add("opt." + b.name, b.dims,
             std::vector<float>(momentum->begin() + long(b.offset),
                                momentum->begin() + long(b.offset + b.size)));
  }
  io::write_blocks(nb, path);
}

ModelParams load_checkpoint(const std::string& path, std::vector<float>* momentum) {
  ModelParams p = ModelParams::init(0);
  io::NamedBlocks nb = io::read_blocks(path);
  for (const auto& b : p.blocks) {
    const auto& blk = nb.get(b.name);
    if (blk.second.size() != b.size)
      throw FormatError("checkpoint block " + b.name + " has wrong size in " + path);
    std::copy(blk.second.begin(), blk.second.end(), p.values.begin() + long(b.offset));
  }
  if (momentum) {
    momentum->assign(p.values.size(), 0.f);
    for (const auto& b : p.blocks) {
      if (!nb.has("opt." + b.name)) continue;
      const auto& blk = nb.get("opt." + b.name);
      std::copy(blk.second.begin(), blk.second.end(), momentum->begin() + long(b.offset));
    }
  }
  return p;
}

Image highpass(const Image& img, double cutoff) {
  if (cutoff <= 0 || cutoff >= 1) throw ArgumentError("highpass: cutoff must be in (0,1)");
  Image out(img.height, img.width);
  std::vector<double> plane(img.pixels());
  for (int ch = 0; ch < 3; ++ch) {
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c) plane[size_t(r) * img.width + c] = img.at(r, c, ch);
    highpass_plane(plane, img.height, img.width, cutoff);
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c) out.at(r, c, ch) = float(plane[size_t(r) * img.width + c]);
  }
  return out;
}

EmbeddingGrid encode_image(const ModelParams& p, const Image& img) {
  EncoderActs acts;
  encoder_forward(p, img, acts);
  EmbeddingGrid grid(kEmbedDim, acts.a3.h, acts.a3.w);
  auto cells = cells_from_planes(acts.a3);
  for (size_t i = 0; i < cells.size(); ++i) grid.data[i] = float(cells[i]);
  return grid;
}

PromptEmbedding encode_prompt(const ModelParams& p, PointPrompt pt, int h, int w) {
  if (pt.row < 0 || pt.row >= h || pt.col < 0 || pt.col >= w)
    throw ArgumentError("prompt (" + std::to_string(pt.row) + "," + std::to_string(pt.col) +
                        ") outside " + std::to_string(h) + "x" + std::to_string(w));
  const float* proj = p.data("prompt.proj");
  const double x = (pt.col + 0.5) / w;
  const double y = (pt.row + 0.5) / h;
  PromptEmbedding out(kEmbedDim);
  for (int j = 0; j < kFourier; ++j) {
    const double phi =
        2.0 * std::numbers::pi * (double(proj[2 * j]) * x + double(proj[2 * j + 1]) * y);
    out[j] = std::sin(phi);
    out[kFourier + j] = std::cos(phi);
  }
  return out;
}

PromptEmbedding encode_prompt(const ModelParams& p, PointPrompt pt, const EmbeddingGrid& grid) {
  PromptEmbedding out =
      encode_prompt(p, pt, grid.rows * kDownsample, grid.cols * kDownsample);
  const float* cell = grid.cell(pt.row / kDownsample, pt.col / kDownsample);
  out.insert(out.end(), cell, cell + kEmbedDim);
  return out;
}

PredictionMap upsample_bilinear(const std::vector<double>& cell_logits, int rows, int cols) {
  const int K = kDownsample;
  PredictionMap out(rows * K, cols * K);
  for (int y = 0; y < out.height; ++y) {
    const double gy = (y + 0.5) / K - 0.5;
    int i0 = int(std::floor(gy));
    const double ty = gy - i0;
    int i1 = std::min(std::max(i0 + 1, 0), rows - 1);
    i0 = std::min(std::max(i0, 0), rows - 1);
    for (int x = 0; x < out.width; ++x) {
      const double gx = (x + 0.5) / K - 0.5;
      int j0 = int(std::floor(gx));
      const double tx = gx - j0;
      int j1 = std::min(std::max(j0 + 1, 0), cols - 1);
      j0 = std::min(std::max(j0, 0), cols - 1);
      const double v = (1 - ty) * ((1 - tx) * cell_logits[size_t(i0) * cols + j0] +
                                   tx * cell_logits[size_t(i0) * cols + j1]) +
                       ty * ((1 - tx) * cell_logits[size_t(i1) * cols + j0] +
                             tx * cell_logits[size_t(i1) * cols + j1]);
      out.at(y, x) = float(v);
    }
  }
  return out;
}

namespace {

// Double-precision upsample used inside the training path (the float map is
// only for the public decode()).
void upsample_bilinear_d(const std::vector<double>& cell_logits, int rows, int cols,
                         std::vector<double>& out) {
  const int K = kDownsample;
  const int H = rows * K, W = cols * K;
  out.assign(size_t(H) * W, 0.0);
  for (int y = 0; y < H; ++y) {
    const double gy = (y + 0.5) / K - 0.5;
    int i0 = int(std::floor(gy));
    const double ty = gy - i0;
    int i1 = std::min(std::max(i0 + 1, 0), rows - 1);
    i0 = std::min(std::max(i0, 0), rows - 1);
    for (int x = 0; x < W; ++x) {
      const double gx = (x + 0.5) / K - 0.5;
      int j0 = int(std::floor(gx));
      const double tx = gx - j0;
      int j1 = std::min(std::max(j0 + 1, 0), cols - 1);
      j0 = std::min(std::max(j0, 0), cols - 1);
      out[size_t(y) * W + x] = (1 - ty) * ((1 - tx) * cell_logits[size_t(i0) * cols + j0] +
                                           tx * cell_logits[size_t(i0) * cols + j1]) +
                               ty * ((1 - tx) * cell_logits[size_t(i1) * cols + j0] +
                                     tx * cell_logits[size_t(i1) * cols + j1]);
    }
  }
}

// Transpose of upsample_bilinear_d: scatter pixel grads back to cells.
void upsample_transpose(const std::vector<double>& dpix, int rows, int cols,
                        std::vector<double>& dcells) {
  const int K = kDownsample;
  const int H = rows * K, W = cols * K;
  dcells.assign(size_t(rows) * cols, 0.0);
  for (int y = 0; y < H; ++y) {
    const double gy = (y + 0.5) / K - 0.5;
    int i0 = int(std::floor(gy));
    const double ty = gy - i0;
    int i1 = std::min(std::max(i0 + 1, 0), rows - 1);
    i0 = std::min(std::max(i0, 0), rows - 1);
    for (int x = 0; x < W; ++x) {
      const double gx = (x + 0.5) / K - 0.5;
      int j0 = int(std::floor(gx));
      const double tx = gx - j0;
      int j1 = std::min(std::max(j0 + 1, 0), cols - 1);
      j0 = std::min(std::max(j0, 0), cols - 1);
      const double g = dpix[size_t(y) * W + x];
      dcells[size_t(i0) * cols + j0] += (1 - ty) * (1 - tx) * g;
      dcells[size_t(i0) * cols + j1] += (1 - ty) * tx * g;
      dcells[size_t(i1) * cols + j0] += ty * (1 - tx) * g;
      dcells[size_t(i1) * cols + j1] += ty * tx * g;
    }
  }
}

}  // namespace

std::vector<double> downsample_bilinear(const PredictionMap& x, int rows, int cols) {
  const int K = kDownsample;
  std::vector<double> out(size_t(rows) * cols);
  for (int i = 0; i < rows; ++i) {
    const double py = (i + 0.5) * K - 0.5;
    int y0 = int(std::floor(py));
    const double ty = py - y0;
    int y1 = std::min(std::max(y0 + 1, 0), x.height - 1);
    y0 = std::min(std::max(y0, 0), x.height - 1);
    for (int j = 0; j < cols; ++j) {
      const double px = (j + 0.5) * K - 0.5;
      int x0 = int(std::floor(px));
      const double tx = px - x0;
      int x1 = std::min(std::max(x0 + 1, 0), x.width - 1);
      x0 = std::min(std::max(x0, 0), x.width - 1);
      out[size_t(i) * cols + j] =
          (1 - ty) * ((1 - tx) * x.at(y0, x0) + tx * x.at(y0, x1)) +
          ty * ((1 - tx) * x.at(y1, x0) + tx * x.at(y1, x1));
    }
  }
  return out;
}

std::vector<Decoded> decode(const ModelParams& p, const EmbeddingGrid& grid,
                            const std::vector<PromptEmbedding>& prompts) {
  if (prompts.empty()) throw ArgumentError("decode: need at least one prompt");
  std::vector<double> cells(grid.data.begin(), grid.data.end());
  std::vector<Decoded> out;
  out.reserve(prompts.size());
  DecodeActs acts;
  for (const auto& f : prompts) {
    decode_forward(p, cells.data(), grid.cells(), &f, acts);
    Decoded d;
    d.map = upsample_bilinear(acts.cell_logits, grid.rows, grid.cols);
    d.confidence = acts.conf;
    out.push_back(std::move(d));
  }
  return out;
}

double pretrain_loss_and_grad(const ModelParams& p, const std::vector<PretrainItem>& batch,
                              double tau, bool normalize, std::vector<double>& grad) {
  grad.assign(p.size(), 0.0);
  GradView g{grad, p};
  double total = 0;
  int used = 0;

  const auto& w2b = p.block("enc.conv2.w");
  const auto& w3b = p.block("enc.conv3.w");
  std::vector<double> w2d(p.values.begin() + long(w2b.offset),
                          p.values.begin() + long(w2b.offset + w2b.size));
  std::vector<double> w3d(p.values.begin() + long(w3b.offset),
                          p.values.begin() + long(w3b.offset + w3b.size));

  std::vector<double> gcells;
  for (const auto& item : batch) {
    EncoderActs acts;
    encoder_forward(p, *item.image, acts);
    auto cells = cells_from_planes(acts.a3);
    auto labels = losses::downsample_partition(*item.partition, kDownsample);

    losses::R2RBatch rb;
    rb.dim = kEmbedDim;
    rb.cells = int(labels.size());
    rb.embeddings = cells.data();
    rb.labels = labels.data();
    rb.tau = tau;
    rb.normalize = normalize;
    gcells.assign(cells.size(), 0.0);
    auto loss = losses::r2r_loss(rb, gcells.data());
    if (!loss) continue;  // single-region after downsampling: skip signal
    total += *loss;
    ++used;

    // d a3 (planar) from cell-major grads, chained through the tanh.
    Planes da3(kConv3, acts.a3.h, acts.a3.w);
    for (int c = 0; c < kConv3; ++c) {
      double* dp = da3.plane(c);
      const double* ap = acts.a3.plane(c);
      for (int y = 0; y < acts.a3.h; ++y)
        for (int x = 0; x < acts.a3.w; ++x) {
          const size_t px = size_t(y) * acts.a3.w + x;
          const double a = ap[px];
          dp[px] = gcells[(size_t(y) * acts.a3.w + x) * kEmbedDim + c] * (1.0 - a * a);
        }
    }

    Planes da2(kConv2, acts.a2.h, acts.a2.w);
    conv_backward(acts.a2, w3d.data(), da3, g["enc.conv3.w"], g["enc.conv3.b"], &da2);
    for (size_t i = 0; i < da2.data.size(); ++i) {
      const double a = acts.a2.data[i];
      da2.data[i] *= (1.0 - a * a);
    }
    Planes da1(kConv1, acts.a1.h, acts.a1.w);
    conv_backward(acts.a1, w2d.data(), da2, g["enc.conv2.w"], g["enc.conv2.b"], &da1);
    for (size_t i = 0; i < da1.data.size(); ++i) {
      const double a = acts.a1.data[i];
      da1.data[i] *= (1.0 - a * a);
    }
    conv_backward(acts.in, nullptr, da1, g["enc.conv1.w"], g["enc.conv1.b"], nullptr);
  }

  if (used == 0)
    throw ConfigError("pretrain batch: every image is single-region at cell resolution");
  const double scale = 1.0 / used;
  for (double& v : grad) v *= scale;
  const double loss = total * scale;
  check_finite(p, loss, "pretrain");
  zero_frozen(p, grad);
  return loss;
}

double train_loss_and_grad(const ModelParams& p, const std::vector<TrainItem>& batch,
                           const losses::LossSpec& spec, std::vector<double>& grad,
                           double* mean_acc, std::vector<double>* item_accs) {
  if (batch.empty()) throw ArgumentError("train_loss_and_grad: empty batch");
  double acc_sum = 0;
  if (item_accs) item_accs->clear();
  grad.assign(p.size(), 0.0);
  GradView g{grad, p};
  const float* w1 = p.data("dec.w1");
  const float* w2 = p.data("dec.w2");
  const float* cw = p.data("conf.w");

  double total = 0;
  DecodeActs acts;
  std::vector<double> cells, logits, dlogits, dcell;
  for (const auto& item : batch) {
    const EmbeddingGrid& grid = *item.grid;
    const int rows = grid.rows, cols = grid.cols, ncells = grid.cells();
    cells.assign(grid.data.begin(), grid.data.end());
    decode_forward(p, cells.data(), ncells, item.prompt, acts);
    upsample_bilinear_d(acts.cell_logits, rows, cols, logits);

    dlogits.assign(logits.size(), 0.0);
    double d_conf = 0;
    total += losses::total_loss(logits, *item.mask, acts.conf, spec, dlogits.data(), &d_conf);
    if (mean_acc || item_accs) {
      size_t correct = 0, valid = 0;
      for (size_t i = 0; i < logits.size(); ++i) {
        const int8_t y = item.mask->data[i];
        if (y < 0) continue;
        ++valid;
        if ((logits[i] > 0.0 ? 1 : 0) == y) ++correct;
      }
      const double a = valid ? double(correct) / double(valid) : 0.0;
      acc_sum += a;
      if (item_accs) item_accs->push_back(a);
    }

    upsample_transpose(dlogits, rows, cols, dcell);

    // Confidence head: s = σ(cw·m + cb).
    const double da = d_conf * acts.conf * (1.0 - acts.conf);
    double* gcw = g["conf.w"];
    for (int k = 0; k < kHiddenDim; ++k) gcw[k] += da * acts.mean_hidden[k];
    g["conf.b"][0] += da;

    double* gw1 = g["dec.w1"];
    double* gb1 = g["dec.b1"];
    double* gw2 = g["dec.w2"];
    double* gb2 = g["dec.b2"];
    double z[kZDim];
    for (int j = 0; j < 2 * kEmbedDim; ++j)
      z[kEmbedDim + j] =
          (item.prompt && size_t(j) < item.prompt->size()) ? (*item.prompt)[j] : 0.0;
    normalize_embed(z + 2 * kEmbedDim);
    const double inv_cells = 1.0 / ncells;
    for (int c = 0; c < ncells; ++c) {
      const double* e = cells.data() + size_t(c) * kEmbedDim;
      for (int j = 0; j < kEmbedDim; ++j) z[j] = e[j];
      normalize_embed(z);
      double dot = 0;
      for (int j = 0; j < kEmbedDim; ++j) dot += z[j] * z[2 * kEmbedDim + j];
      z[3 * kEmbedDim] = dot;
      const double* h = acts.hidden.data() + size_t(c) * kHiddenDim;
      const double dl = dcell[c];
      gb2[0] += dl;
      for (int k = 0; k < kHiddenDim; ++k) {
        const double dh = dl * double(w2[k]) + da * double(cw[k]) * inv_cells;
        gw2[k] += dl * h[k];
        const double dpre = dh * (1.0 - h[k] * h[k]);
        gb1[k] += dpre;
        double* row = gw1 + size_t(k) * kZDim;
        for (int j = 0; j < kZDim; ++j) row[j] += dpre * z[j];
      }
    }
  }
  (void)w1;

  const double scale = 1.0 / double(batch.size());
  for (double& v : grad) v *= scale;
  const double loss = total * scale;
  if (mean_acc) *mean_acc = acc_sum * scale;
  check_finite(p, loss, "train");
  zero_frozen(p, grad);
  return loss;
}

}  // namespace safire::net
