#include "safire/synth.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

#include "safire/rng.hpp"

namespace safire::synth {

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Single-octave value noise: a lattice of Gaussian values, smoothly
// interpolated over the full square.
std::vector<double> value_noise(Rng& rng, int size, int lattice) {
  std::vector<double> grid(size_t(lattice + 1) * (lattice + 1));
  for (double& v : grid) v = rng.normal();
  std::vector<double> out(size_t(size) * size);
  const double scale = double(lattice) / size;
  for (int r = 0; r < size; ++r) {
    const double gy = r * scale;
    const int iy = std::min(int(gy), lattice - 1);
    const double ty = smoothstep(gy - iy);
    for (int c = 0; c < size; ++c) {
      const double gx = c * scale;
      const int ix = std::min(int(gx), lattice - 1);
      const double tx = smoothstep(gx - ix);
      const double v00 = grid[size_t(iy) * (lattice + 1) + ix];
      const double v01 = grid[size_t(iy) * (lattice + 1) + ix + 1];
      const double v10 = grid[size_t(iy + 1) * (lattice + 1) + ix];
      const double v11 = grid[size_t(iy + 1) * (lattice + 1) + ix + 1];
      out[size_t(r) * size + c] =
          (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
    }
  }
  return out;
}

std::vector<double> octave_field(Rng& rng, int size) {
  std::vector<double> field(size_t(size) * size, 0.0);
  double amp = 1.0;
  for (int lattice : {4, 8, 16, 32}) {
    auto oct = value_noise(rng, size, lattice);
    for (size_t i = 0; i < field.size(); ++i) field[i] += amp * oct[i];
    amp *= 0.5;
  }
  auto [mn, mx] = std::minmax_element(field.begin(), field.end());
  const double lo = *mn, span = std::max(*mx - lo, 1e-12);
  for (double& v : field) v = (v - lo) / span;
  return field;
}

Image base_texture(Rng& rng, int size) {
  auto field = octave_field(rng, size);
  double c0[3], c1[3];
  for (int k = 0; k < 3; ++k) {
    c0[k] = rng.uniform(0.25, 0.75);
    c1[k] = rng.uniform(0.25, 0.75);
  }
  const double ga = rng.uniform(-1, 1) * 0.08, gb = rng.uniform(-1, 1) * 0.08;
  Image img(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double t = field[size_t(r) * size + c];
      const double grad = ga * (double(c) / size) + gb * (double(r) / size);
      for (int k = 0; k < 3; ++k)
        img.at(r, c, k) = float(std::clamp(c0[k] + (c1[k] - c0[k]) * t + grad, 0.05, 0.95));
    }
  return img;
}

Image clamp01(Image img) {
  for (float& v : img.data) v = std::clamp(v, 0.f, 1.f);
  return img;
}

Image stamp_signature(const Image& src, const SourceSignature& sig, Rng& rng) {
  Image img = src;
  if (sig.blur_sigma > 1e-6) img = apply_blur(img, sig.blur_sigma);
  if (sig.noise_sigma > 1e-9) {
    for (float& v : img.data) v = float(v + rng.normal() * sig.noise_sigma);
  }
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int k = 0; k < 3; ++k) img.at(r, c, k) = float(img.at(r, c, k) * sig.color_gain[k]);
  if (sig.quant_step > 0) {
    for (float& v : img.data) v = float(std::round(v / sig.quant_step) * sig.quant_step);
  }
  return clamp01(std::move(img));
}

std::vector<double> signature_coords(const SourceSignature& s) {
  return {s.noise_sigma / 0.08,       (s.color_gain[0] - 1.0) / 0.15,
          (s.color_gain[1] - 1.0) / 0.15, (s.color_gain[2] - 1.0) / 0.15,
          s.quant_step * 32.0,        s.blur_sigma / 1.2};
}

double signature_dist(const SourceSignature& a, const SourceSignature& b) {
  auto ca = signature_coords(a), cb = signature_coords(b);
  double d = 0;
  for (size_t i = 0; i < ca.size(); ++i) d = std::max(d, std::abs(ca[i] - cb[i]));
  return d;
}

SourceSignature random_signature(Rng& rng) {
  SourceSignature s;
  s.noise_sigma = rng.uniform(0.0, 0.08);
  for (int k = 0; k < 3; ++k) s.color_gain[k] = rng.uniform(0.85, 1.15);
  const double steps[3] = {0.0, 1.0 / 64.0, 1.0 / 32.0};
  s.quant_step = steps[rng.below(3)];
  s.blur_sigma = rng.uniform(0.0, 1.2);
  return s;
}

std::vector<SourceSignature> sample_signatures(Rng& rng, int n, double margin, int retries) {
  std::vector<SourceSignature> sigs;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int t = 0; t < retries && !placed; ++t) {
      SourceSignature cand = random_signature(rng);
      placed = true;
      for (const auto& s : sigs)
        if (signature_dist(cand, s) < margin) placed = false;
      if (placed) sigs.push_back(cand);
    }
    if (!placed)
      throw GenerationError("could not place " + std::to_string(n) +
                            " signatures at margin " + std::to_string(margin));
  }
  return sigs;
}

// Irregular blob covering roughly `frac` of the square: smooth noise plus a
// radial bump, thresholded at the matching quantile.
std::vector<uint8_t> blob_mask(Rng& rng, int size, double frac) {
  auto field = octave_field(rng, size);
  const double cy = rng.uniform(0.2, 0.8) * size;
  const double cx = rng.uniform(0.2, 0.8) * size;
  const double radius = rng.uniform(0.18, 0.4) * size;
  std::vector<double> score(size_t(size) * size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double d = std::hypot(r - cy, c - cx) / radius;
      score[size_t(r) * size + c] = 0.45 * field[size_t(r) * size + c] + 0.55 * (1.0 - d * d);
    }
  std::vector<double> sorted = score;
  const size_t k = size_t((1.0 - frac) * double(sorted.size()));
  std::nth_element(sorted.begin(), sorted.begin() + long(k), sorted.end());
  const double thresh = sorted[k];
  std::vector<uint8_t> mask(score.size());
  for (size_t i = 0; i < score.size(); ++i) mask[i] = score[i] > thresh ? 1 : 0;
  return mask;
}

}  // namespace

Sample generate_sample(Seed seed, int size, int n_sources, const GenConfig& cfg) {
  if (n_sources < 1 || n_sources > 6)
    throw ArgumentError("n_sources must be in [1,6], got " + std::to_string(n_sources));
  if (size % kDownsample)
    throw ArgumentError("size must be a multiple of " + std::to_string(kDownsample));

  const size_t min_pixels = size_t(std::ceil(0.02 * double(size) * size));
  Rng root(seed);
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Rng rng = root.split(uint64_t(attempt));
    auto sigs = sample_signatures(rng, n_sources, cfg.min_margin, 1024);

    Rng tex_rng = rng.split(1);
    Image base = base_texture(tex_rng, size);
    Rng sig_rng = rng.split(2);
    Sample out;
    out.image = stamp_signature(base, sigs[0], sig_rng);
    out.partition = SourcePartition(size, size, n_sources);
    out.signatures = sigs;

    for (int s = 1; s < n_sources; ++s) {
      Rng blob_rng = rng.split(100 + uint64_t(s));
      const double frac = blob_rng.uniform(0.06, 0.20);
      auto mask = blob_mask(blob_rng, size, frac);
      Rng content_rng = rng.split(200 + uint64_t(s));
      Image content = stamp_signature(base_texture(content_rng, size), sigs[s], content_rng);
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
          if (mask[size_t(r) * size + c]) {
            out.partition.at(r, c) = uint8_t(s);
            for (int k = 0; k < 3; ++k) out.image.at(r, c, k) = content.at(r, c, k);
          }
    }

    std::vector<size_t> counts(size_t(n_sources), 0);
    for (uint8_t v : out.partition.data) ++counts[v];
    bool ok = true;
    for (size_t cnt : counts)
      if (cnt < min_pixels) ok = false;
    if (!ok) continue;
    out.partition.validate();
    return out;
  }
  throw GenerationError("region-size constraint unsatisfiable after " +
                        std::to_string(cfg.max_retries) + " attempts (seed " +
                        std::to_string(seed) + ")");
}

BinaryMask partition_to_binary(const SourcePartition& p) {
  BinaryMask m(p.height, p.width);
  for (size_t i = 0; i < p.data.size(); ++i) m.data[i] = p.data[i] != 0 ? 1 : 0;
  return m;
}

namespace {

cv::Mat to_mat(const Image& img) {
  cv::Mat m(img.height, img.width, CV_64FC3);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      auto& px = m.at<cv::Vec3d>(r, c);
      for (int k = 0; k < 3; ++k) px[k] = img.at(r, c, k);
    }
  return m;
}

Image from_mat(const cv::Mat& m) {
  Image img(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      const auto& px = m.at<cv::Vec3d>(r, c);
      for (int k = 0; k < 3; ++k) img.at(r, c, k) = float(px[k]);
    }
  return clamp01(std::move(img));
}

}  // namespace

Image apply_blur(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  cv::Mat m = to_mat(img), out;
  cv::GaussianBlur(m, out, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
  return from_mat(out);
}

Image apply_noise(const Image& img, double sigma, Seed seed) {
  if (sigma <= 0) return img;
  Rng rng(seed);
  Image out = img;
  for (float& v : out.data) v = float(v + rng.normal() * sigma);
  return clamp01(std::move(out));
}

Image apply_gamma(const Image& img, double gamma) {
  if (gamma == 1.0) return img;
  Image out = img;
  for (float& v : out.data) v = float(std::pow(std::max(v, 0.f), gamma));
  return clamp01(std::move(out));
}

Image apply_contrast(const Image& img, double factor) {
  if (factor == 1.0) return img;
  Image out = img;
  for (float& v : out.data) v = float((v - 0.5) * factor + 0.5);
  return clamp01(std::move(out));
}

Image apply_jpeg(const Image& img, int quality) {
  // Quality >= 100 is the identity level of the robustness sweep.
  if (quality >= 100) return img;
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      auto& px = m.at<cv::Vec3b>(r, c);
      for (int k = 0; k < 3; ++k)
        px[2 - k] = uint8_t(std::lround(std::clamp(img.at(r, c, k), 0.f, 1.f) * 255.f));
    }
  std::vector<uint8_t> buf;
  cv::imencode(".jpg", m, buf, {cv::IMWRITE_JPEG_QUALITY, quality});
  cv::Mat dec = cv::imdecode(buf, cv::IMREAD_COLOR);
  Image out(dec.rows, dec.cols);
  for (int r = 0; r < dec.rows; ++r)
    for (int c = 0; c < dec.cols; ++c) {
      const auto& px = dec.at<cv::Vec3b>(r, c);
      for (int k = 0; k < 3; ++k) out.at(r, c, k) = float(px[2 - k]) / 255.f;
    }
  return out;
}

Image postprocess(const Image& img, const PostProcessConfig& cfg, Seed seed) {
  Rng rng(seed);
  Image out = img;
  if (rng.uniform() < cfg.p_blur)
    out = apply_blur(out, rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi));
  if (rng.uniform() < cfg.p_noise)
    out = apply_noise(out, rng.uniform(cfg.noise_sigma_lo, cfg.noise_sigma_hi), rng.next_u64());
  if (rng.uniform() < cfg.p_gamma)
    out = apply_gamma(out, rng.uniform(cfg.gamma_lo, cfg.gamma_hi));
  if (rng.uniform() < cfg.p_contrast)
    out = apply_contrast(out, rng.uniform(cfg.contrast_lo, cfg.contrast_hi));
  if (rng.uniform() < cfg.p_jpeg)
    out = apply_jpeg(out, int(rng.below(uint64_t(cfg.jpeg_quality_hi - cfg.jpeg_quality_lo + 1)) +
                              uint64_t(cfg.jpeg_quality_lo)));
  return out;
}

}  // namespace safire::synth
