#pragma once

#include <vector>

#include "safire/types.hpp"

namespace safire::synth {

// Miniature multi-source sample generator. Each source carries a signature
// (noise level, color gains, quantization, blur) standing in for a distinct
// capture fingerprint; region shapes come from thresholded smooth noise.

struct SourceSignature {
  double noise_sigma = 0.0;      // additive Gaussian std, [0, 0.08]
  double color_gain[3] = {1, 1, 1};  // per-channel gain, [0.85, 1.15]
  double quant_step = 0.0;       // value quantization step, {0, 1/64, 1/32}
  double blur_sigma = 0.0;       // Gaussian blur of the source content, [0, 1.2]
};

struct GenConfig {
  // Minimum L∞ distance between any two signatures in normalized parameter
  // space. Higher = easier to tell sources apart.
  double min_margin = 0.35;
  int max_retries = 64;
};

struct PostProcessConfig {
  double p_blur = 0.3, p_noise = 0.3, p_gamma = 0.3, p_contrast = 0.3, p_jpeg = 0.3;
  double blur_sigma_lo = 0.3, blur_sigma_hi = 1.5;
  double noise_sigma_lo = 0.005, noise_sigma_hi = 0.04;
  double gamma_lo = 0.8, gamma_hi = 1.25;
  double contrast_lo = 0.8, contrast_hi = 1.2;
  int jpeg_quality_lo = 60, jpeg_quality_hi = 95;
};

struct Sample {
  Image image;
  SourcePartition partition;
  std::vector<SourceSignature> signatures;  // one per source, index = label
};

/// Deterministic multi-source sample: procedural base texture plus
/// n_sources-1 pasted blobs, each source (background included) stamped with
/// its own signature. Every label covers >= 2% of pixels.
Sample generate_sample(Seed seed, int size, int n_sources, const GenConfig& cfg = {});

/// 1 wherever the partition label is nonzero.
BinaryMask partition_to_binary(const SourcePartition& p);

/// Probabilistic global post-processing (the pretraining augmentation).
Image postprocess(const Image& img, const PostProcessConfig& cfg, Seed seed);

// Deterministic single transforms, shared with the robustness harness.
Image apply_blur(const Image& img, double sigma);
Image apply_noise(const Image& img, double sigma, Seed seed);
Image apply_gamma(const Image& img, double gamma);
Image apply_contrast(const Image& img, double factor);
Image apply_jpeg(const Image& img, int quality);  // real encode/decode round trip

}  // namespace safire::synth
