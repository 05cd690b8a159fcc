#pragma once

#include <array>
#include <string>
#include <vector>

#include "safire/losses.hpp"
#include "safire/types.hpp"

namespace safire::net {

// Toy promptable segmentation model: a 3-layer stride-2 conv encoder over
// [rgb, rectified high-passed luminance] (4 channels in, kEmbedDim out,
// total downsampling kDownsample), a frozen random-Fourier positional
// prompt code concatenated with the prompted cell's embedding, and a
// per-cell MLP decoder with a confidence head.

inline constexpr int kHiddenDim = 32;
inline constexpr double kHighpassCutoff = 0.25;

struct ParamBlock {
  std::string name;
  size_t offset;
  size_t size;
  std::vector<uint32_t> dims;
  int group;  // index into kGroupNames
};

enum ParamGroup { kGroupEncoder = 0, kGroupPrompt = 1, kGroupDecoder = 2, kGroupConfidence = 3 };
inline constexpr std::array<const char*, 4> kGroupNames = {"enc", "prompt", "dec", "conf"};

/// All trainable state, flat f32 storage with a named block index. Loss and
/// gradient computation widens to double on the fly.
struct ModelParams {
  std::vector<float> values;
  std::vector<ParamBlock> blocks;
  // Groups whose gradients are forced to zero. The prompt projection is
  // always frozen after init.
  std::array<bool, 4> frozen = {false, true, false, false};

  static ModelParams init(Seed seed);

  const ParamBlock& block(const std::string& name) const;
  float* data(const std::string& name);
  const float* data(const std::string& name) const;
  size_t size() const { return values.size(); }
};

void save_checkpoint(const ModelParams& p, const std::string& path,
                     const std::vector<float>* momentum = nullptr);
ModelParams load_checkpoint(const std::string& path, std::vector<float>* momentum = nullptr);

// Positional code (kEmbedDim values in [-1,1]) optionally followed by the
// encoder embedding of the prompted cell; the decoder zero-pads whatever is
// absent.
using PromptEmbedding = std::vector<double>;

/// Per-channel FFT high-pass: bins with radial frequency below
/// cutoff * Nyquist are zeroed.
Image highpass(const Image& img, double cutoff);

EmbeddingGrid encode_image(const ModelParams& p, const Image& img);

PromptEmbedding encode_prompt(const ModelParams& p, PointPrompt pt, int h, int w);

/// Positional code plus the encoder embedding at the prompt's cell — the
/// form the trained decoder expects.
PromptEmbedding encode_prompt(const ModelParams& p, PointPrompt pt, const EmbeddingGrid& grid);

struct Decoded {
  PredictionMap map;
  ConfidenceScore confidence;
};

std::vector<Decoded> decode(const ModelParams& p, const EmbeddingGrid& grid,
                            const std::vector<PromptEmbedding>& prompts);

// ----- training-facing API (double precision throughout) -----

struct PretrainItem {
  const Image* image;
  const SourcePartition* partition;
};

/// L_R2R over the batch (mean over images with >= 2 cell regions) and its
/// gradient w.r.t. all encoder parameters; frozen-group entries stay zero.
/// Throws ConfigError if every image in the batch is single-region after
/// downsampling, NumericalError on a NaN forward value.
double pretrain_loss_and_grad(const ModelParams& p, const std::vector<PretrainItem>& batch,
                              double tau, bool normalize, std::vector<double>& grad);

struct TrainItem {
  const EmbeddingGrid* grid;       // precomputed, encoder is frozen here
  const PromptEmbedding* prompt;   // null for the unprompted baseline
  const PointMask* mask;
};

/// Mean of the per-prompt total loss over the batch plus gradients for the
/// decoder and confidence head. `mean_acc`, when given, receives the mean
/// valid-pixel accuracy of the binarized maps; `item_accs` the per-item ones.
double train_loss_and_grad(const ModelParams& p, const std::vector<TrainItem>& batch,
                           const losses::LossSpec& spec, std::vector<double>& grad,
                           double* mean_acc = nullptr, std::vector<double>* item_accs = nullptr);

// Exposed for tests and inference: bilinear ×kDownsample upsample of per-cell
// logits and its transpose.
PredictionMap upsample_bilinear(const std::vector<double>& cell_logits, int rows, int cols);
std::vector<double> downsample_bilinear(const PredictionMap& x, int rows, int cols);

}  // namespace safire::net
