#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace safire {

// Encoder downsampling ratio. Image dimensions must be multiples of this.
inline constexpr int kDownsample = 8;
// Embedding dimensionality.
inline constexpr int kEmbedDim = 16;

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// H×W×3 raster, values in [0,1], row-major, channel-interleaved (r,g,b).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // size h*w*3

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.f) {}

  float& at(int r, int c, int ch) { return data[(static_cast<size_t>(r) * width + c) * 3 + ch]; }
  float at(int r, int c, int ch) const {
    return data[(static_cast<size_t>(r) * width + c) * 3 + ch];
  }
  size_t pixels() const { return static_cast<size_t>(height) * width; }
};

/// Per-pixel labels in {0,1}.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}

  uint8_t& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  uint8_t at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
  size_t pixels() const { return static_cast<size_t>(height) * width; }
};

/// Per-pixel source labels 0..r-1. A valid partition uses every label at
/// least once; build with validate() when that matters.
struct SourcePartition {
  int height = 0;
  int width = 0;
  int sources = 1;  // r
  std::vector<uint8_t> data;

  SourcePartition() = default;
  SourcePartition(int h, int w, int r = 1)
      : height(h), width(w), sources(r), data(static_cast<size_t>(h) * w, 0) {}

  uint8_t& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  uint8_t at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
  size_t pixels() const { return static_cast<size_t>(height) * width; }

  // Throws if some label in 0..sources-1 is absent or out of range.
  void validate() const;
};

/// Integer pixel coordinate handed to the prompt encoder.
struct PointPrompt {
  int row = 0;
  int col = 0;
};

/// Per-pixel labels in {-1,0,1}; -1 is ignored by the losses.
struct PointMask {
  int height = 0;
  int width = 0;
  std::vector<int8_t> data;

  PointMask() = default;
  PointMask(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, -1) {}

  int8_t& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  int8_t at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
};

/// dim × rows × cols feature tensor; cell-major storage (cell index =
/// row*cols+col, each cell a contiguous dim-vector).
struct EmbeddingGrid {
  int dim = 0;
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  EmbeddingGrid() = default;
  EmbeddingGrid(int d, int r, int c)
      : dim(d), rows(r), cols(c), data(static_cast<size_t>(d) * r * c, 0.f) {}

  float* cell(int r, int c) { return data.data() + (static_cast<size_t>(r) * cols + c) * dim; }
  const float* cell(int r, int c) const {
    return data.data() + (static_cast<size_t>(r) * cols + c) * dim;
  }
  const float* cell(int idx) const { return data.data() + static_cast<size_t>(idx) * dim; }
  int cells() const { return rows * cols; }
};

/// Full-resolution logit map.
struct PredictionMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  PredictionMap() = default;
  PredictionMap(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0.f) {}

  float& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  float at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
  size_t pixels() const { return static_cast<size_t>(height) * width; }
};

/// Model's predicted pixel accuracy of its own map, in [0,1].
using ConfidenceScore = double;

using Seed = uint64_t;

}  // namespace safire
