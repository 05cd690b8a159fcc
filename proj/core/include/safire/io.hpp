#pragma once

#include <map>
#include <string>
#include <vector>

#include "safire/types.hpp"

namespace safire::io {

// SAFR tensor file: magic "SAFR", u16 version (=1), u8 dtype (0 = f32 LE),
// u8 ndims, each dim as u32 LE, then raw row-major f32 data.
void write_prediction(const PredictionMap& map, const std::string& path);
PredictionMap read_prediction(const std::string& path);

// PNG mask conventions: binary masks store {0,255}; partitions store the
// source index directly (255 reserved). Any other value is rejected.
BinaryMask read_mask_png(const std::string& path);
SourcePartition read_partition_png(const std::string& path);
void write_mask_png(const BinaryMask& mask, const std::string& path);
void write_partition_png(const SourcePartition& part, const std::string& path);

// 8-bit RGB PNG; floats quantized by round(v*255).
void write_image_png(const Image& img, const std::string& path);
Image read_image_png(const std::string& path);

// Heatmap visualization: [0,1] values scaled to 8-bit grayscale.
void write_heatmap_png(const PredictionMap& heat, const std::string& path);

// Checkpoint container: magic "SAFR", u16 version (=1), u8 dtype (0 = f32),
// u8 reserved, u32 block count, then per block: u16 name length, name bytes,
// u8 ndims, dims as u32 LE, f32 LE data.
struct NamedBlocks {
  // Insertion-ordered.
  std::vector<std::pair<std::string, std::pair<std::vector<uint32_t>, std::vector<float>>>> blocks;

  void add(const std::string& name, std::vector<uint32_t> dims, std::vector<float> data);
  const std::pair<std::vector<uint32_t>, std::vector<float>>& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_blocks(const NamedBlocks& blocks, const std::string& path);
NamedBlocks read_blocks(const std::string& path);

}  // namespace safire::io
