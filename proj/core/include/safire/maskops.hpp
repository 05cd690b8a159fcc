#pragma once

#include <vector>

#include "safire/rng.hpp"
#include "safire/types.hpp"

namespace safire::maskops {

/// Connected components of a binary mask. Components are maximal
/// 4-connected sets of equal value; ids follow raster-scan order of each
/// component's first pixel. Adjacency is computed under 8-connectivity, so
/// diagonal contact counts as neighboring.
struct ComponentPartition {
  int height = 0;
  int width = 0;
  int count = 0;
  std::vector<int32_t> label_map;            // per pixel, component id
  std::vector<uint8_t> component_value;      // per component, original {0,1}
  std::vector<std::vector<int32_t>> adjacency;  // per component, sorted neighbor ids

  int32_t at(int r, int c) const { return label_map[static_cast<size_t>(r) * width + c]; }
};

ComponentPartition connected_components(const BinaryMask& mask);

/// Point mask for prompt p: 1 on the component containing p, 0 on its
/// 8-adjacent neighbor components (of either value), -1 elsewhere.
PointMask point_mask(const BinaryMask& mask, PointPrompt p);

// Same but reusing a precomputed partition of the mask.
PointMask point_mask(const ComponentPartition& comps, PointPrompt p);

/// Paired training prompts: first point uniform over {Y=0}, second over
/// {Y=1}. If one value is absent both points come from the present value.
std::vector<std::pair<PointPrompt, PointPrompt>> sample_point_pairs(const BinaryMask& mask,
                                                                    int pairs, Seed seed);

}  // namespace safire::maskops
