#include "safire/maskops.hpp"

#include <algorithm>
#include <set>

namespace safire::maskops {

ComponentPartition connected_components(const BinaryMask& mask) {
  const int h = mask.height, w = mask.width;
  ComponentPartition part;
  part.height = h;
  part.width = w;
  part.label_map.assign(size_t(h) * w, -1);

  std::vector<int32_t> stack;
  for (int start = 0; start < h * w; ++start) {
    if (part.label_map[start] >= 0) continue;
    const uint8_t value = mask.data[start];
    const int32_t id = part.count++;
    part.component_value.push_back(value);
    part.label_map[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      int px = stack.back();
      stack.pop_back();
      int r = px / w, c = px % w;
      const int nr[4] = {r - 1, r + 1, r, r};
      const int nc[4] = {c, c, c - 1, c + 1};
      for (int k = 0; k < 4; ++k) {
        if (nr[k] < 0 || nr[k] >= h || nc[k] < 0 || nc[k] >= w) continue;
        int np = nr[k] * w + nc[k];
        if (part.label_map[np] < 0 && mask.data[np] == value) {
          part.label_map[np] = id;
          stack.push_back(np);
        }
      }
    }
  }

  std::vector<std::set<int32_t>> adj(part.count);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int32_t a = part.label_map[size_t(r) * w + c];
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          int32_t b = part.label_map[size_t(rr) * w + cc];
          if (a != b) adj[a].insert(b);
        }
    }
  part.adjacency.resize(part.count);
  for (int i = 0; i < part.count; ++i)
    part.adjacency[i].assign(adj[i].begin(), adj[i].end());
  return part;
}

PointMask point_mask(const ComponentPartition& comps, PointPrompt p) {
  if (p.row < 0 || p.row >= comps.height || p.col < 0 || p.col >= comps.width)
    throw ArgumentError("point prompt (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                        ") outside " + std::to_string(comps.height) + "x" +
                        std::to_string(comps.width));
  const int32_t home = comps.at(p.row, p.col);
  std::vector<int8_t> role(comps.count, -1);
  role[home] = 1;
  for (int32_t n : comps.adjacency[home]) role[n] = 0;
  PointMask out(comps.height, comps.width);
  for (size_t i = 0; i < comps.label_map.size(); ++i) out.data[i] = role[comps.label_map[i]];
  return out;
}

PointMask point_mask(const BinaryMask& mask, PointPrompt p) {
  return point_mask(connected_components(mask), p);
}

std::vector<std::pair<PointPrompt, PointPrompt>> sample_point_pairs(const BinaryMask& mask,
                                                                    int pairs, Seed seed) {
  std::vector<int32_t> zeros, ones;
  for (int i = 0; i < mask.height * mask.width; ++i)
    (mask.data[i] ? ones : zeros).push_back(i);
  const std::vector<int32_t>& first = zeros.empty() ? ones : zeros;
  const std::vector<int32_t>& second = ones.empty() ? zeros : ones;

  Rng rng(seed);
  std::vector<std::pair<PointPrompt, PointPrompt>> out;
  out.reserve(size_t(pairs));
  auto pick = [&](const std::vector<int32_t>& pool) {
    int32_t px = pool[rng.below(pool.size())];
    return PointPrompt{px / mask.width, px % mask.width};
  };
  for (int i = 0; i < pairs; ++i) {
    PointPrompt a = pick(first);
    PointPrompt b = pick(second);
    out.emplace_back(a, b);
  }
  return out;
}

}  // namespace safire::maskops
