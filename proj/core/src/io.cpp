#include "safire/io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/core.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace safire::io {

namespace {

void put_u16(std::ostream& os, uint16_t v) {
  char b[2] = {char(v & 0xff), char(v >> 8)};
  os.write(b, 2);
}
void put_u32(std::ostream& os, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char(v >> 24)};
  os.write(b, 4);
}
uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return uint16_t(b[0]) | uint16_t(b[1]) << 8;
}
uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

void put_f32(std::ostream& os, const float* p, size_t n) {
  static_assert(sizeof(float) == 4);
  // Little-endian host assumed (asserted at startup below).
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n * 4));
}

void get_f32(std::istream& is, float* p, size_t n) {
  is.read(reinterpret_cast<char*>(p), std::streamsize(n * 4));
}

struct EndianCheck {
  EndianCheck() {
    uint32_t x = 1;
    char c;
    std::memcpy(&c, &x, 1);
    if (c != 1) throw std::runtime_error("big-endian hosts unsupported");
  }
} endian_check;

cv::Mat read_gray_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot read PNG: " + path);
  return m;
}

}  // namespace

void write_prediction(const PredictionMap& map, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("SAFR", 4);
  put_u16(os, 1);
  os.put(0);  // dtype f32
  os.put(2);  // ndims
  put_u32(os, uint32_t(map.height));
  put_u32(os, uint32_t(map.width));
  put_f32(os, map.data.data(), map.data.size());
  if (!os) throw IoError("write failed: " + path);
}

PredictionMap read_prediction(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SAFR", 4) != 0) throw FormatError("bad magic in " + path);
  uint16_t ver = get_u16(is);
  if (ver != 1) throw FormatError("unsupported version " + std::to_string(ver) + " in " + path);
  int dtype = is.get();
  if (dtype != 0) throw FormatError("unsupported dtype in " + path);
  int ndims = is.get();
  if (ndims != 2) throw FormatError("expected 2 dims in " + path);
  uint32_t h = get_u32(is), w = get_u32(is);
  if (!is) throw FormatError("truncated header in " + path);
  PredictionMap map{int(h), int(w)};
  get_f32(is, map.data.data(), map.data.size());
  if (!is) throw FormatError("truncated data in " + path);
  return map;
}

BinaryMask read_mask_png(const std::string& path) {
  cv::Mat m = read_gray_png(path);
  BinaryMask mask(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      uint8_t v = m.at<uint8_t>(r, c);
      if (v == 0)
        mask.at(r, c) = 0;
      else if (v == 255)
        mask.at(r, c) = 1;
      else
        throw FormatError("binary mask pixel value " + std::to_string(int(v)) + " in " + path +
                          " (expected 0 or 255)");
    }
  return mask;
}

SourcePartition read_partition_png(const std::string& path) {
  cv::Mat m = read_gray_png(path);
  SourcePartition part(m.rows, m.cols);
  int max_label = 0;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      uint8_t v = m.at<uint8_t>(r, c);
      if (v == 255)
        throw FormatError("partition pixel value 255 is reserved, in " + path);
      part.at(r, c) = v;
      max_label = std::max(max_label, int(v));
    }
  part.sources = max_label + 1;
  part.validate();
  return part;
}

void write_mask_png(const BinaryMask& mask, const std::string& path) {
  cv::Mat m(mask.height, mask.width, CV_8U);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) m.at<uint8_t>(r, c) = mask.at(r, c) ? 255 : 0;
  if (!cv::imwrite(path, m)) throw IoError("cannot write PNG: " + path);
}

void write_partition_png(const SourcePartition& part, const std::string& path) {
  cv::Mat m(part.height, part.width, CV_8U);
  for (int r = 0; r < part.height; ++r)
    for (int c = 0; c < part.width; ++c) m.at<uint8_t>(r, c) = part.at(r, c);
  if (!cv::imwrite(path, m)) throw IoError("cannot write PNG: " + path);
}

void write_image_png(const Image& img, const std::string& path) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      // OpenCV stores BGR.
      auto& px = m.at<cv::Vec3b>(r, c);
      for (int ch = 0; ch < 3; ++ch)
        px[2 - ch] = uint8_t(std::lround(std::clamp(img.at(r, c, ch), 0.f, 1.f) * 255.f));
    }
  if (!cv::imwrite(path, m)) throw IoError("cannot write PNG: " + path);
}

Image read_image_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("cannot read PNG: " + path);
  Image img(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      const auto& px = m.at<cv::Vec3b>(r, c);
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = float(px[2 - ch]) / 255.f;
    }
  return img;
}

void write_heatmap_png(const PredictionMap& heat, const std::string& path) {
  cv::Mat m(heat.height, heat.width, CV_8U);
  for (int r = 0; r < heat.height; ++r)
    for (int c = 0; c < heat.width; ++c)
      m.at<uint8_t>(r, c) = uint8_t(std::lround(std::clamp(heat.at(r, c), 0.f, 1.f) * 255.f));
  if (!cv::imwrite(path, m)) throw IoError("cannot write PNG: " + path);
}

void NamedBlocks::add(const std::string& name, std::vector<uint32_t> dims,
                      std::vector<float> data) {
  size_t n = 1;
  for (uint32_t d : dims) n *= d;
  if (n != data.size()) throw ArgumentError("block " + name + " dims/data mismatch");
  blocks.emplace_back(name, std::make_pair(std::move(dims), std::move(data)));
}

const std::pair<std::vector<uint32_t>, std::vector<float>>& NamedBlocks::get(
    const std::string& name) const {
  for (auto& [n, b] : blocks)
    if (n == name) return b;
  throw FormatError("missing block: " + name);
}

bool NamedBlocks::has(const std::string& name) const {
  for (auto& [n, b] : blocks)
    if (n == name) return true;
  return false;
}

void write_blocks(const NamedBlocks& blocks, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("SAFR", 4);
  put_u16(os, 1);
  os.put(0);  // dtype f32
  os.put(0);  // reserved
  put_u32(os, uint32_t(blocks.blocks.size()));
  for (const auto& [name, b] : blocks.blocks) {
    put_u16(os, uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    os.put(char(b.first.size()));
    for (uint32_t d : b.first) put_u32(os, d);
    put_f32(os, b.second.data(), b.second.size());
  }
  if (!os) throw IoError("write failed: " + path);
}

NamedBlocks read_blocks(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SAFR", 4) != 0) throw FormatError("bad magic in " + path);
  uint16_t ver = get_u16(is);
  if (ver != 1) throw FormatError("unsupported version " + std::to_string(ver) + " in " + path);
  int dtype = is.get();
  is.get();  // reserved
  if (dtype != 0) throw FormatError("unsupported dtype in " + path);
  uint32_t count = get_u32(is);
  NamedBlocks out;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t len = get_u16(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    int ndims = is.get();
    if (ndims < 0) throw FormatError("truncated block header in " + path);
    std::vector<uint32_t> dims(static_cast<size_t>(ndims), 0u);
    size_t n = 1;
    for (auto& d : dims) {
      d = get_u32(is);
      n *= d;
    }
    std::vector<float> data(n);
    get_f32(is, data.data(), n);
    if (!is) throw FormatError("truncated block data in " + path);
    out.add(name, std::move(dims), std::move(data));
  }
  return out;
}

}  // namespace safire::io
