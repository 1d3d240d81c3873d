#ifndef SFATTACK_IO_HPP
#define SFATTACK_IO_HPP

// SFP1 scene-pair files and ASCII PLY point clouds.
//
// SFP1 layout (little-endian):
//   "SFP1" | flags u32 (bit0 color, bit1 flow) | n1 u32 | n2 u32
//   | pos1 f32[n1*3] | pos2 f32[n2*3] | col1, col2 if bit0 | flow f32[n1*3] if bit1

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sfattack/error.hpp"
#include "sfattack/pointcloud.hpp"

namespace sfattack {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint32_t kSfpHasColor = 1u << 0;
inline constexpr std::uint32_t kSfpHasFlow = 1u << 1;

namespace detail {

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(Bytes& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

inline void put_block(Bytes& out, const Tensor& t) {
  for (double v : t.data()) put_f32(out, v);
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  Tensor block(std::uint64_t rows, std::uint64_t cols) {
    if (cols != 0 && rows > remaining() / 4 / cols) {
      throw LengthError("truncated payload: block of " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " exceeds the " + std::to_string(remaining()) + " remaining bytes");
    }
    std::vector<double> data(rows * cols);
    for (double& v : data) v = f32();
    return Tensor::matrix(rows, cols, std::move(data));
  }

  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) {
      throw LengthError("truncated payload: need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                        ", have " + std::to_string(bytes_.size() - pos_));
    }
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Bytes save_sfp(const ScenePair& pair) {
  require_valid(pair);
  std::uint32_t flags = 0;
  if (pair.has_colors()) flags |= kSfpHasColor;
  if (pair.gt_flow) flags |= kSfpHasFlow;

  Bytes out{'S', 'F', 'P', '1'};
  detail::put_u32(out, flags);
  detail::put_u32(out, static_cast<std::uint32_t>(pair.pc1.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(pair.pc2.size()));
  detail::put_block(out, pair.pc1.positions);
  detail::put_block(out, pair.pc2.positions);
  if (pair.has_colors()) {
    detail::put_block(out, *pair.pc1.colors);
    detail::put_block(out, *pair.pc2.colors);
  }
  if (pair.gt_flow) detail::put_block(out, pair.gt_flow->vectors);
  // float narrowing can overflow finite doubles
  for (std::size_t i = 16; i + 4 <= out.size(); i += 4) {
    const std::uint32_t bits = out[i] | out[i + 1] << 8 | out[i + 2] << 16 | static_cast<std::uint32_t>(out[i + 3]) << 24;
    if (!std::isfinite(std::bit_cast<float>(bits))) throw ValidationError("save_sfp: value not representable as f32");
  }
  return out;
}

inline ScenePair load_sfp(std::span<const std::uint8_t> bytes, std::string id = {}) {
  if (bytes.size() < 4) throw LengthError("truncated header");
  if (!(bytes[0] == 'S' && bytes[1] == 'F' && bytes[2] == 'P' && bytes[3] == '1')) throw FormatError("bad magic");
  detail::ByteReader in(bytes.subspan(4));
  const std::uint32_t flags = in.u32();
  if (flags & ~(kSfpHasColor | kSfpHasFlow)) throw FormatError("unknown flag bits " + std::to_string(flags));
  const std::uint64_t n1 = in.u32();
  const std::uint64_t n2 = in.u32();

  ScenePair pair;
  pair.id = std::move(id);
  pair.pc1.positions = in.block(n1, 3);
  pair.pc2.positions = in.block(n2, 3);
  if (flags & kSfpHasColor) {
    pair.pc1.colors = in.block(n1, 3);
    pair.pc2.colors = in.block(n2, 3);
  }
  if (flags & kSfpHasFlow) pair.gt_flow = FlowField{in.block(n1, 3)};
  if (in.remaining() != 0) throw LengthError(std::to_string(in.remaining()) + " trailing bytes");
  require_valid(pair);
  return pair;
}

// ---------------------------------------------------------------------------
// ASCII PLY

inline std::string save_ply(const PointCloud& cloud) {
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\n";
  if (cloud.colors) out += "property float r\nproperty float g\nproperty float b\n";
  out += "end_header\n";
  char buf[48];
  auto emit = [&](double v, char sep) {
    std::snprintf(buf, sizeof buf, "%.9g%c", static_cast<double>(static_cast<float>(v)), sep);
    out += buf;
  };
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    emit(cloud.positions(i, 0), ' ');
    emit(cloud.positions(i, 1), ' ');
    emit(cloud.positions(i, 2), cloud.colors ? ' ' : '\n');
    if (cloud.colors) {
      emit((*cloud.colors)(i, 0), ' ');
      emit((*cloud.colors)(i, 1), ' ');
      emit((*cloud.colors)(i, 2), '\n');
    }
  }
  return out;
}

inline PointCloud load_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw FormatError("PLY: missing 'ply' magic line");

  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false, ascii = false;
  std::vector<std::string> props;
  while (true) {
    if (!std::getline(in, line)) throw FormatError("PLY: missing end_header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "format") {
      std::string kind;
      ls >> kind;
      ascii = kind == "ascii";
    } else if (word == "element") {
      std::string name;
      long long count = -1;
      ls >> name >> count;
      if (count < 0) throw FormatError("PLY: bad element count");
      in_vertex = name == "vertex";
      if (in_vertex) {
        if (seen_vertex) throw FormatError("PLY: duplicate vertex element");
        seen_vertex = true;
        vertex_count = static_cast<std::size_t>(count);
      }
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (type == "list") throw FormatError("PLY: list properties unsupported on vertex");
      props.push_back(name);
    } else if (word != "comment" && word != "obj_info" && word != "property" && !word.empty()) {
      throw FormatError("PLY: unexpected header line '" + line + "'");
    }
  }
  if (!ascii) throw FormatError("PLY: only ascii format is supported");
  if (!seen_vertex) throw FormatError("PLY: no vertex element");

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < props.size(); ++i) col[props[i]] = i;
  for (const char* axis : {"x", "y", "z"})
    if (!col.count(axis)) throw FormatError(std::string("PLY: missing property ") + axis);
  const bool has_rgb = col.count("r") && col.count("g") && col.count("b");

  // every vertex row needs at least one character per property
  if (vertex_count > text.size()) {
    throw LengthError("PLY: header declares " + std::to_string(vertex_count) + " vertices, more than the file holds");
  }
  PointCloud cloud;
  cloud.positions = Tensor::zeros({vertex_count, 3});
  if (has_rgb) cloud.colors = Tensor::zeros({vertex_count, 3});
  std::vector<double> row(props.size());
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (!std::getline(in, line)) {
      throw LengthError("PLY: header declares " + std::to_string(vertex_count) + " vertices, found " + std::to_string(i));
    }
    std::istringstream ls(line);
    for (double& v : row) {
      float f;
      if (!(ls >> f)) throw FormatError("PLY: malformed vertex row " + std::to_string(i));
      v = f;
    }
    for (std::size_t k = 0; k < 3; ++k) cloud.positions(i, k) = row[col[std::string(1, "xyz"[k])]];
    if (has_rgb)
      for (std::size_t k = 0; k < 3; ++k) (*cloud.colors)(i, k) = row[col[std::string(1, "rgb"[k])]];
  }
  if (!cloud.positions.all_finite()) throw ValidationError("PLY: non-finite position");
  if (cloud.colors)
    for (double v : cloud.colors->data())
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("PLY: color outside [0,1]");
  return cloud;
}

// ---------------------------------------------------------------------------

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FileError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FileError("write failed for " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

inline ScenePair load_sfp_file(const std::filesystem::path& path) {
  return load_sfp(read_file(path), path.stem().string());
}

}  // namespace sfattack

#endif  // SFATTACK_IO_HPP
