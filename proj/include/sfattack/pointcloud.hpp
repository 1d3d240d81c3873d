#ifndef SFATTACK_POINTCLOUD_HPP
#define SFATTACK_POINTCLOUD_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfattack/error.hpp"
#include "sfattack/tensor.hpp"

namespace sfattack {

/// N x 3 positions with optional N x 3 colors in [0, 1].
struct PointCloud {
  Tensor positions = Tensor::zeros({0, 3});
  std::optional<Tensor> colors;

  std::size_t size() const { return positions.rank() == 2 ? positions.rows() : 0; }
  bool has_colors() const noexcept { return colors.has_value(); }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

/// Per-point displacement (u, v, w), one row per point of the first cloud.
struct FlowField {
  Tensor vectors = Tensor::zeros({0, 3});

  std::size_t size() const { return vectors.rank() == 2 ? vectors.rows() : 0; }

  static FlowField zeros(std::size_t n) { return {Tensor::zeros({n, 3})}; }

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

struct ScenePair {
  PointCloud pc1;
  PointCloud pc2;
  std::optional<FlowField> gt_flow;
  std::string id;

  bool has_colors() const noexcept { return pc1.has_colors(); }

  friend bool operator==(const ScenePair&, const ScenePair&) = default;
};

inline Tensor points_from_rows(const std::vector<std::array<double, 3>>& rows) {
  std::vector<double> data;
  data.reserve(rows.size() * 3);
  for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
  return Tensor::matrix(rows.size(), 3, std::move(data));
}

namespace detail {

inline void check_block(const Tensor& t, const std::string& field, std::vector<std::string>& out, bool unit_range) {
  if (t.rank() != 2 || t.cols() != 3) {
    out.push_back(field + ": expected N x 3 block");
    return;
  }
  if (!t.all_finite()) out.push_back(field + ": non-finite value");
  if (unit_range) {
    for (double v : t.data()) {
      if (v < 0.0 || v > 1.0) {
        out.push_back(field + ": value outside [0,1]");
        break;
      }
    }
  }
}

inline void check_cloud(const PointCloud& pc, const std::string& name, std::vector<std::string>& out) {
  check_block(pc.positions, name + ".positions", out, false);
  if (pc.positions.rank() == 2 && pc.positions.rows() == 0) out.push_back(name + ": empty cloud");
  if (pc.colors) {
    check_block(*pc.colors, name + ".colors", out, true);
    if (pc.colors->rank() == 2 && pc.positions.rank() == 2 && pc.colors->rows() != pc.positions.rows())
      out.push_back(name + ".colors: row count differs from positions");
  }
}

}  // namespace detail

/// Lists every broken invariant of `pair`; empty when the pair is well-formed.
inline std::vector<std::string> validate(const ScenePair& pair) {
  std::vector<std::string> out;
  detail::check_cloud(pair.pc1, "pc1", out);
  detail::check_cloud(pair.pc2, "pc2", out);
  if (pair.pc1.has_colors() != pair.pc2.has_colors()) out.push_back("color presence mismatch");
  if (pair.gt_flow) {
    detail::check_block(pair.gt_flow->vectors, "gt_flow", out, false);
    if (pair.gt_flow->size() != pair.pc1.size()) out.push_back("flow length mismatch");
  }
  return out;
}

inline void require_valid(const ScenePair& pair) {
  const auto issues = validate(pair);
  if (issues.empty()) return;
  std::string msg = "invalid scene pair '" + pair.id + "':";
  for (const auto& s : issues) msg += " " + s + ";";
  throw ValidationError(msg);
}

}  // namespace sfattack

#endif  // SFATTACK_POINTCLOUD_HPP
