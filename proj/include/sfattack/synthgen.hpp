#ifndef SFATTACK_SYNTHGEN_HPP
#define SFATTACK_SYNTHGEN_HPP

// Seeded synthetic scene pairs with exact ground-truth flow.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfattack/error.hpp"
#include "sfattack/io.hpp"
#include "sfattack/pointcloud.hpp"
#include "sfattack/rng.hpp"

namespace sfattack {

using Vec3 = std::array<double, 3>;

enum class MotionKind { kRigid, kDeform };

inline const char* to_string(MotionKind k) { return k == MotionKind::kRigid ? "rigid" : "deform"; }

inline MotionKind parse_motion_kind(const std::string& s) {
  if (s == "rigid") return MotionKind::kRigid;
  if (s == "deform") return MotionKind::kDeform;
  throw ParseError("unknown motion kind '" + s + "'");
}

struct MotionSpec {
  MotionKind kind = MotionKind::kRigid;
  Vec3 axis{0.0, 0.0, 1.0};
  double angle = 0.0;  // radians
  Vec3 translation{0.0, 0.0, 0.0};
  double deform_amplitude = 0.0;
  double noise_sigma = 0.0;
  double drop_fraction = 0.0;

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(axis.begin(), axis.end(), finite) || !finite(angle) ||
        !std::all_of(translation.begin(), translation.end(), finite) || !finite(deform_amplitude) ||
        !finite(noise_sigma) || !finite(drop_fraction)) {
      throw ValidationError("motion spec: non-finite field");
    }
    if (angle != 0.0) {
      const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
      if (std::abs(n - 1.0) > 1e-9) throw ValidationError("motion spec: rotation axis must have unit norm");
    }
    if (deform_amplitude < 0.0) throw ValidationError("motion spec: deform_amplitude < 0");
    if (noise_sigma < 0.0) throw ValidationError("motion spec: noise_sigma < 0");
    if (drop_fraction < 0.0 || drop_fraction >= 1.0) throw ValidationError("motion spec: drop_fraction outside [0,1)");
  }

  /// Noise-free image of point p.
  Vec3 apply(const Vec3& p) const {
    if (kind == MotionKind::kDeform) {
      constexpr double pi = std::numbers::pi;
      return {p[0] + deform_amplitude * std::sin(pi * p[1]) + translation[0],
              p[1] + deform_amplitude * std::sin(pi * p[2]) + translation[1],
              p[2] + deform_amplitude * std::sin(pi * p[0]) + translation[2]};
    }
    // Rodrigues: R p = p cos + (k x p) sin + k (k . p)(1 - cos)
    const double c = std::cos(angle), s = std::sin(angle);
    const Vec3& k = axis;
    const Vec3 kxp{k[1] * p[2] - k[2] * p[1], k[2] * p[0] - k[0] * p[2], k[0] * p[1] - k[1] * p[0]};
    const double kdp = k[0] * p[0] + k[1] * p[1] + k[2] * p[2];
    Vec3 out;
    for (int i = 0; i < 3; ++i) out[i] = p[i] * c + kxp[i] * s + k[i] * kdp * (1.0 - c) + translation[i];
    return out;
  }
};

inline ScenePair make_pair(std::size_t n_points, const MotionSpec& spec, bool with_color, std::uint64_t seed) {
  if (n_points < 1) throw ValidationError("make_pair: n_points must be >= 1");
  spec.validate();
  Rng rng(seed);
  std::uniform_real_distribution<double> cube(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  ScenePair pair;
  Tensor pos1 = Tensor::zeros({n_points, 3});
  for (double& v : pos1.data()) v = cube(rng);
  std::optional<Tensor> col1;
  if (with_color) {
    col1 = Tensor::zeros({n_points, 3});
    for (double& v : col1->data()) v = unit(rng);
  }

  Tensor image = Tensor::zeros({n_points, 3});
  Tensor flow = Tensor::zeros({n_points, 3});
  for (std::size_t i = 0; i < n_points; ++i) {
    const Vec3 p{pos1(i, 0), pos1(i, 1), pos1(i, 2)};
    const Vec3 q = spec.apply(p);
    for (std::size_t k = 0; k < 3; ++k) {
      flow(i, k) = q[k] - p[k];
      image(i, k) = q[k];
    }
  }
  if (spec.noise_sigma > 0.0)
    for (double& v : image.data()) v += spec.noise_sigma * noise(rng);

  const auto dropped = std::min(static_cast<std::size_t>(std::floor(spec.drop_fraction * static_cast<double>(n_points))),
                                n_points - 1);
  std::vector<bool> keep(n_points, true);
  if (dropped > 0) {
    std::vector<std::size_t> order(n_points);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < dropped; ++i) keep[order[i]] = false;
  }
  const std::size_t m = n_points - dropped;
  Tensor pos2 = Tensor::zeros({m, 3});
  std::optional<Tensor> col2;
  if (with_color) col2 = Tensor::zeros({m, 3});
  for (std::size_t i = 0, j = 0; i < n_points; ++i) {
    if (!keep[i]) continue;
    for (std::size_t k = 0; k < 3; ++k) {
      pos2(j, k) = image(i, k);
      if (with_color) (*col2)(j, k) = (*col1)(i, k);
    }
    ++j;
  }

  pair.pc1 = {std::move(pos1), std::move(col1)};
  pair.pc2 = {std::move(pos2), std::move(col2)};
  pair.gt_flow = FlowField{std::move(flow)};
  return pair;
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Sampling ranges for the MotionSpec of every pair in a dataset.
struct DatasetSpec {
  MotionKind kind = MotionKind::kRigid;
  std::size_t n_points = 256;
  bool with_color = false;
  Range angle{0.0, 0.1};
  std::array<Range, 3> translation{Range{-0.1, 0.1}, Range{-0.1, 0.1}, Range{-0.1, 0.1}};
  Range deform_amplitude{0.0, 0.0};
  Range noise_sigma{0.0, 0.0};
  Range drop_fraction{0.0, 0.0};

  void validate() const {
    auto ok = [](Range r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi; };
    if (!ok(angle) || !ok(deform_amplitude) || !ok(noise_sigma) || !ok(drop_fraction) ||
        !std::all_of(translation.begin(), translation.end(), ok)) {
      throw ValidationError("dataset spec: empty or non-finite range");
    }
    if (n_points < 1) throw ValidationError("dataset spec: n_points must be >= 1");
  }

  static DatasetSpec defaults(MotionKind kind) {
    DatasetSpec s;
    s.kind = kind;
    if (kind == MotionKind::kDeform) {
      s.angle = {0.0, 0.0};
      s.deform_amplitude = {0.02, 0.1};
    }
    return s;
  }
};

struct GeneratedPair {
  ScenePair pair;
  MotionSpec spec;
  std::uint64_t seed = 0;
};

/// Pair `index` of the dataset rooted at `seed`; equal to the same element of make_dataset.
inline GeneratedPair make_dataset_entry(std::size_t index, const DatasetSpec& ranges, std::uint64_t seed) {
  ranges.validate();
  const std::uint64_t pair_seed = derive_seed(seed, index);
  Rng rng(derive_seed(pair_seed, 0));
  auto draw = [&](Range r) { return r.lo == r.hi ? r.lo : std::uniform_real_distribution<double>(r.lo, r.hi)(rng); };

  MotionSpec spec;
  spec.kind = ranges.kind;
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 axis{gauss(rng), gauss(rng), gauss(rng)};
  const double norm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  spec.axis = norm > 0.0 ? Vec3{axis[0] / norm, axis[1] / norm, axis[2] / norm} : Vec3{0.0, 0.0, 1.0};
  spec.angle = ranges.kind == MotionKind::kRigid ? draw(ranges.angle) : 0.0;
  for (std::size_t k = 0; k < 3; ++k) spec.translation[k] = draw(ranges.translation[k]);
  spec.deform_amplitude = ranges.kind == MotionKind::kDeform ? draw(ranges.deform_amplitude) : 0.0;
  spec.noise_sigma = draw(ranges.noise_sigma);
  spec.drop_fraction = draw(ranges.drop_fraction);

  const std::uint64_t point_seed = derive_seed(pair_seed, 1);
  GeneratedPair out{make_pair(ranges.n_points, spec, ranges.with_color, point_seed), spec, point_seed};
  out.pair.id = "pair_" + std::to_string(index);
  return out;
}

inline std::vector<GeneratedPair> make_dataset_entries(std::size_t count, const DatasetSpec& ranges,
                                                       std::uint64_t seed) {
  if (count < 1) throw ValidationError("make_dataset: count must be >= 1");
  std::vector<GeneratedPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_dataset_entry(i, ranges, seed));
  return out;
}

inline std::vector<ScenePair> make_dataset(std::size_t count, const DatasetSpec& ranges, std::uint64_t seed) {
  std::vector<ScenePair> out;
  for (auto& e : make_dataset_entries(count, ranges, seed)) out.push_back(std::move(e.pair));
  return out;
}

inline nlohmann::ordered_json to_json(const MotionSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"axis", s.axis},
          {"angle", s.angle},
          {"translation", s.translation},
          {"deform_amplitude", s.deform_amplitude},
          {"noise_sigma", s.noise_sigma},
          {"drop_fraction", s.drop_fraction}};
}

/// Writes `<dir>/pair_<k>.sfp` and `<dir>/manifest.json`.
inline void write_dataset(const std::filesystem::path& dir, const std::vector<GeneratedPair>& entries,
                          std::uint64_t root_seed) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "SFP1";
  manifest["seed"] = root_seed;
  manifest["pairs"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    const std::string file = e.pair.id + ".sfp";
    write_file(dir / file, save_sfp(e.pair));
    manifest["pairs"].push_back({{"id", e.pair.id}, {"file", file}, {"seed", e.seed}, {"spec", to_json(e.spec)}});
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Loads a dataset directory: manifest order when present, else sorted *.sfp files.
inline std::vector<ScenePair> load_dataset(const std::filesystem::path& dir) {
  std::vector<ScenePair> out;
  const auto manifest_path = dir / "manifest.json";
  if (std::filesystem::exists(manifest_path)) {
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(read_text(manifest_path));
      for (const auto& p : manifest.at("pairs")) {
        out.push_back(load_sfp(read_file(dir / p.at("file").get<std::string>()), p.at("id").get<std::string>()));
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest.json: " + std::string(e.what()));
    }
  } else {
    if (!std::filesystem::is_directory(dir)) throw FileError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& f : std::filesystem::directory_iterator(dir))
      if (f.path().extension() == ".sfp") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(load_sfp_file(f));
  }
  if (out.empty()) throw ValidationError("dataset " + dir.string() + " holds no pairs");
  return out;
}

}  // namespace sfattack

#endif  // SFATTACK_SYNTHGEN_HPP
