#ifndef SFATTACK_TINYNET_HPP
#define SFATTACK_TINYNET_HPP

// Small flow-embedding network.
//
//   encoder:   x (3 or 6) -> affine 32 -> relu -> affine 32          (shared by both clouds)
//   attention: for pc1 point i, softmax over its k nearest pc2 points of
//              -|enc1_i - enc2_j|^2, giving an attended pc2 feature
//   head:      [enc1_i, attended_i] (64) -> affine 32 -> relu -> affine 3

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sfattack/autodiff.hpp"
#include "sfattack/estimator.hpp"
#include "sfattack/io.hpp"
#include "sfattack/rng.hpp"

namespace sfattack {

inline constexpr std::size_t kTinyHidden = 32;
// Encoder init scale. At unit-cube point spacing, Xavier-scale encodings of
// neighboring points are nearly equal and the attention stays close to uniform.
inline constexpr double kEncoderGain = 4.0;
inline constexpr std::size_t kTinyLayers = 8;

struct TinyNetWeights {
  // w1 b1 w2 b2 (encoder), w3 b3 w4 b4 (flow head); biases are 1 x C rows.
  std::vector<Tensor> layers;
  std::size_t k_neighbors = 8;

  std::size_t input_width() const { return layers.at(0).rows(); }

  void validate() const {
    if (layers.size() != kTinyLayers) throw FormatError("tiny net: expected 8 layers, got " + std::to_string(layers.size()));
    const std::size_t in = layers[0].rank() == 2 ? layers[0].rows() : 0;
    if (in != 3 && in != 6) throw FormatError("tiny net: input width must be 3 or 6");
    const std::size_t h = kTinyHidden;
    const std::pair<std::size_t, std::size_t> expected[kTinyLayers] = {{in, h}, {1, h}, {h, h},    {1, h},
                                                                       {2 * h, h}, {1, h}, {h, 3}, {1, 3}};
    for (std::size_t i = 0; i < kTinyLayers; ++i) {
      if (layers[i].rank() != 2 || layers[i].rows() != expected[i].first || layers[i].cols() != expected[i].second)
        throw FormatError("tiny net: layer " + std::to_string(i) + " has shape " + Tensor::shape_string(layers[i].shape()));
      if (!layers[i].all_finite()) throw FormatError("tiny net: layer " + std::to_string(i) + " is not finite");
    }
    if (k_neighbors < 1) throw ValidationError("tiny net: k_neighbors must be >= 1");
  }

  static TinyNetWeights init(std::size_t input_width, std::uint64_t seed) {
    Rng rng(seed);
    TinyNetWeights w;
    const std::size_t h = kTinyHidden;
    const std::pair<std::size_t, std::size_t> shapes[] = {{input_width, h}, {h, h}, {2 * h, h}, {h, 3}};
    for (std::size_t layer = 0; layer < 4; ++layer) {
      const auto [fan_in, fan_out] = shapes[layer];
      const double gain = layer < 2 ? kEncoderGain : 1.0;
      const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> u(-bound, bound);
      Tensor m = Tensor::zeros({fan_in, fan_out});
      for (double& v : m.data()) v = u(rng);
      w.layers.push_back(std::move(m));
      w.layers.push_back(Tensor::zeros({1, fan_out}));
    }
    w.validate();
    return w;
  }

  /// Same network with the last affine layer zeroed: a constant-zero estimator.
  TinyNetWeights with_zero_head() const {
    TinyNetWeights w = *this;
    for (double& v : w.layers[6].data()) v = 0.0;
    for (double& v : w.layers[7].data()) v = 0.0;
    return w;
  }
};

/// Indices of the k pc2 points nearest to each pc1 point (row-major N x k).
inline std::vector<std::size_t> nearest_neighbors(const Tensor& pos1, const Tensor& pos2, std::size_t k) {
  const std::size_t n = pos1.rows(), m = pos2.rows();
  k = std::min(k, m);
  std::vector<std::size_t> out(n * k);
  std::vector<std::pair<double, std::size_t>> d(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double diff = pos1(i, c) - pos2(j, c);
        s += diff * diff;
      }
      d[j] = {s, j};
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    for (std::size_t r = 0; r < k; ++r) out[i * k + r] = d[r].second;
  }
  return out;
}

namespace detail {

inline ad::Var affine(ad::Var x, ad::Var w, ad::Var b) { return ad::add_row(ad::matmul(x, w), b); }

inline ad::Var encode(ad::Var x, std::span<const ad::Var> w) {
  return affine(ad::relu(affine(x, w[0], w[1])), w[2], w[3]);
}

}  // namespace detail

/// Flow on graph `g` with weights supplied as graph nodes (leaves when training).
/// Neighbor selection is a constant computed from the current pc1 values.
inline ad::Var tiny_flow(ad::Graph& g, const ScenePair& pair, ad::Var pos1, std::optional<ad::Var> col1,
                         std::span<const ad::Var> w, std::size_t k_neighbors) {
  const std::size_t width = w[0].value().rows();
  const bool colored = width == 6;
  if (colored && !(col1 && pair.pc2.colors))
    throw ValidationError("tiny net expects colors (input width 6) but the pair has none");

  ad::Var in1 = colored ? ad::concat(pos1, *col1, 1) : pos1;
  ad::Var in2 = g.constant(pair.pc2.positions);
  if (colored) in2 = ad::concat(in2, g.constant(*pair.pc2.colors), 1);

  ad::Var f1 = detail::encode(in1, w);
  ad::Var f2 = detail::encode(in2, w);

  const std::size_t n = pos1.value().rows(), m = pair.pc2.size();
  const std::size_t k = std::min(k_neighbors, m);
  const auto nbr = nearest_neighbors(pos1.value(), pair.pc2.positions, k);

  ad::Var dist = ad::pairwise_sqdist(f1, f2);
  // Per-row shift by the smallest neighbor distance; softmax is invariant to it.
  Tensor mask = Tensor::zeros({n, m});
  Tensor shift = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t j = nbr[i * k + r];
      mask(i, j) = 1.0;
      lo = std::min(lo, dist.value()(i, j));
    }
    for (std::size_t j = 0; j < m; ++j) shift(i, j) = lo;
  }
  ad::Var mask_v = g.constant(std::move(mask));
  ad::Var logits = ad::mul(ad::neg(ad::sub(dist, g.constant(std::move(shift)))), mask_v);
  ad::Var weights = ad::mul(ad::exp(logits), mask_v);
  ad::Var attn = ad::mul(weights, ad::repeat_cols(ad::reciprocal(ad::row_sum(weights)), m));
  ad::Var attended = ad::matmul(attn, f2);

  ad::Var z = ad::concat(f1, ad::sub(attended, f1), 1);
  return detail::affine(ad::relu(detail::affine(z, w[4], w[5])), w[6], w[7]);
}

class TinyNetEstimator final : public Estimator {
 public:
  explicit TinyNetEstimator(TinyNetWeights w) : w_(std::move(w)) { w_.validate(); }

  std::string tag() const override { return "tiny"; }
  std::string config() const override {
    std::string s;
    for (const auto& l : w_.layers)
      for (double v : l.data()) s.append(reinterpret_cast<const char*>(&v), sizeof v);
    char buf[96];
    std::snprintf(buf, sizeof buf, "tiny:in=%zu,k=%zu,weights=%016llx", w_.input_width(), w_.k_neighbors,
                  static_cast<unsigned long long>(fnv1a(s)));
    return buf;
  }
  const TinyNetWeights& weights() const noexcept { return w_; }

  ad::Var build(ad::Graph& g, const ScenePair& pair, ad::Var pos1, std::optional<ad::Var> col1) const override {
    std::vector<ad::Var> w;
    for (const auto& l : w_.layers) w.push_back(g.constant(l));
    return tiny_flow(g, pair, pos1, col1, w, w_.k_neighbors);
  }

 private:
  TinyNetWeights w_;
};

inline FlowField tiny_forward(const ScenePair& pair, const TinyNetWeights& w) { return TinyNetEstimator(w).estimate(pair); }

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  TinyNetWeights weights;
  std::vector<double> loss_trace;  // mean minibatch loss per epoch
};

/// Plain minibatch gradient descent (batches of 4, reshuffled every epoch) on mean EPE.
inline TrainResult train_tiny(const std::vector<ScenePair>& dataset, int epochs, double lr, std::uint64_t seed) {
  if (dataset.empty()) throw ValidationError("train_tiny: empty dataset");
  if (epochs < 1) throw ValidationError("train_tiny: epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("train_tiny: lr must be > 0");
  const bool colored = dataset.front().has_colors();
  for (const auto& p : dataset) {
    if (!p.gt_flow) throw ValidationError("train_tiny: pair '" + p.id + "' has no ground-truth flow");
    if (p.has_colors() != colored) throw ValidationError("train_tiny: mixed colored and colorless pairs");
  }

  constexpr std::size_t kBatch = 4;
  TrainResult result{TinyNetWeights::init(colored ? 6 : 3, derive_seed(seed, 0)), {}};
  Rng shuffle_rng(derive_seed(seed, 1));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += kBatch) {
      const std::size_t end = std::min(start + kBatch, order.size());
      ad::Graph g;
      std::vector<ad::Var> w;
      for (const auto& l : result.weights.layers) w.push_back(g.leaf(l));
      ad::Var total;
      for (std::size_t b = start; b < end; ++b) {
        const ScenePair& p = dataset[order[b]];
        std::optional<ad::Var> col1;
        if (p.pc1.colors) col1 = g.constant(*p.pc1.colors);
        ad::Var flow = tiny_flow(g, p, g.constant(p.pc1.positions), col1, w, result.weights.k_neighbors);
        ad::Var loss = epe_loss(flow, g.constant(p.gt_flow->vectors));
        total = total.valid() ? ad::add(total, loss) : loss;
      }
      ad::Var batch_loss = ad::scale(total, 1.0 / static_cast<double>(end - start));
      const double value = batch_loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("train_tiny: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                           std::to_string(start));
      }
      epoch_loss += value * static_cast<double>(end - start);
      ad::Gradients grads = g.backward(batch_loss);
      for (std::size_t l = 0; l < w.size(); ++l) {
        auto dst = result.weights.layers[l].data();
        const Tensor& gl = grads[w[l]];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= lr * gl[i];
      }
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(dataset.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// SFTN weight files: "SFTN" | u32 layer count | per layer: u32 rows, u32 cols, f32 data

inline Bytes save_weights(const TinyNetWeights& w) {
  w.validate();
  Bytes out{'S', 'F', 'T', 'N'};
  detail::put_u32(out, static_cast<std::uint32_t>(w.layers.size()));
  for (const auto& l : w.layers) {
    detail::put_u32(out, static_cast<std::uint32_t>(l.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(l.cols()));
    detail::put_block(out, l);
  }
  return out;
}

inline TinyNetWeights load_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw LengthError("SFTN: truncated header");
  if (!(bytes[0] == 'S' && bytes[1] == 'F' && bytes[2] == 'T' && bytes[3] == 'N')) throw FormatError("SFTN: bad magic");
  detail::ByteReader in(bytes.subspan(4));
  const std::uint32_t count = in.u32();
  if (count != kTinyLayers) throw FormatError("SFTN: expected 8 layers, got " + std::to_string(count));
  TinyNetWeights w;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t rows = in.u32();
    const std::uint64_t cols = in.u32();
    w.layers.push_back(in.block(rows, cols));
  }
  if (in.remaining() != 0) throw LengthError("SFTN: " + std::to_string(in.remaining()) + " trailing bytes");
  w.validate();
  return w;
}

}  // namespace sfattack

#endif  // SFATTACK_TINYNET_HPP
