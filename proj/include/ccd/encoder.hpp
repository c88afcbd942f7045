#pragma once

// Small fully-connected networks with hand-written reverse mode. Used for the
// backbone, the projector and the binary known/novel classifier.
//
// All parameters live in one flat buffer so a single AdamState covers the
// whole net. Layer l stores its weights (out x in, row-major) followed by its
// bias (out).

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ccd/numerics.hpp"

namespace ccd {

enum class Activation : std::uint8_t { kIdentity = 0, kTanh = 1, kSigmoid = 2 };

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::kIdentity;
  std::size_t offset = 0;  // into the flat parameter buffer

  std::size_t weight_count() const { return in * out; }
  std::size_t param_count() const { return in * out + out; }
};

struct LayerSpec {
  std::size_t out;
  Activation activation;
};

class FeedForwardNet;

// Activations retained by a training forward pass. A trace is tied to the
// net and parameter version that produced it and may be consumed once.
class ForwardTrace {
 public:
  const Vector& output() const { return activations_.back(); }

 private:
  friend class FeedForwardNet;
  std::uint64_t net_id_ = 0;
  std::uint64_t version_ = 0;
  bool consumed_ = false;
  std::vector<Vector> activations_;  // activations_[0] is the input
};

class FeedForwardNet {
 public:
  FeedForwardNet() = default;
  FeedForwardNet(std::size_t input_dim, std::vector<LayerSpec> layers);

  // Copies get a fresh identity so traces of the original are foreign to them.
  FeedForwardNet(const FeedForwardNet& other);
  FeedForwardNet& operator=(const FeedForwardNet& other);
  FeedForwardNet(FeedForwardNet&&) noexcept = default;
  FeedForwardNet& operator=(FeedForwardNet&&) noexcept = default;

  // Initializes every weight and bias from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
  static FeedForwardNet make(std::size_t input_dim, const std::vector<LayerSpec>& layers, Rng& rng);

  // `hidden` tanh layers followed by a linear output layer.
  static FeedForwardNet mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                            std::size_t output_dim, Rng& rng,
                            Activation output_activation = Activation::kIdentity);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return layers_.empty() ? input_dim_ : layers_.back().out; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  std::size_t param_count() const { return params_.size(); }

  Vector forward(std::span<const double> x) const;
  ForwardTrace forward_trace(std::span<const double> x) const;

  // Accumulates d(loss)/d(params) into `param_grad` (size param_count()) and
  // returns d(loss)/d(input). Throws StaleTraceError when the trace was made
  // by another net, before a parameter update, or was already consumed.
  Vector backward(ForwardTrace& trace, std::span<const double> upstream,
                  std::span<double> param_grad) const;

  std::span<const double> parameters() const { return params_; }
  // Throws FrozenNetError once frozen.
  std::span<double> mutable_parameters();
  void set_parameters(std::span<const double> values);

  // Weight matrix / bias views of layer l (read-only).
  std::span<const double> weights(std::size_t l) const;
  std::span<const double> bias(std::size_t l) const;

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  std::size_t byte_size() const { return params_.size() * sizeof(double); }

  // Bit-exact little-endian snapshot:
  //   "CCDN" | u32 version | u32 input_dim | u32 layer count |
  //   per layer { u32 in, u32 out, u8 activation } | u8 frozen |
  //   f64 params (per layer: weights row-major, then bias)
  void save(std::ostream& out) const;
  static FeedForwardNet load(std::istream& in);

  bool same_parameters(const FeedForwardNet& other) const;

 private:
  void bump_version();

  std::size_t input_dim_ = 0;
  std::vector<LayerShape> layers_;
  Vector params_;
  bool frozen_ = false;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
};

// Adam update on a net's flat parameters; throws FrozenNetError if frozen.
void adam_step(FeedForwardNet& net, std::span<const double> grads, AdamState& state);

}  // namespace ccd
