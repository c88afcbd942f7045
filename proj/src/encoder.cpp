#include "ccd/encoder.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "ccd/binary_io.hpp"

namespace ccd {
namespace {

constexpr char kNetMagic[4] = {'C', 'C', 'D', 'N'};
constexpr std::uint32_t kNetVersion = 1;

std::uint64_t next_net_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::kTanh:
      return std::tanh(x);
    case Activation::kSigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case Activation::kIdentity:
      break;
  }
  return x;
}

// Derivative expressed through the activation output y.
double activate_grad(Activation a, double y) {
  switch (a) {
    case Activation::kTanh:
      return 1.0 - y * y;
    case Activation::kSigmoid:
      return y * (1.0 - y);
    case Activation::kIdentity:
      break;
  }
  return 1.0;
}

}  // namespace

FeedForwardNet::FeedForwardNet(std::size_t input_dim, std::vector<LayerSpec> layers)
    : input_dim_(input_dim), id_(next_net_id()) {
  if (input_dim == 0) throw DimensionMismatch("FeedForwardNet: input_dim must be positive");
  std::size_t in = input_dim;
  std::size_t offset = 0;
  for (const auto& spec : layers) {
    if (spec.out == 0) throw DimensionMismatch("FeedForwardNet: layer width must be positive");
    LayerShape shape{in, spec.out, spec.activation, offset};
    offset += shape.param_count();
    layers_.push_back(shape);
    in = spec.out;
  }
  params_.assign(offset, 0.0);
}

FeedForwardNet::FeedForwardNet(const FeedForwardNet& other)
    : input_dim_(other.input_dim_),
      layers_(other.layers_),
      params_(other.params_),
      frozen_(other.frozen_),
      id_(next_net_id()) {}

FeedForwardNet& FeedForwardNet::operator=(const FeedForwardNet& other) {
  if (this != &other) {
    input_dim_ = other.input_dim_;
    layers_ = other.layers_;
    params_ = other.params_;
    frozen_ = other.frozen_;
    id_ = next_net_id();
    version_ = 0;
  }
  return *this;
}

FeedForwardNet FeedForwardNet::make(std::size_t input_dim, const std::vector<LayerSpec>& layers,
                                    Rng& rng) {
  FeedForwardNet net(input_dim, layers);
  for (const auto& l : net.layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (std::size_t i = 0; i < l.param_count(); ++i) {
      net.params_[l.offset + i] = rng.uniform(-bound, bound);
    }
  }
  return net;
}

FeedForwardNet FeedForwardNet::mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                   std::size_t output_dim, Rng& rng,
                                   Activation output_activation) {
  std::vector<LayerSpec> specs;
  for (std::size_t h : hidden) specs.push_back({h, Activation::kTanh});
  specs.push_back({output_dim, output_activation});
  return make(input_dim, specs, rng);
}

Vector FeedForwardNet::forward(std::span<const double> x) const {
  require_same_dim(x.size(), input_dim_, "FeedForwardNet::forward");
  Vector cur(x.begin(), x.end());
  Vector next;
  for (const auto& l : layers_) {
    next.assign(l.out, 0.0);
    const double* w = params_.data() + l.offset;
    const double* b = w + l.weight_count();
    for (std::size_t o = 0; o < l.out; ++o) {
      double s = b[o];
      const double* wr = w + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) s += wr[i] * cur[i];
      next[o] = activate(l.activation, s);
    }
    cur.swap(next);
  }
  return cur;
}

ForwardTrace FeedForwardNet::forward_trace(std::span<const double> x) const {
  require_same_dim(x.size(), input_dim_, "FeedForwardNet::forward_trace");
  ForwardTrace trace;
  trace.net_id_ = id_;
  trace.version_ = version_;
  trace.activations_.reserve(layers_.size() + 1);
  trace.activations_.emplace_back(x.begin(), x.end());
  for (const auto& l : layers_) {
    const Vector& cur = trace.activations_.back();
    Vector next(l.out);
    const double* w = params_.data() + l.offset;
    const double* b = w + l.weight_count();
    for (std::size_t o = 0; o < l.out; ++o) {
      double s = b[o];
      const double* wr = w + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) s += wr[i] * cur[i];
      next[o] = activate(l.activation, s);
    }
    trace.activations_.push_back(std::move(next));
  }
  return trace;
}

Vector FeedForwardNet::backward(ForwardTrace& trace, std::span<const double> upstream,
                                std::span<double> param_grad) const {
  if (trace.net_id_ != id_) throw StaleTraceError("backward: trace belongs to another net");
  if (trace.version_ != version_) {
    throw StaleTraceError("backward: parameters changed since the forward pass");
  }
  if (trace.consumed_) throw StaleTraceError("backward: trace already consumed");
  require_same_dim(upstream.size(), output_dim(), "FeedForwardNet::backward(upstream)");
  require_same_dim(param_grad.size(), params_.size(), "FeedForwardNet::backward(param_grad)");
  trace.consumed_ = true;

  Vector delta(upstream.begin(), upstream.end());
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& l = layers_[li];
    const Vector& out = trace.activations_[li + 1];
    const Vector& in = trace.activations_[li];
    for (std::size_t o = 0; o < l.out; ++o) delta[o] *= activate_grad(l.activation, out[o]);

    const double* w = params_.data() + l.offset;
    double* gw = param_grad.data() + l.offset;
    double* gb = gw + l.weight_count();
    Vector prev(l.in, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      const double* wr = w + o * l.in;
      double* gr = gw + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) {
        gr[i] += d * in[i];
        prev[i] += d * wr[i];
      }
    }
    delta.swap(prev);
  }
  return delta;
}

std::span<double> FeedForwardNet::mutable_parameters() {
  if (frozen_) throw FrozenNetError("attempt to modify the parameters of a frozen net");
  bump_version();
  return params_;
}

void FeedForwardNet::set_parameters(std::span<const double> values) {
  require_same_dim(values.size(), params_.size(), "FeedForwardNet::set_parameters");
  auto dst = mutable_parameters();
  std::copy(values.begin(), values.end(), dst.begin());
}

std::span<const double> FeedForwardNet::weights(std::size_t l) const {
  const auto& s = layers_.at(l);
  return {params_.data() + s.offset, s.weight_count()};
}

std::span<const double> FeedForwardNet::bias(std::size_t l) const {
  const auto& s = layers_.at(l);
  return {params_.data() + s.offset + s.weight_count(), s.out};
}

void FeedForwardNet::bump_version() { ++version_; }

bool FeedForwardNet::same_parameters(const FeedForwardNet& other) const {
  if (input_dim_ != other.input_dim_ || layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].in != other.layers_[i].in || layers_[i].out != other.layers_[i].out ||
        layers_[i].activation != other.layers_[i].activation) {
      return false;
    }
  }
  // Bitwise comparison, so -0.0 and 0.0 differ and NaN payloads are compared exactly.
  return params_.size() == other.params_.size() &&
         std::memcmp(params_.data(), other.params_.data(), params_.size() * sizeof(double)) == 0;
}

void FeedForwardNet::save(std::ostream& out) const {
  BinaryWriter w(out);
  w.bytes(kNetMagic, 4);
  w.u32(kNetVersion);
  w.u32(static_cast<std::uint32_t>(input_dim_));
  w.u32(static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    w.u32(static_cast<std::uint32_t>(l.in));
    w.u32(static_cast<std::uint32_t>(l.out));
    w.u8(static_cast<std::uint8_t>(l.activation));
  }
  w.u8(frozen_ ? 1 : 0);
  for (double v : params_) w.f64(v);
}

FeedForwardNet FeedForwardNet::load(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic(kNetMagic);
  const auto version = r.u32();
  if (version != kNetVersion) {
    throw FormatError("net snapshot: unsupported version " + std::to_string(version));
  }
  const std::size_t input_dim = r.u32();
  const std::size_t count = r.u32();
  std::vector<LayerSpec> specs;
  std::size_t expected_in = input_dim;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t lin = r.u32();
    const std::size_t lout = r.u32();
    const auto act = r.u8();
    if (lin != expected_in) throw FormatError("net snapshot: layer dimensions do not chain");
    if (act > static_cast<std::uint8_t>(Activation::kSigmoid)) {
      throw FormatError("net snapshot: unknown activation tag");
    }
    specs.push_back({lout, static_cast<Activation>(act)});
    expected_in = lout;
  }
  const bool frozen = r.u8() != 0;
  FeedForwardNet net(input_dim, specs);
  for (double& v : net.params_) v = r.f64();
  net.frozen_ = frozen;
  return net;
}

void adam_step(FeedForwardNet& net, std::span<const double> grads, AdamState& state) {
  adam_step(net.mutable_parameters(), grads, state);
}

}  // namespace ccd
