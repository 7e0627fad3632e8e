#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "wminres/assembly.hpp"
#include "wminres/errors.hpp"

namespace wminres {

enum class Activation { Tanh, Softplus, Identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Softplus: return "softplus";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "softplus") return Activation::Softplus;
  if (s == "identity") return Activation::Identity;
  throw InvalidArgument("unknown activation '" + s + "'");
}

namespace detail {

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::Softplus: return softplus(z);
    case Activation::Identity: return z;
  }
  return z;
}

inline double activate_derivative(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::Softplus: return sigmoid(z);
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

inline std::uint64_t next_token() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

/// Shape and activations of the weight network. Inputs are first mapped
/// affinely from the parameter box [lower, upper] onto [0, 1]^rho, then
/// passed through the fixed `input` activation. The half-width range keeps
/// the fitted weight map smooth between sparse training points.
struct NetworkArchitecture {
  std::vector<int> dims;  ///< [rho, hidden..., n_a]
  std::vector<double> lower;
  std::vector<double> upper;
  Activation input = Activation::Tanh;
  Activation hidden = Activation::Tanh;
  Activation output = Activation::Softplus;

  /// Three hidden tanh layers of width 10, softplus output.
  static NetworkArchitecture standard(std::vector<double> lower, std::vector<double> upper, int num_patches,
                                      std::vector<int> hidden = {10, 10, 10}) {
    NetworkArchitecture a;
    a.dims.push_back(static_cast<int>(lower.size()));
    a.dims.insert(a.dims.end(), hidden.begin(), hidden.end());
    a.dims.push_back(num_patches);
    a.lower = std::move(lower);
    a.upper = std::move(upper);
    return a;
  }
};

/// Intermediate values of one forward pass, tied to the parameter state
/// that produced them.
struct ForwardCache {
  std::uint64_t token = 0;
  std::vector<Eigen::VectorXd> layer_inputs;  ///< a_{k-1} fed to layer k
  std::vector<Eigen::VectorXd> pre_activations;  ///< z_k = W_k a_{k-1} + b_k
};

/// Fully connected network lambda -> (c_1, ..., c_{n_a}). Parameters live in
/// one flat vector: for each layer, W (column-major, out x in) then b.
class WeightNetwork {
 public:
  explicit WeightNetwork(NetworkArchitecture arch) : arch_(std::move(arch)) {
    if (arch_.dims.size() < 2) throw InvalidArgument("network needs at least an input and an output layer");
    for (int d : arch_.dims) {
      if (d < 1) throw InvalidArgument("layer widths must be positive");
    }
    const auto rho = static_cast<std::size_t>(arch_.dims.front());
    if (arch_.lower.size() != rho || arch_.upper.size() != rho) {
      throw InvalidArgument("parameter bounds must match the input width");
    }
    for (std::size_t i = 0; i < rho; ++i) {
      if (!(arch_.lower[i] < arch_.upper[i])) throw InvalidArgument("parameter bounds must satisfy lower < upper");
    }
    std::size_t off = 0;
    for (std::size_t k = 0; k + 1 < arch_.dims.size(); ++k) {
      w_offset_.push_back(off);
      off += static_cast<std::size_t>(arch_.dims[k]) * arch_.dims[k + 1];
      b_offset_.push_back(off);
      off += arch_.dims[k + 1];
    }
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(off));
    token_ = detail::next_token();
  }

  /// Glorot-uniform weights and zero biases drawn from `seed`.
  static WeightNetwork init(NetworkArchitecture arch, std::uint64_t seed) {
    WeightNetwork net(std::move(arch));
    std::mt19937_64 rng(seed);
    Eigen::VectorXd p = net.params_;
    for (int k = 0; k < net.num_layers(); ++k) {
      const int fan_in = net.arch_.dims[k], fan_out = net.arch_.dims[k + 1];
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (int i = 0; i < fan_in * fan_out; ++i) p[static_cast<Eigen::Index>(net.w_offset_[k]) + i] = dist(rng);
    }
    net.set_params(std::move(p));
    return net;
  }

  const NetworkArchitecture& architecture() const { return arch_; }
  int num_layers() const { return static_cast<int>(arch_.dims.size()) - 1; }
  int input_size() const { return arch_.dims.front(); }
  int output_size() const { return arch_.dims.back(); }
  Eigen::Index num_params() const { return params_.size(); }

  const Eigen::VectorXd& params() const { return params_; }
  void set_params(Eigen::VectorXd p) {
    if (p.size() != params_.size()) throw InvalidArgument("parameter vector has the wrong length");
    params_ = std::move(p);
    token_ = detail::next_token();
  }

  Eigen::Map<const Eigen::MatrixXd> weight(int k) const {
    return {params_.data() + w_offset_[k], arch_.dims[k + 1], arch_.dims[k]};
  }
  Eigen::Map<const Eigen::VectorXd> bias(int k) const { return {params_.data() + b_offset_[k], arch_.dims[k + 1]}; }
  std::size_t weight_offset(int k) const { return w_offset_[k]; }
  std::size_t bias_offset(int k) const { return b_offset_[k]; }

  /// Normalized, input-activated features of lambda. Points outside the
  /// parameter box are clamped onto it; the first clamp is reported on
  /// stderr.
  Eigen::VectorXd input_features(const Parameter& lambda) const {
    if (static_cast<int>(lambda.size()) != input_size()) {
      throw InvalidArgument("parameter has " + std::to_string(lambda.size()) + " components, network expects " +
                            std::to_string(input_size()));
    }
    Eigen::VectorXd x(input_size());
    for (int i = 0; i < input_size(); ++i) {
      double v = lambda[i];
      if (v < arch_.lower[i] || v > arch_.upper[i]) {
        if (!clamp_warned_.exchange(true)) {
          std::cerr << "wminres: warning: parameter component " << i << " = " << v << " clamped to ["
                    << arch_.lower[i] << ", " << arch_.upper[i] << "] (further clamps not reported)\n";
        }
        v = std::clamp(v, arch_.lower[i], arch_.upper[i]);
      }
      const double t = (v - arch_.lower[i]) / (arch_.upper[i] - arch_.lower[i]);
      x[i] = detail::activate(arch_.input, t);
    }
    return x;
  }

  Eigen::VectorXd forward(const Parameter& lambda, ForwardCache& cache) const {
    cache.token = token_;
    cache.layer_inputs.resize(num_layers());
    cache.pre_activations.resize(num_layers());
    Eigen::VectorXd a = input_features(lambda);
    for (int k = 0; k < num_layers(); ++k) {
      cache.layer_inputs[k] = a;
      Eigen::VectorXd z = weight(k) * a + bias(k);
      const Activation act = k + 1 == num_layers() ? arch_.output : arch_.hidden;
      a = z.unaryExpr([act](double v) { return detail::activate(act, v); });
      cache.pre_activations[k] = std::move(z);
    }
    return a;
  }

  Eigen::VectorXd forward(const Parameter& lambda) const {
    ForwardCache cache;
    return forward(lambda, cache);
  }

  /// Gradient of dL_dc . c(lambda; theta) with respect to theta.
  Eigen::VectorXd backward(const ForwardCache& cache, const Eigen::VectorXd& dl_dc) const {
    if (cache.token != token_) throw StateError("forward cache does not belong to the current parameters");
    if (dl_dc.size() != output_size()) throw InvalidArgument("output gradient has the wrong length");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(num_params());
    Eigen::VectorXd delta = dl_dc;
    for (int k = num_layers() - 1; k >= 0; --k) {
      const Activation act = k + 1 == num_layers() ? arch_.output : arch_.hidden;
      const Eigen::VectorXd& z = cache.pre_activations[k];
      for (Eigen::Index i = 0; i < z.size(); ++i) delta[i] *= detail::activate_derivative(act, z[i]);
      const int out = arch_.dims[k + 1], in = arch_.dims[k];
      Eigen::Map<Eigen::MatrixXd> gw(grad.data() + w_offset_[k], out, in);
      gw.noalias() = delta * cache.layer_inputs[k].transpose();
      Eigen::Map<Eigen::VectorXd>(grad.data() + b_offset_[k], out) = delta;
      if (k > 0) delta = weight(k).transpose() * delta;
    }
    return grad;
  }

 private:
  NetworkArchitecture arch_;
  std::vector<std::size_t> w_offset_;
  std::vector<std::size_t> b_offset_;
  Eigen::VectorXd params_;
  std::uint64_t token_ = 0;
  inline static std::atomic<bool> clamp_warned_{false};
};

namespace detail {

inline std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw CheckpointError("malformed number '" + tok + "' in checkpoint");
  return v;
}

}  // namespace detail

inline constexpr const char* kCheckpointMagic = "wminres-network";
inline constexpr int kCheckpointVersion = 1;

/// Plain-text checkpoint: architecture header, then per layer the weight
/// matrix in row-major order and the bias, as hexadecimal floats so that a
/// write/read cycle is bitwise exact.
inline void write_checkpoint(std::ostream& os, const WeightNetwork& net) {
  const auto& a = net.architecture();
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "activations " << to_string(a.input) << ' ' << to_string(a.hidden) << ' ' << to_string(a.output) << '\n';
  os << "dims " << a.dims.size();
  for (int d : a.dims) os << ' ' << d;
  os << "\nlower";
  for (double v : a.lower) os << ' ' << detail::hex(v);
  os << "\nupper";
  for (double v : a.upper) os << ' ' << detail::hex(v);
  os << '\n';
  for (int k = 0; k < net.num_layers(); ++k) {
    const auto w = net.weight(k);
    os << "layer " << k << ' ' << w.rows() << ' ' << w.cols() << "\nW";
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) os << ' ' << detail::hex(w(i, j));
    os << "\nb";
    const auto b = net.bias(k);
    for (Eigen::Index i = 0; i < b.size(); ++i) os << ' ' << detail::hex(b[i]);
    os << '\n';
  }
}

inline WeightNetwork read_checkpoint(std::istream& is) {
  auto expect = [&](const std::string& want) {
    std::string tok;
    if (!(is >> tok) || tok != want) throw CheckpointError("expected '" + want + "' in checkpoint, got '" + tok + "'");
  };
  auto next_double = [&]() {
    std::string tok;
    if (!(is >> tok)) throw CheckpointError("truncated checkpoint");
    return detail::parse_double(tok);
  };
  auto next_int = [&]() {
    long v = 0;
    if (!(is >> v)) throw CheckpointError("truncated checkpoint");
    return static_cast<int>(v);
  };
  expect(kCheckpointMagic);
  if (next_int() != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
  expect("activations");
  NetworkArchitecture a;
  std::string s1, s2, s3;
  if (!(is >> s1 >> s2 >> s3)) throw CheckpointError("truncated checkpoint");
  try {
    a.input = activation_from_string(s1);
    a.hidden = activation_from_string(s2);
    a.output = activation_from_string(s3);
  } catch (const InvalidArgument& e) {
    throw CheckpointError(e.what());
  }
  expect("dims");
  const int nd = next_int();
  if (nd < 2 || nd > 64) throw CheckpointError("implausible layer count in checkpoint");
  a.dims.resize(nd);
  for (int& d : a.dims) d = next_int();
  expect("lower");
  a.lower.resize(a.dims.front());
  for (double& v : a.lower) v = next_double();
  expect("upper");
  a.upper.resize(a.dims.front());
  for (double& v : a.upper) v = next_double();
  WeightNetwork net(a);
  Eigen::VectorXd p = net.params();
  for (int k = 0; k < net.num_layers(); ++k) {
    expect("layer");
    if (next_int() != k) throw CheckpointError("layers out of order in checkpoint");
    const int rows = next_int(), cols = next_int();
    if (rows != a.dims[k + 1] || cols != a.dims[k]) throw CheckpointError("layer shape does not match dims");
    expect("W");
    Eigen::Map<Eigen::MatrixXd> w(p.data() + net.weight_offset(k), rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) w(i, j) = next_double();
    expect("b");
    for (int i = 0; i < rows; ++i) p[static_cast<Eigen::Index>(net.bias_offset(k)) + i] = next_double();
  }
  net.set_params(std::move(p));
  return net;
}

}  // namespace wminres
