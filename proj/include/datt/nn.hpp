#pragma once

// Minimal batched layers with hand-written backward passes. Batches are
// column-major: one sample per column. Templated on the scalar so gradient
// checks can run in double while training runs in float.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "datt/common.hpp"

namespace datt::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct Param {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)) {}
};

/// Orthogonal initialization scaled by `gain` (QR of a Gaussian matrix).
template <typename T>
void orthogonal_init(Matrix<T>& W, double gain, Rng& rng) {
  const Eigen::Index rows = W.rows(), cols = W.cols();
  const Eigen::Index big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd G(big, small);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Sign correction makes the distribution uniform over orthogonal matrices.
  const Eigen::MatrixXd R = qr.matrixQR().topRows(small).template triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < small; ++j)
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  const Eigen::MatrixXd M = rows >= cols ? Q : Eigen::MatrixXd(Q.transpose());
  W = (gain * M).cast<T>();
}

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(int in, int out, const std::string& name)
      : W_(name + ".w", out, in), b_(name + ".b", out, 1) {}

  int in() const { return static_cast<int>(W_.value.cols()); }
  int out() const { return static_cast<int>(W_.value.rows()); }

  void init(double gain, Rng& rng) {
    orthogonal_init(W_.value, gain, rng);
    b_.value.setZero();
  }

  Matrix<T> forward(const Matrix<T>& X) {
    x_ = X;
    return infer(X);
  }

  Matrix<T> infer(const Matrix<T>& X) const {
    Matrix<T> Y = W_.value * X;
    Y.colwise() += b_.value.col(0);
    return Y;
  }

  Matrix<T> backward(const Matrix<T>& dY) {
    W_.grad.noalias() += dY * x_.transpose();
    b_.grad += dY.rowwise().sum();
    return W_.value.transpose() * dY;
  }

  void params(std::vector<Param<T>*>& out) {
    out.push_back(&W_);
    out.push_back(&b_);
  }

  Param<T>& weight() { return W_; }
  Param<T>& bias() { return b_; }
  const Param<T>& weight() const { return W_; }
  const Param<T>& bias() const { return b_; }

 private:
  Param<T> W_, b_;
  Matrix<T> x_;
};

template <typename T>
struct ReLU {
  Matrix<T> mask;
  Matrix<T> forward(const Matrix<T>& X) {
    mask = (X.array() > T(0)).template cast<T>();
    return X.cwiseProduct(mask);
  }
  static Matrix<T> infer(const Matrix<T>& X) { return X.cwiseMax(T(0)); }
  Matrix<T> backward(const Matrix<T>& dY) const { return dY.cwiseProduct(mask); }
};

/// Position of per-sample sequence data inside a C x (batch * stride) matrix.
struct SeqLayout {
  int stride = 0;  // columns reserved per sample
  int offset = 0;  // first data column within the sample block
  int length = 0;  // data columns per sample
};

/// Zeroes every column outside the data region of each sample block.
template <typename T>
void mask_layout(Matrix<T>& X, const SeqLayout& L) {
  const Eigen::Index batch = X.cols() / L.stride;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Index base = b * L.stride;
    if (L.offset > 0) X.middleCols(base, L.offset).setZero();
    const int tail = L.stride - L.offset - L.length;
    if (tail > 0) X.middleCols(base + L.offset + L.length, tail).setZero();
  }
}

/// 1-D convolution, "same" (odd kernel, zero padding) or "valid" padding.
/// Weights are C_out x (K * C_in); block k multiplies input column c + k - shift.
template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(int in_ch, int out_ch, int kernel, bool same, const std::string& name)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), same_(same),
        W_(name + ".w", out_ch, kernel * in_ch), b_(name + ".b", out_ch, 1) {
    if (same && kernel % 2 == 0) throw Error("Conv1d: same padding requires an odd kernel");
  }

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return kernel_; }
  bool same() const { return same_; }
  int shift() const { return same_ ? kernel_ / 2 : 0; }

  SeqLayout output_layout(const SeqLayout& in) const {
    if (same_) {
      if (in.offset < shift() || in.stride - in.offset - in.length < shift())
        throw Error("Conv1d: input layout lacks padding columns");
      return in;
    }
    if (in.length < kernel_) throw Error("Conv1d: sequence shorter than kernel");
    return {in.stride, in.offset, in.length - kernel_ + 1};
  }

  void init(double gain, Rng& rng) {
    orthogonal_init(W_.value, gain, rng);
    b_.value.setZero();
  }

  Matrix<T> forward(const Matrix<T>& X, const SeqLayout& in) {
    x_ = X;
    in_ = in;
    return infer(X, in);
  }

  Matrix<T> infer(const Matrix<T>& X, const SeqLayout& in) const {
    const SeqLayout out = output_layout(in);
    const Eigen::Index n = X.cols() - kernel_ + 1;
    Matrix<T> Y = Matrix<T>::Zero(out_ch_, X.cols());
    for (int k = 0; k < kernel_; ++k)
      Y.middleCols(shift(), n).noalias() += W_.value.middleCols(k * in_ch_, in_ch_) * X.middleCols(k, n);
    Y.colwise() += b_.value.col(0);
    mask_layout(Y, out);
    return Y;
  }

  /// dY must be zero outside the output data region.
  Matrix<T> backward(const Matrix<T>& dY) {
    const Eigen::Index n = x_.cols() - kernel_ + 1;
    Matrix<T> dX = Matrix<T>::Zero(in_ch_, x_.cols());
    const auto dYc = dY.middleCols(shift(), n);
    for (int k = 0; k < kernel_; ++k) {
      W_.grad.middleCols(k * in_ch_, in_ch_).noalias() += dYc * x_.middleCols(k, n).transpose();
      dX.middleCols(k, n).noalias() += W_.value.middleCols(k * in_ch_, in_ch_).transpose() * dYc;
    }
    b_.grad += dY.rowwise().sum();
    mask_layout(dX, in_);
    return dX;
  }

  void params(std::vector<Param<T>*>& out) {
    out.push_back(&W_);
    out.push_back(&b_);
  }

  Param<T>& weight() { return W_; }
  Param<T>& bias() { return b_; }
  const Param<T>& weight() const { return W_; }
  const Param<T>& bias() const { return b_; }

  /// Weight tap for (output channel, input channel, kernel index).
  T tap(int o, int i, int k) const { return W_.value(o, k * in_ch_ + i); }

 private:
  int in_ch_ = 0, out_ch_ = 0, kernel_ = 0;
  bool same_ = true;
  Param<T> W_, b_;
  Matrix<T> x_;
  SeqLayout in_;
};

/// Packs (C*len) x B channel-major features into the sequence layout.
template <typename T>
Matrix<T> to_sequence(const Matrix<T>& flat, int channels, const SeqLayout& L) {
  const Eigen::Index batch = flat.cols();
  Matrix<T> X = Matrix<T>::Zero(channels, batch * L.stride);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      for (int l = 0; l < L.length; ++l) X(c, b * L.stride + L.offset + l) = flat(c * L.length + l, b);
  return X;
}

/// Inverse of to_sequence.
template <typename T>
Matrix<T> from_sequence(const Matrix<T>& X, const SeqLayout& L) {
  const Eigen::Index batch = X.cols() / L.stride;
  const Eigen::Index channels = X.rows();
  Matrix<T> flat(channels * L.length, batch);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index c = 0; c < channels; ++c)
      for (int l = 0; l < L.length; ++l) flat(c * L.length + l, b) = X(c, b * L.stride + L.offset + l);
  return flat;
}

/// Dense stack with ReLU between layers and a linear output layer.
template <typename T>
class MLP {
 public:
  MLP() = default;
  MLP(int in, const std::vector<int>& hidden, int out, const std::string& name) {
    int prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers_.emplace_back(prev, hidden[i], name + "." + std::to_string(i));
      prev = hidden[i];
    }
    layers_.emplace_back(prev, out, name + "." + std::to_string(hidden.size()));
    acts_.resize(hidden.size());
  }

  void init(double hidden_gain, double out_gain, Rng& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].init(i + 1 == layers_.size() ? out_gain : hidden_gain, rng);
  }

  Matrix<T> forward(const Matrix<T>& X) {
    Matrix<T> h = X;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].forward(h);
      if (i < acts_.size()) h = acts_[i].forward(h);
    }
    return h;
  }

  Matrix<T> infer(const Matrix<T>& X) const {
    Matrix<T> h = X;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].infer(h);
      if (i < acts_.size()) h = ReLU<T>::infer(h);
    }
    return h;
  }

  Matrix<T> backward(const Matrix<T>& dY) {
    Matrix<T> g = dY;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (i < acts_.size()) g = acts_[i].backward(g);
      g = layers_[i].backward(g);
    }
    return g;
  }

  void params(std::vector<Param<T>*>& out) {
    for (auto& l : layers_) l.params(out);
  }

  std::vector<Dense<T>>& layers() { return layers_; }
  const std::vector<Dense<T>>& layers() const { return layers_; }
  int in() const { return layers_.front().in(); }
  int out() const { return layers_.back().out(); }

 private:
  std::vector<Dense<T>> layers_;
  std::vector<ReLU<T>> acts_;
};

/// Adam with optional global-norm gradient clipping.
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-5;
    double max_grad_norm = 0.5;  // <= 0 disables clipping
  };

  Adam() = default;
  Adam(std::vector<Param<T>*> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) {
      m_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.setZero();
  }

  double grad_norm() const {
    double s = 0.0;
    for (auto* p : params_) s += static_cast<double>(p->grad.squaredNorm());
    return std::sqrt(s);
  }

  /// Returns the pre-clipping gradient norm.
  double step() {
    const double norm = grad_norm();
    const double scale =
        (opt_.max_grad_norm > 0.0 && norm > opt_.max_grad_norm) ? opt_.max_grad_norm / (norm + 1e-6) : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T step_size = static_cast<T>(opt_.lr * std::sqrt(bc2) / bc1);
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T eps = static_cast<T>(opt_.eps * std::sqrt(bc2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      const Matrix<T> g = p.grad * static_cast<T>(scale);
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
      p.value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() + eps);
    }
    return norm;
  }

  void set_lr(double lr) { opt_.lr = lr; }
  const Options& options() const { return opt_; }

 private:
  std::vector<Param<T>*> params_;
  Options opt_;
  std::vector<Matrix<T>> m_, v_;
  long long t_ = 0;
};

}  // namespace datt::nn
