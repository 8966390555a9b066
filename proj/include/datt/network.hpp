#pragma once

// Feedforward trajectory encoder + actor-critic heads.
//
// Encoder: the (3 x N) window of reference offsets passes through
// `conv_layers` same-padded Conv1d+ReLU layers, is flattened channel-major
// (c * N + i) and projected linearly to `embed_dim`. The actor and critic are
// separate ReLU MLPs over [state features ; embedding]; the encoder is shared.

#include "datt/nn.hpp"

namespace datt {

struct NetShape {
  int state_dim = 16;
  int window_count = 10;
  int conv_channels = 16;
  int conv_kernel = 3;
  int conv_layers = 3;
  int embed_dim = 32;
  int hidden = 64;
  int hidden_layers = 3;
  int action_dim = 4;

  int window_dim() const { return 3 * window_count; }
  int input_dim() const { return state_dim + window_dim(); }

  bool operator==(const NetShape&) const = default;

  void validate() const {
    if (state_dim < 1 || window_count < 1 || conv_channels < 1 || conv_kernel < 1 ||
        conv_kernel % 2 == 0 || conv_layers < 1 || embed_dim < 1 || hidden < 1 ||
        hidden_layers < 1 || action_dim < 1)
      throw Error("NetShape: invalid layer configuration");
  }
};

template <typename T>
class TrajectoryEncoder {
 public:
  TrajectoryEncoder() = default;
  explicit TrajectoryEncoder(const NetShape& s) : shape_(s) {
    const int pad = s.conv_kernel / 2;
    layout_ = {s.window_count + 2 * pad, pad, s.window_count};
    int in = 3;
    for (int i = 0; i < s.conv_layers; ++i) {
      convs_.emplace_back(in, s.conv_channels, s.conv_kernel, true, "enc.conv" + std::to_string(i));
      in = s.conv_channels;
    }
    acts_.resize(convs_.size());
    proj_ = nn::Dense<T>(s.conv_channels * s.window_count, s.embed_dim, "enc.proj");
  }

  void init(Rng& rng) {
    for (auto& c : convs_) c.init(std::sqrt(2.0), rng);
    proj_.init(std::sqrt(2.0), rng);
  }

  /// window: (3N) x B, channel-major per column.
  nn::Matrix<T> forward(const nn::Matrix<T>& window) {
    nn::Matrix<T> x = nn::to_sequence<T>(window, 3, layout_);
    for (std::size_t i = 0; i < convs_.size(); ++i) x = acts_[i].forward(convs_[i].forward(x, layout_));
    return proj_.forward(nn::from_sequence<T>(x, layout_));
  }

  nn::Matrix<T> infer(const nn::Matrix<T>& window) const {
    nn::Matrix<T> x = nn::to_sequence<T>(window, 3, layout_);
    for (const auto& c : convs_) x = nn::ReLU<T>::infer(c.infer(x, layout_));
    return proj_.infer(nn::from_sequence<T>(x, layout_));
  }

  /// Returns the gradient w.r.t. the window input.
  nn::Matrix<T> backward(const nn::Matrix<T>& d_embed) {
    nn::Matrix<T> g = nn::to_sequence<T>(proj_.backward(d_embed), shape_.conv_channels, layout_);
    for (std::size_t i = convs_.size(); i-- > 0;) g = convs_[i].backward(acts_[i].backward(g));
    return nn::from_sequence<T>(g, layout_);
  }

  void params(std::vector<nn::Param<T>*>& out) {
    for (auto& c : convs_) c.params(out);
    proj_.params(out);
  }

  const std::vector<nn::Conv1d<T>>& convs() const { return convs_; }
  std::vector<nn::Conv1d<T>>& convs() { return convs_; }
  const nn::Dense<T>& projection() const { return proj_; }
  nn::Dense<T>& projection() { return proj_; }

 private:
  NetShape shape_;
  nn::SeqLayout layout_;
  std::vector<nn::Conv1d<T>> convs_;
  std::vector<nn::ReLU<T>> acts_;
  nn::Dense<T> proj_;
};

template <typename T>
struct ActorCriticOutput {
  nn::Matrix<T> mean;   // action_dim x B, pre-squash
  nn::Matrix<T> value;  // 1 x B
};

template <typename T>
class ActorCritic {
 public:
  ActorCritic() = default;
  explicit ActorCritic(const NetShape& s)
      : shape_(s), encoder_(s),
        pi_(s.state_dim + s.embed_dim, std::vector<int>(static_cast<std::size_t>(s.hidden_layers), s.hidden),
            s.action_dim, "pi"),
        vf_(s.state_dim + s.embed_dim, std::vector<int>(static_cast<std::size_t>(s.hidden_layers), s.hidden), 1,
            "vf"),
        log_std_("log_std", s.action_dim, 1) {
    s.validate();
  }

  /// Orthogonal init: sqrt(2) hidden gain, 0.01 actor output, 1 critic output.
  void init(Rng& rng, double log_std_init = 0.0) {
    encoder_.init(rng);
    pi_.init(std::sqrt(2.0), 0.01, rng);
    vf_.init(std::sqrt(2.0), 1.0, rng);
    log_std_.value.setConstant(static_cast<T>(log_std_init));
  }

  const NetShape& shape() const { return shape_; }

  /// x: input_dim x B (state rows first, then window rows).
  ActorCriticOutput<T> forward(const nn::Matrix<T>& x) {
    const int S = shape_.state_dim;
    const nn::Matrix<T> h = encoder_.forward(x.bottomRows(shape_.window_dim()));
    nn::Matrix<T> z(S + shape_.embed_dim, x.cols());
    z.topRows(S) = x.topRows(S);
    z.bottomRows(shape_.embed_dim) = h;
    return {pi_.forward(z), vf_.forward(z)};
  }

  /// Accumulates parameter gradients for d(loss)/d(mean) and d(loss)/d(value).
  /// With `value_into_encoder` false the critic still learns but leaves the encoder to the actor.
  void backward(const nn::Matrix<T>& d_mean, const nn::Matrix<T>& d_value, bool value_into_encoder = true) {
    nn::Matrix<T> dz = pi_.backward(d_mean);
    const nn::Matrix<T> dz_v = vf_.backward(d_value);
    if (value_into_encoder) dz += dz_v;
    encoder_.backward(dz.bottomRows(shape_.embed_dim));
  }

  nn::Matrix<T> embed(const nn::Matrix<T>& window) const { return encoder_.infer(window); }

  nn::Matrix<T> mean(const nn::Matrix<T>& x) const {
    return pi_.infer(concat(x, encoder_.infer(x.bottomRows(shape_.window_dim()))));
  }

  nn::Matrix<T> value(const nn::Matrix<T>& x) const {
    return vf_.infer(concat(x, encoder_.infer(x.bottomRows(shape_.window_dim()))));
  }

  ActorCriticOutput<T> infer(const nn::Matrix<T>& x) const {
    const nn::Matrix<T> z = concat(x, encoder_.infer(x.bottomRows(shape_.window_dim())));
    return {pi_.infer(z), vf_.infer(z)};
  }

  /// Parameters in serialization order.
  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    encoder_.params(out);
    pi_.params(out);
    vf_.params(out);
    out.push_back(&log_std_);
    return out;
  }

  std::vector<const nn::Param<T>*> params() const {
    auto* self = const_cast<ActorCritic*>(this);
    std::vector<const nn::Param<T>*> out;
    for (auto* p : self->params()) out.push_back(p);
    return out;
  }

  nn::Param<T>& log_std() { return log_std_; }
  const nn::Param<T>& log_std() const { return log_std_; }
  TrajectoryEncoder<T>& encoder() { return encoder_; }
  const TrajectoryEncoder<T>& encoder() const { return encoder_; }
  nn::MLP<T>& actor() { return pi_; }
  const nn::MLP<T>& actor() const { return pi_; }
  nn::MLP<T>& critic() { return vf_; }
  const nn::MLP<T>& critic() const { return vf_; }

  template <typename U>
  ActorCritic<U> cast() const {
    ActorCritic<U> out(shape_);
    auto src = params();
    auto dst = out.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
  }

 private:
  nn::Matrix<T> concat(const nn::Matrix<T>& x, const nn::Matrix<T>& h) const {
    const int S = shape_.state_dim;
    nn::Matrix<T> z(S + shape_.embed_dim, x.cols());
    z.topRows(S) = x.topRows(S);
    z.bottomRows(shape_.embed_dim) = h;
    return z;
  }

  NetShape shape_;
  TrajectoryEncoder<T> encoder_;
  nn::MLP<T> pi_, vf_;
  nn::Param<T> log_std_;
};

}  // namespace datt
