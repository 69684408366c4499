#pragma once

// Minimal layer library with explicit forward/backward passes. Activations
// are stored as C x (N*H*W) column-major matrices, so each column holds
// one pixel's channel vector. Layers cache what their backward pass needs;
// a layer instance serves one forward/backward pair at a time.

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace augmap::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
struct Tensor {
  int c = 0, n = 0, h = 0, w = 0;
  Mat<T> m;

  Tensor() = default;
  Tensor(int c_, int n_, int h_, int w_) : c(c_), n(n_), h(h_), w(w_), m(Mat<T>::Zero(c_, n_ * h_ * w_)) {}

  int pixels() const { return n * h * w; }
  bool same_shape(const Tensor& o) const { return c == o.c && n == o.n && h == o.h && w == o.w; }
  void zero_like(const Tensor& o) {
    c = o.c, n = o.n, h = o.h, w = o.w;
    m.setZero(o.c, o.pixels());
  }
  T& at(int ch, int b, int y, int x) { return m(ch, (b * h + y) * w + x); }
  T at(int ch, int b, int y, int x) const { return m(ch, (b * h + y) * w + x); }
};

/// Named trainable array with its gradient and optimizer moments.
template <class T>
struct Param {
  std::string name;
  std::string group;
  Mat<T> value, grad, m1, m2;
  bool decay = true;

  void init(std::string n, std::string g, int rows, int cols, bool wd = true) {
    name = std::move(n);
    group = std::move(g);
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
    m1.setZero(rows, cols);
    m2.setZero(rows, cols);
    decay = wd;
  }
};

template <class T>
using ParamList = std::vector<Param<T>*>;

template <class T>
void kaiming(Param<T>& p, int fan_in, std::mt19937_64& rng, double gain = 2.0) {
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(dist(rng));
}

/// Same-padded, stride-1 convolution over odd square kernels.
template <class T>
class Conv2d {
 public:
  Param<T> weight, bias;

  Conv2d() = default;
  Conv2d(const std::string& name, const std::string& group, int cin, int cout, int k, bool use_bias,
         std::mt19937_64& rng)
      : cin_(cin), cout_(cout), k_(k), use_bias_(use_bias) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("conv kernel must be odd");
    weight.init(name + ".weight", group, cout, k * k * cin);
    kaiming(weight, k * k * cin, rng);
    if (use_bias) bias.init(name + ".bias", group, cout, 1, false);
  }

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  int kernel() const { return k_; }

  void params(ParamList<T>& out) {
    out.push_back(&weight);
    if (use_bias_) out.push_back(&bias);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.c != cin_) throw std::invalid_argument(weight.name + ": expected " + std::to_string(cin_) + " channels");
    shape_ = x;
    shape_.m.resize(0, 0);
    Tensor<T> y(cout_, x.n, x.h, x.w);
    if (k_ == 1) {
      cols_ = x.m;
    } else {
      im2col(x);
    }
    y.m.noalias() = weight.value * cols_;
    if (use_bias_) y.m.colwise() += bias.value.col(0);
    return y;
  }

  /// Accumulates parameter gradients; returns d loss / d input when
  /// `need_input_grad`, else an empty tensor.
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true) {
    weight.grad.noalias() += dy.m * cols_.transpose();
    if (use_bias_) bias.grad.col(0) += dy.m.rowwise().sum();
    Tensor<T> dx;
    if (!need_input_grad) return dx;
    dx.zero_like(shape_);
    dx.c = cin_;
    dx.m.setZero(cin_, shape_.pixels());
    if (k_ == 1) {
      dx.m.noalias() = weight.value.transpose() * dy.m;
      return dx;
    }
    const Mat<T> dcols = weight.value.transpose() * dy.m;
    const int r = k_ / 2;
    for (int b = 0; b < shape_.n; ++b)
      for (int y = 0; y < shape_.h; ++y)
        for (int x = 0; x < shape_.w; ++x) {
          const int p = (b * shape_.h + y) * shape_.w + x;
          for (int ky = 0; ky < k_; ++ky) {
            const int yy = y + ky - r;
            if (yy < 0 || yy >= shape_.h) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int xx = x + kx - r;
              if (xx < 0 || xx >= shape_.w) continue;
              dx.m.col((b * shape_.h + yy) * shape_.w + xx) += dcols.block((ky * k_ + kx) * cin_, p, cin_, 1);
            }
          }
        }
    return dx;
  }

 private:
  void im2col(const Tensor<T>& x) {
    const int r = k_ / 2;
    cols_.setZero(k_ * k_ * cin_, x.pixels());
    for (int b = 0; b < x.n; ++b)
      for (int y = 0; y < x.h; ++y)
        for (int xx0 = 0; xx0 < x.w; ++xx0) {
          const int p = (b * x.h + y) * x.w + xx0;
          for (int ky = 0; ky < k_; ++ky) {
            const int yy = y + ky - r;
            if (yy < 0 || yy >= x.h) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int xx = xx0 + kx - r;
              if (xx < 0 || xx >= x.w) continue;
              cols_.block((ky * k_ + kx) * cin_, p, cin_, 1) = x.m.col((b * x.h + yy) * x.w + xx);
            }
          }
        }
  }

  int cin_ = 0, cout_ = 0, k_ = 1;
  bool use_bias_ = false;
  Tensor<T> shape_;
  Mat<T> cols_;
};

/// Per-channel normalization: batch statistics in training, running
/// statistics in evaluation.
template <class T>
class BatchNorm {
 public:
  Param<T> gamma, beta;
  Vec<T> running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  BatchNorm(const std::string& name, const std::string& group, int c) {
    gamma.init(name + ".gamma", group, c, 1, false);
    gamma.value.setOnes();
    beta.init(name + ".beta", group, c, 1, false);
    running_mean = Vec<T>::Zero(c);
    running_var = Vec<T>::Ones(c);
  }

  void params(ParamList<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training, bool update_stats = true) {
    training_ = training;
    Tensor<T> y = x;
    const T count = static_cast<T>(x.pixels());
    if (training) {
      const Vec<T> mean = x.m.rowwise().sum() / count;
      xhat_ = x.m.colwise() - mean;
      const Vec<T> var = xhat_.array().square().rowwise().sum() / count;
      inv_std_ = (var.array() + static_cast<T>(eps)).rsqrt();
      if (update_stats) {
        const T mo = static_cast<T>(momentum);
        const T unbias = count > 1 ? count / (count - 1) : T(1);
        running_mean = (1 - mo) * running_mean + mo * mean;
        running_var = (1 - mo) * running_var + mo * unbias * var;
      }
    } else {
      inv_std_ = (running_var.array() + static_cast<T>(eps)).rsqrt();
      xhat_ = x.m.colwise() - running_mean;
    }
    xhat_ = inv_std_.asDiagonal() * xhat_;
    y.m = (gamma.value.col(0).asDiagonal() * xhat_).colwise() + beta.value.col(0);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    gamma.grad.col(0) += (dy.m.array() * xhat_.array()).rowwise().sum().matrix();
    beta.grad.col(0) += dy.m.rowwise().sum();
    Tensor<T> dx = dy;
    const Vec<T> g = gamma.value.col(0).cwiseProduct(inv_std_);
    if (!training_) {
      dx.m = g.asDiagonal() * dy.m;
      return dx;
    }
    const T count = static_cast<T>(dy.pixels());
    const Vec<T> sum_dy = dy.m.rowwise().sum() / count;
    const Vec<T> sum_dy_xhat = (dy.m.array() * xhat_.array()).rowwise().sum().matrix() / count;
    dx.m = dy.m.colwise() - sum_dy;
    dx.m -= sum_dy_xhat.asDiagonal() * xhat_;
    dx.m = g.asDiagonal() * dx.m;
    return dx;
  }

 private:
  bool training_ = false;
  Mat<T> xhat_;
  Vec<T> inv_std_;
};

template <class T>
class Relu {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    y.m = x.m.cwiseMax(T(0));
    mask_ = (x.m.array() > T(0)).template cast<T>();
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = dy;
    dx.m = dy.m.cwiseProduct(mask_);
    return dx;
  }

 private:
  Mat<T> mask_;
};

/// Stack of conv layers; every layer but an optional plain last one is
/// followed by batch norm and ReLU.
template <class T>
class ConvStack {
 public:
  ConvStack() = default;
  /// `channels` lists the output width of each layer. With `plain_last`
  /// the final layer is a biased convolution with no norm or activation.
  ConvStack(const std::string& name, const std::string& group, int cin, const std::vector<int>& channels, int k,
            bool plain_last, std::mt19937_64& rng)
      : plain_last_(plain_last) {
    int c = cin;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const bool last_plain = plain_last && i + 1 == channels.size();
      const std::string ln = name + "." + std::to_string(i);
      auto layer = std::make_unique<Layer>();
      layer->conv = Conv2d<T>(ln + ".conv", group, c, channels[i], k, last_plain, rng);
      if (!last_plain) layer->bn = BatchNorm<T>(ln + ".bn", group, channels[i]);
      layer->plain = last_plain;
      layers_.push_back(std::move(layer));
      c = channels[i];
    }
  }

  bool empty() const { return layers_.empty(); }
  std::size_t depth() const { return layers_.size(); }

  void params(ParamList<T>& out) {
    for (auto& l : layers_) {
      l->conv.params(out);
      if (!l->plain) l->bn.params(out);
    }
  }

  std::vector<BatchNorm<T>*> norms() {
    std::vector<BatchNorm<T>*> out;
    for (auto& l : layers_)
      if (!l->plain) out.push_back(&l->bn);
    return out;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training, bool update_stats = true) {
    Tensor<T> h = x;
    for (auto& l : layers_) {
      h = l->conv.forward(h);
      if (!l->plain) {
        h = l->bn.forward(h, training, update_stats);
        h = l->relu.forward(h);
      }
    }
    return h;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true) {
    Tensor<T> g = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      auto& l = *layers_[i];
      if (!l.plain) {
        g = l.relu.backward(g);
        g = l.bn.backward(g);
      }
      g = l.conv.backward(g, need_input_grad || i > 0);
    }
    return g;
  }

 private:
  struct Layer {
    Conv2d<T> conv;
    BatchNorm<T> bn;
    Relu<T> relu;
    bool plain = false;
  };
  std::vector<std::unique_ptr<Layer>> layers_;
  bool plain_last_ = false;
};

struct AdamWConfig {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 35.0;  // global L2 norm, <= 0 disables
};

/// Decoupled weight decay Adam over a parameter list.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// Returns the pre-clipping global gradient norm.
  double step(const ParamList<T>& params, double lr) {
    double sq = 0.0;
    for (auto* p : params) sq += static_cast<double>(p->grad.squaredNorm());
    const double norm = std::sqrt(sq);
    const T scale = static_cast<T>(cfg_.grad_clip > 0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_), bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step = static_cast<T>(lr / bc1), eps = static_cast<T>(cfg_.eps);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    for (auto* p : params) {
      if (p->decay && cfg_.weight_decay > 0) p->value *= static_cast<T>(1.0 - lr * cfg_.weight_decay);
      p->m1 = b1 * p->m1 + (1 - b1) * scale * p->grad;
      p->m2 = b2 * p->m2 + (1 - b2) * (scale * p->grad).cwiseAbs2();
      p->value.array() -= step * p->m1.array() / ((p->m2.array().sqrt() * inv_sqrt_bc2) + eps);
    }
    return norm;
  }

  long steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
};

/// lr at step t of `total` under cosine annealing down to `min_ratio`*base.
inline double cosine_lr(double base, long t, long total, double min_ratio = 0.01) {
  if (total <= 1) return base;
  const double c = 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(total - 1)));
  return base * (min_ratio + (1.0 - min_ratio) * c);
}

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (auto* p : params) p->grad.setZero();
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace augmap::nn
