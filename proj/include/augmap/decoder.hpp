#pragma once

// Query-based polyline decoder with per-point deformable sampling. Each
// query carries Np reference points in logit space over the normalized
// perception range. A layer samples the latent grid at K learned offsets
// around each reference point, mixes the samples with learned attention
// weights, updates the query through a feed-forward block and refines the
// points. Reference points are detached between layers.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "augmap/map_core.hpp"
#include "augmap/nn.hpp"

namespace augmap::nn {

struct DecoderConfig {
  int dim = 64;
  int queries = 25;
  int points = 8;
  int offsets = 4;
  int layers = 2;
  int hidden = 128;
  GridSpec grid;
};

template <class T>
struct DecoderLayerOutput {
  Mat<T> point_logits;  // 2Np x N; rows (u_0, v_0, u_1, v_1, ...)
  Mat<T> class_logits;  // (C+1) x N
  Mat<T> aux_logits;    // 2Np x N
};

template <class T>
struct DecoderLayerGrad {
  Mat<T> points;  // d loss / d point coordinates in meters, 2Np x N (x, y pairs)
  Mat<T> classes;
  Mat<T> aux;     // may be empty
};

template <class T>
class DeformableDecoder {
 public:
  DeformableDecoder() = default;
  DeformableDecoder(const DecoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    const int D = cfg.dim, N = cfg.queries, P = cfg.points, K = cfg.offsets;
    query_.init("decoder.query", "decoder", D, N);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Eigen::Index i = 0; i < query_.value.size(); ++i) query_.value.data()[i] = static_cast<T>(nd(rng));
    ref_.init("decoder.ref", "decoder", 2 * P, N, false);
    init_reference_points();
    for (int l = 0; l < cfg.layers; ++l) {
      Layer L;
      const std::string n = "decoder.layer" + std::to_string(l);
      L.off_w.init(n + ".offset.weight", "decoder", 2 * P * K, D);
      L.off_b.init(n + ".offset.bias", "decoder", 2 * P * K, 1, false);
      // One cell along each axis in both directions, cycling when K > 4.
      const int pattern[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
      for (int j = 0; j < P; ++j)
        for (int k = 0; k < K; ++k) {
          const double scale = 1.0 + k / 4;
          L.off_b.value((j * K + k) * 2, 0) = static_cast<T>(scale * pattern[k % 4][0]);
          L.off_b.value((j * K + k) * 2 + 1, 0) = static_cast<T>(scale * pattern[k % 4][1]);
        }
      L.att_w.init(n + ".attn.weight", "decoder", P * K, D);
      L.att_b.init(n + ".attn.bias", "decoder", P * K, 1, false);
      L.val_w.init(n + ".value.weight", "decoder", D, D);
      kaiming(L.val_w, D, rng, 1.0);
      const int zin = D + P * D + 2 * P;
      L.ffn1_w.init(n + ".ffn1.weight", "decoder", cfg.hidden, zin);
      kaiming(L.ffn1_w, zin, rng);
      L.ffn1_b.init(n + ".ffn1.bias", "decoder", cfg.hidden, 1, false);
      L.ffn2_w.init(n + ".ffn2.weight", "decoder", D, cfg.hidden);
      kaiming(L.ffn2_w, cfg.hidden, rng, 0.5);
      L.ffn2_b.init(n + ".ffn2.bias", "decoder", D, 1, false);
      L.reg_wa.init(n + ".reg.local", "decoder", 2, D);
      kaiming(L.reg_wa, D, rng, 0.01);
      L.reg_wq.init(n + ".reg.query", "decoder", 2 * P, D);
      L.reg_b.init(n + ".reg.bias", "decoder", 2 * P, 1, false);
      L.cls_w.init(n + ".cls.weight", "decoder", kNumClasses + 1, D);
      kaiming(L.cls_w, D, rng, 0.01);
      L.cls_b.init(n + ".cls.bias", "decoder", kNumClasses + 1, 1, false);
      L.cls_b.value(kEmptyClass, 0) = T(2);
      L.aux_w.init(n + ".aux.weight", "decoder", 2 * P, D);
      L.aux_b.init(n + ".aux.bias", "decoder", 2 * P, 1, false);
      layers_.push_back(std::move(L));
    }
  }

  const DecoderConfig& config() const { return cfg_; }

  void params(ParamList<T>& out) {
    out.push_back(&query_);
    out.push_back(&ref_);
    for (auto& L : layers_)
      for (Param<T>* p : {&L.off_w, &L.off_b, &L.att_w, &L.att_b, &L.val_w, &L.ffn1_w, &L.ffn1_b, &L.ffn2_w,
                          &L.ffn2_b, &L.reg_wa, &L.reg_wq, &L.reg_b, &L.cls_w, &L.cls_b, &L.aux_w, &L.aux_b})
        out.push_back(p);
  }

  /// Decodes `batch` samples from a D x (batch*H*W) latent. Results are
  /// indexed [sample][layer].
  std::vector<std::vector<DecoderLayerOutput<T>>> forward(const Tensor<T>& latent) {
    check_latent(latent);
    latent_ = latent;
    cache_.assign(latent.n, {});
    std::vector<std::vector<DecoderLayerOutput<T>>> out(latent.n);
    for (int b = 0; b < latent.n; ++b) {
      Mat<T> q = query_.value;
      Mat<T> R = ref_.value;
      for (int l = 0; l < cfg_.layers; ++l) {
        Cache c;
        out[b].push_back(layer_forward(layers_[l], b, q, R, c));
        q = c.q_out;
        R = out[b].back().point_logits;
        cache_[b].push_back(std::move(c));
      }
    }
    return out;
  }

  /// Accumulates parameter gradients and returns d loss / d latent.
  /// grads[b][l] may hold empty matrices for unused outputs.
  Tensor<T> backward(const std::vector<std::vector<DecoderLayerGrad<T>>>& grads) {
    Tensor<T> dlat;
    dlat.zero_like(latent_);
    for (int b = 0; b < latent_.n; ++b) {
      Mat<T> dq_next = Mat<T>::Zero(cfg_.dim, cfg_.queries);
      for (int l = cfg_.layers - 1; l >= 0; --l) {
        Mat<T> dq = layer_backward(layers_[l], b, cache_[b][l], grads[b][l], dq_next, dlat);
        dq_next = std::move(dq);
      }
      query_.grad += dq_next;
    }
    return dlat;
  }

  /// Meters from point logits.
  std::vector<Point2> to_points(const Mat<T>& logits, int query) const {
    std::vector<Point2> pts(cfg_.points);
    const GridSpec& g = cfg_.grid;
    for (int j = 0; j < cfg_.points; ++j) {
      const double u = sigmoid(static_cast<double>(logits(2 * j, query)));
      const double v = sigmoid(static_cast<double>(logits(2 * j + 1, query)));
      pts[j] = {g.x_min + u * (g.x_max - g.x_min), g.y_min + v * (g.y_max - g.y_min)};
    }
    return pts;
  }

  /// Cells whose features any sample of the last forward pass touched with
  /// nonzero bilinear weight, for sample `b`.
  std::vector<char> footprint(int b) const {
    std::vector<char> mask(static_cast<std::size_t>(cfg_.grid.cells()), 0);
    for (const auto& c : cache_[b])
      for (const auto& s : c.taps)
        for (int t = 0; t < 4; ++t)
          if (s.idx[t] >= 0 && s.w[t] != T(0)) mask[s.idx[t]] = 1;
    return mask;
  }

  Param<T>& query_param() { return query_; }
  Param<T>& reference_param() { return ref_; }

 private:
  struct Layer {
    Param<T> off_w, off_b, att_w, att_b, val_w, ffn1_w, ffn1_b, ffn2_w, ffn2_b, reg_wa, reg_wq, reg_b, cls_w, cls_b,
        aux_w, aux_b;
  };

  // One bilinear tap: four corner cell indices (-1 outside) and weights,
  // plus the weight derivatives along rows and columns.
  struct Tap {
    std::array<int, 4> idx;
    std::array<T, 4> w, dwr, dwc;
  };

  struct Cache {
    Mat<T> q_in, R, offsets, attn, samples, g, agg, z, h_pre, h, q_out, R_out;
    std::vector<Tap> taps;  // (query, point, offset) order
  };

  void check_latent(const Tensor<T>& latent) const {
    if (latent.c != cfg_.dim || latent.h != cfg_.grid.height || latent.w != cfg_.grid.width)
      throw std::invalid_argument("decoder: latent shape does not match the decoder config");
  }

  void init_reference_points() {
    const int N = cfg_.queries, P = cfg_.points;
    auto logit = [](double p) { return std::log(p / (1.0 - p)); };
    auto set_point = [&](int q, int j, double u, double v) {
      u = std::clamp(u, 0.02, 0.98);
      v = std::clamp(v, 0.02, 0.98);
      ref_.value(2 * j, q) = static_cast<T>(logit(u));
      ref_.value(2 * j + 1, q) = static_cast<T>(logit(v));
    };
    // Longitudinal lines across the lateral range, then closed rectangles
    // stepping along the range.
    const int n_lines = std::max(1, (N * 18) / 25);
    for (int q = 0; q < N; ++q) {
      if (q < n_lines) {
        const double v = (q + 0.5) / n_lines;
        for (int j = 0; j < P; ++j) set_point(q, j, 0.02 + 0.96 * j / std::max(1, P - 1), v);
      } else {
        const int r = q - n_lines, n_rect = N - n_lines;
        const double uc = (r + 0.5) / n_rect, half_u = 0.05, v0 = 0.15, v1 = 0.85;
        for (int j = 0; j < P; ++j) {
          // Walk the rectangle perimeter at evenly spaced parameters.
          const double t = static_cast<double>(j) / P * 4.0;
          const int side = static_cast<int>(t);
          const double f = t - side;
          double u = 0, v = 0;
          switch (side) {
            case 0: u = uc - half_u, v = v0 + f * (v1 - v0); break;
            case 1: u = uc - half_u + f * 2 * half_u, v = v1; break;
            case 2: u = uc + half_u, v = v1 - f * (v1 - v0); break;
            default: u = uc + half_u - f * 2 * half_u, v = v0; break;
          }
          set_point(q, j, u, v);
        }
      }
    }
  }

  Tap make_tap(double r, double c) const {
    const int H = cfg_.grid.height, W = cfg_.grid.width;
    Tap t;
    const double r0 = std::floor(r), c0 = std::floor(c);
    const T fr = static_cast<T>(r - r0), fc = static_cast<T>(c - c0);
    const int ir = static_cast<int>(r0), ic = static_cast<int>(c0);
    const int rr[4] = {ir, ir + 1, ir, ir + 1};
    const int cc[4] = {ic, ic, ic + 1, ic + 1};
    t.w = {(1 - fr) * (1 - fc), fr * (1 - fc), (1 - fr) * fc, fr * fc};
    t.dwr = {-(1 - fc), (1 - fc), -fc, fc};
    t.dwc = {-(1 - fr), -fr, (1 - fr), fr};
    for (int k = 0; k < 4; ++k)
      t.idx[k] = (rr[k] >= 0 && rr[k] < H && cc[k] >= 0 && cc[k] < W) ? rr[k] * W + cc[k] : -1;
    return t;
  }

  DecoderLayerOutput<T> layer_forward(Layer& L, int b, const Mat<T>& q, const Mat<T>& R, Cache& c) {
    const int D = cfg_.dim, N = cfg_.queries, P = cfg_.points, K = cfg_.offsets;
    const int H = cfg_.grid.height, W = cfg_.grid.width;
    const auto lat = latent_.m.middleCols(static_cast<Eigen::Index>(b) * H * W, H * W);
    c.q_in = q;
    c.R = R;
    c.offsets = (L.off_w.value * q).colwise() + L.off_b.value.col(0);
    Mat<T> att_logits = (L.att_w.value * q).colwise() + L.att_b.value.col(0);
    c.attn.resize(P * K, N);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < P; ++j) {
        T mx = att_logits(j * K, i);
        for (int k = 1; k < K; ++k) mx = std::max(mx, att_logits(j * K + k, i));
        T s = 0;
        for (int k = 0; k < K; ++k) s += (c.attn(j * K + k, i) = std::exp(att_logits(j * K + k, i) - mx));
        for (int k = 0; k < K; ++k) c.attn(j * K + k, i) /= s;
      }

    c.samples.setZero(D, N * P * K);
    c.g.setZero(D, N * P);
    c.taps.resize(static_cast<std::size_t>(N) * P * K);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < P; ++j) {
        const double u = sigmoid(static_cast<double>(R(2 * j, i)));
        const double v = sigmoid(static_cast<double>(R(2 * j + 1, i)));
        for (int k = 0; k < K; ++k) {
          const int s = (i * P + j) * K + k;
          const double r = u * H - 0.5 + static_cast<double>(c.offsets(2 * (j * K + k), i));
          const double col = v * W - 0.5 + static_cast<double>(c.offsets(2 * (j * K + k) + 1, i));
          Tap& t = c.taps[s];
          t = make_tap(r, col);
          for (int e = 0; e < 4; ++e)
            if (t.idx[e] >= 0) c.samples.col(s) += t.w[e] * lat.col(t.idx[e]);
          c.g.col(i * P + j) += c.attn(j * K + k, i) * c.samples.col(s);
        }
      }
    c.agg = L.val_w.value * c.g;  // D x (N*P)

    const int zin = D + P * D + 2 * P;
    c.z.resize(zin, N);
    for (int i = 0; i < N; ++i) {
      c.z.col(i).head(D) = q.col(i);
      for (int j = 0; j < P; ++j) c.z.col(i).segment(D + j * D, D) = c.agg.col(i * P + j);
      for (int j = 0; j < 2 * P; ++j) c.z(D + P * D + j, i) = static_cast<T>(sigmoid(static_cast<double>(R(j, i))));
    }
    c.h_pre = (L.ffn1_w.value * c.z).colwise() + L.ffn1_b.value.col(0);
    c.h = c.h_pre.cwiseMax(T(0));
    c.q_out = q + ((L.ffn2_w.value * c.h).colwise() + L.ffn2_b.value.col(0));

    DecoderLayerOutput<T> out;
    Mat<T> delta = (L.reg_wq.value * c.q_out).colwise() + L.reg_b.value.col(0);
    const Mat<T> local = L.reg_wa.value * c.agg;  // 2 x (N*P)
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < P; ++j) {
        delta(2 * j, i) += local(0, i * P + j);
        delta(2 * j + 1, i) += local(1, i * P + j);
      }
    out.point_logits = R + delta;
    out.class_logits = (L.cls_w.value * c.q_out).colwise() + L.cls_b.value.col(0);
    out.aux_logits = out.point_logits + ((L.aux_w.value * c.q_out).colwise() + L.aux_b.value.col(0));
    c.R_out = out.point_logits;
    return out;
  }

  // d loss / d logits from d loss / d meters.
  Mat<T> logit_grad(const Mat<T>& dmeters, const Mat<T>& logits) const {
    const GridSpec& g = cfg_.grid;
    Mat<T> d(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.cols(); ++i)
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double s = sigmoid(static_cast<double>(logits(r, i)));
        const double span = (r % 2 == 0) ? (g.x_max - g.x_min) : (g.y_max - g.y_min);
        d(r, i) = static_cast<T>(static_cast<double>(dmeters(r, i)) * span * s * (1.0 - s));
      }
    return d;
  }

  Mat<T> layer_backward(Layer& L, int b, const Cache& c, const DecoderLayerGrad<T>& grad, const Mat<T>& dq_out_next,
                        Tensor<T>& dlat) {
    const int D = cfg_.dim, N = cfg_.queries, P = cfg_.points, K = cfg_.offsets;
    const int H = cfg_.grid.height, W = cfg_.grid.width;
    const auto lat = latent_.m.middleCols(static_cast<Eigen::Index>(b) * H * W, H * W);
    auto dlat_b = dlat.m.middleCols(static_cast<Eigen::Index>(b) * H * W, H * W);

    Mat<T> dq_out = dq_out_next;
    Mat<T> dR_out = Mat<T>::Zero(2 * P, N);
    if (grad.points.size()) dR_out += logit_grad(grad.points, c.R_out);
    if (grad.aux.size()) {
      Mat<T> aux_logits = c.R_out + ((L.aux_w.value * c.q_out).colwise() + L.aux_b.value.col(0));
      const Mat<T> da = logit_grad(grad.aux, aux_logits);
      dR_out += da;
      L.aux_w.grad.noalias() += da * c.q_out.transpose();
      L.aux_b.grad.col(0) += da.rowwise().sum();
      dq_out.noalias() += L.aux_w.value.transpose() * da;
    }
    if (grad.classes.size()) {
      L.cls_w.grad.noalias() += grad.classes * c.q_out.transpose();
      L.cls_b.grad.col(0) += grad.classes.rowwise().sum();
      dq_out.noalias() += L.cls_w.value.transpose() * grad.classes;
    }
    // point_logits = R + reg_wq q_out + reg_b + local(agg)
    L.reg_wq.grad.noalias() += dR_out * c.q_out.transpose();
    L.reg_b.grad.col(0) += dR_out.rowwise().sum();
    dq_out.noalias() += L.reg_wq.value.transpose() * dR_out;
    Mat<T> dlocal(2, N * P);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < P; ++j) dlocal(0, i * P + j) = dR_out(2 * j, i), dlocal(1, i * P + j) = dR_out(2 * j + 1, i);
    L.reg_wa.grad.noalias() += dlocal * c.agg.transpose();
    Mat<T> dagg = L.reg_wa.value.transpose() * dlocal;
    // Layer 0 reference points are parameters; later ones are detached.
    const bool first = &L == &layers_.front();
    if (first) ref_.grad += dR_out;

    // q_out = q + ffn2(relu(ffn1(z)))
    Mat<T> dq = dq_out;
    L.ffn2_w.grad.noalias() += dq_out * c.h.transpose();
    L.ffn2_b.grad.col(0) += dq_out.rowwise().sum();
    Mat<T> dh = L.ffn2_w.value.transpose() * dq_out;
    dh = dh.cwiseProduct((c.h_pre.array() > T(0)).template cast<T>().matrix());
    L.ffn1_w.grad.noalias() += dh * c.z.transpose();
    L.ffn1_b.grad.col(0) += dh.rowwise().sum();
    const Mat<T> dz = L.ffn1_w.value.transpose() * dh;
    for (int i = 0; i < N; ++i) {
      dq.col(i) += dz.col(i).head(D);
      for (int j = 0; j < P; ++j) dagg.col(i * P + j) += dz.col(i).segment(D + j * D, D);
    }
    Mat<T> dR_in = Mat<T>::Zero(2 * P, N);
    if (first) dR_in = dz.bottomRows(2 * P);

    L.val_w.grad.noalias() += dagg * c.g.transpose();
    const Mat<T> dg = L.val_w.value.transpose() * dagg;  // D x (N*P)

    Mat<T> dattn(P * K, N), doff = Mat<T>::Zero(2 * P * K, N);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < P; ++j) {
        const auto dgc = dg.col(i * P + j);
        for (int k = 0; k < K; ++k) {
          const int s = (i * P + j) * K + k;
          const T a = c.attn(j * K + k, i);
          dattn(j * K + k, i) = dgc.dot(c.samples.col(s));
          const Tap& t = c.taps[s];
          T dr = 0, dc = 0;
          for (int e = 0; e < 4; ++e) {
            if (t.idx[e] < 0) continue;
            const T proj = dgc.dot(lat.col(t.idx[e]));
            dr += t.dwr[e] * proj;
            dc += t.dwc[e] * proj;
            if (t.w[e] != T(0)) dlat_b.col(t.idx[e]) += (a * t.w[e]) * dgc;
          }
          doff(2 * (j * K + k), i) = a * dr;
          doff(2 * (j * K + k) + 1, i) = a * dc;
        }
      }
    // Softmax over the K offsets of each point.
    Mat<T> datt_logits(P * K, N);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < P; ++j) {
        T dot = 0;
        for (int k = 0; k < K; ++k) dot += c.attn(j * K + k, i) * dattn(j * K + k, i);
        for (int k = 0; k < K; ++k) datt_logits(j * K + k, i) = c.attn(j * K + k, i) * (dattn(j * K + k, i) - dot);
      }
    L.att_w.grad.noalias() += datt_logits * c.q_in.transpose();
    L.att_b.grad.col(0) += datt_logits.rowwise().sum();
    dq.noalias() += L.att_w.value.transpose() * datt_logits;
    if (first) {
      // Sampling positions and the positional FFN input both read sigmoid(R).
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < P; ++j)
          for (int k = 0; k < K; ++k) {
            dR_in(2 * j, i) += doff(2 * (j * K + k), i) * T(H);
            dR_in(2 * j + 1, i) += doff(2 * (j * K + k) + 1, i) * T(W);
          }
      for (Eigen::Index i = 0; i < dR_in.size(); ++i) {
        const T sg = static_cast<T>(sigmoid(static_cast<double>(c.R.data()[i])));
        ref_.grad.data()[i] += dR_in.data()[i] * sg * (1 - sg);
      }
    }
    L.off_w.grad.noalias() += doff * c.q_in.transpose();
    L.off_b.grad.col(0) += doff.rowwise().sum();
    dq.noalias() += L.off_w.value.transpose() * doff;
    return dq;
  }

  DecoderConfig cfg_;
  Param<T> query_, ref_;
  std::vector<Layer> layers_;
  Tensor<T> latent_;
  std::vector<std::vector<Cache>> cache_;
};

}  // namespace augmap::nn
