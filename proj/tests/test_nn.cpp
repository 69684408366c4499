#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "augmap/decoder.hpp"
#include "augmap/nn.hpp"

using namespace augmap;
using namespace augmap::nn;

namespace {

Tensor<double> random_tensor(int c, int n, int h, int w, std::mt19937_64& rng) {
  Tensor<double> t(c, n, h, w);
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < t.m.size(); ++i) t.m.data()[i] = nd(rng);
  return t;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-6, std::max(std::abs(a), std::abs(b))); }

// Checks d(loss)/d(value) on up to 64 random coordinates of `value`
// against central differences.
void check_coords(Mat<double>& value, const Mat<double>& analytic, const std::function<double()>& loss,
                  std::mt19937_64& rng, double eps = 1e-5, double tol = 1e-3) {
  ASSERT_EQ(value.rows(), analytic.rows());
  ASSERT_EQ(value.cols(), analytic.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, value.size() - 1);
  const int n = static_cast<int>(std::min<Eigen::Index>(64, value.size()));
  for (int t = 0; t < n; ++t) {
    const Eigen::Index i = value.size() <= 64 ? t : pick(rng);
    const double old = value.data()[i];
    value.data()[i] = old + eps;
    const double lp = loss();
    value.data()[i] = old - eps;
    const double lm = loss();
    value.data()[i] = old;
    const double fd = (lp - lm) / (2 * eps);
    const double an = analytic.data()[i];
    if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
    EXPECT_LT(rel_err(fd, an), tol) << "coordinate " << i << " fd " << fd << " analytic " << an;
  }
}

}  // namespace

TEST(Conv2d, ShapeAndGradients) {
  for (int k : {1, 3, 5}) {
    std::mt19937_64 rng(k);
    Conv2d<double> conv("c", "g", 3, 4, k, true, rng);
    Tensor<double> x = random_tensor(3, 2, 5, 4, rng);
    const Tensor<double> y0 = conv.forward(x);
    EXPECT_EQ(y0.c, 4);
    EXPECT_EQ(y0.h, 5);
    EXPECT_EQ(y0.w, 4);
    const Mat<double> wts = random_tensor(4, 2, 5, 4, rng).m;
    auto loss = [&] { return conv.forward(x).m.cwiseProduct(wts).sum(); };
    conv.forward(x);
    Tensor<double> dy = y0;
    dy.m = wts;
    conv.weight.grad.setZero();
    conv.bias.grad.setZero();
    const Tensor<double> dx = conv.backward(dy);
    check_coords(x.m, dx.m, loss, rng);
    check_coords(conv.weight.value, conv.weight.grad, loss, rng);
    check_coords(conv.bias.value, conv.bias.grad, loss, rng);
  }
}

TEST(Conv2d, MatchesDirectConvolution) {
  std::mt19937_64 rng(3);
  Conv2d<double> conv("c", "g", 2, 3, 3, true, rng);
  Tensor<double> x = random_tensor(2, 1, 4, 5, rng);
  const Tensor<double> y = conv.forward(x);
  for (int o = 0; o < 3; ++o)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 5; ++c) {
        double s = conv.bias.value(o, 0);
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            for (int ci = 0; ci < 2; ++ci) {
              const int rr = r + ky - 1, cc = c + kx - 1;
              if (rr < 0 || rr >= 4 || cc < 0 || cc >= 5) continue;
              s += conv.weight.value(o, (ky * 3 + kx) * 2 + ci) * x.at(ci, 0, rr, cc);
            }
        EXPECT_NEAR(y.at(o, 0, r, c), s, 1e-12);
      }
}

TEST(BatchNorm, TrainingGradients) {
  std::mt19937_64 rng(5);
  BatchNorm<double> bn("bn", "g", 3);
  bn.gamma.value << 1.5, 0.7, -0.4;
  bn.beta.value << 0.1, -0.2, 0.3;
  Tensor<double> x = random_tensor(3, 2, 3, 3, rng);
  const Mat<double> wts = random_tensor(3, 2, 3, 3, rng).m;
  auto loss = [&] { return bn.forward(x, true, false).m.cwiseProduct(wts).sum(); };
  Tensor<double> dy = bn.forward(x, true, false);
  dy.m = wts;
  const Tensor<double> dx = bn.backward(dy);
  check_coords(x.m, dx.m, loss, rng);
  check_coords(bn.gamma.value, bn.gamma.grad, loss, rng);
  check_coords(bn.beta.value, bn.beta.grad, loss, rng);
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
  std::mt19937_64 rng(6);
  BatchNorm<double> bn("bn", "g", 2);
  Tensor<double> x = random_tensor(2, 1, 4, 4, rng);
  x.m.array() += 3.0;
  for (int i = 0; i < 200; ++i) bn.forward(x, true);
  const Vec<double> mean = x.m.rowwise().mean();
  EXPECT_NEAR(bn.running_mean(0), mean(0), 1e-6);
  const Tensor<double> a = bn.forward(x, false);
  const Tensor<double> b = bn.forward(x, false);
  EXPECT_EQ(a.m, b.m);
  const Mat<double> wts = random_tensor(2, 1, 4, 4, rng).m;
  auto loss = [&] { return bn.forward(x, false).m.cwiseProduct(wts).sum(); };
  Tensor<double> dy = a;
  dy.m = wts;
  bn.forward(x, false);
  const Tensor<double> dx = bn.backward(dy);
  check_coords(x.m, dx.m, loss, rng);
}

TEST(ConvStack, GradientsAndIdentityWhenEmpty) {
  std::mt19937_64 rng(7);
  ConvStack<double> empty("e", "g", 3, {}, 3, false, rng);
  Tensor<double> x = random_tensor(3, 2, 4, 3, rng);
  EXPECT_EQ(empty.forward(x, true).m, x.m);

  ConvStack<double> stack("s", "g", 3, {4, 5, 2}, 3, true, rng);
  const Mat<double> wts = random_tensor(2, 2, 4, 3, rng).m;
  auto loss = [&] { return stack.forward(x, true, false).m.cwiseProduct(wts).sum(); };
  Tensor<double> dy = stack.forward(x, true, false);
  EXPECT_EQ(dy.c, 2);
  dy.m = wts;
  ParamList<double> ps;
  stack.params(ps);
  zero_grads(ps);
  const Tensor<double> dx = stack.backward(dy);
  check_coords(x.m, dx.m, loss, rng);
  for (auto* p : ps) check_coords(p->value, p->grad, loss, rng);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Param<double> p;
  p.init("p", "g", 2, 1, false);
  p.grad << 3.0, -0.5;
  AdamW<double> opt({.lr = 0.1, .weight_decay = 0.0, .grad_clip = 0.0});
  opt.step({&p}, 0.1);
  EXPECT_NEAR(p.value(0), -0.1, 1e-6);
  EXPECT_NEAR(p.value(1), 0.1, 1e-6);
}

TEST(AdamW, ClipsGlobalNorm) {
  Param<double> p;
  p.init("p", "g", 1, 1, false);
  p.grad << 100.0;
  AdamW<double> opt({.grad_clip = 1.0});
  EXPECT_DOUBLE_EQ(opt.step({&p}, 1e-3), 100.0);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(1.0, 0, 11), 1.0);
  EXPECT_NEAR(cosine_lr(1.0, 10, 11), 0.01, 1e-12);
  EXPECT_NEAR(cosine_lr(1.0, 5, 11), 0.505, 1e-12);
}

namespace {

DecoderConfig small_decoder() {
  DecoderConfig c;
  c.dim = 6;
  c.queries = 3;
  c.points = 4;
  c.offsets = 3;
  c.layers = 2;
  c.hidden = 8;
  c.grid = GridSpec::desk();
  c.grid.height = 10;
  c.grid.width = 6;
  return c;
}

struct DecoderProbe {
  std::vector<std::vector<DecoderLayerGrad<double>>> grads;
  double loss(const std::vector<std::vector<DecoderLayerOutput<double>>>& out, const DeformableDecoder<double>& dec,
              const Mat<double>& wp, const Mat<double>& wc, const Mat<double>& wa) {
    double s = 0;
    for (auto& sample : out)
      for (auto& l : sample) {
        for (int i = 0; i < l.point_logits.cols(); ++i) {
          const auto pts = dec.to_points(l.point_logits, i);
          const auto aux = dec.to_points(l.aux_logits, i);
          for (std::size_t j = 0; j < pts.size(); ++j) {
            s += wp(2 * j, i) * pts[j].x + wp(2 * j + 1, i) * pts[j].y;
            s += wa(2 * j, i) * aux[j].x + wa(2 * j + 1, i) * aux[j].y;
          }
        }
        s += l.class_logits.cwiseProduct(wc).sum();
      }
    return s;
  }
};

}  // namespace

// Reference points are detached between layers, which central differences
// cannot see, so the exact check runs on a single layer.
TEST(Decoder, ShapesAndGradients) {
  std::mt19937_64 rng(11);
  DecoderConfig cfg = small_decoder();
  cfg.layers = 1;
  DeformableDecoder<double> dec(cfg, rng);
  // Break the symmetric initialization so every path carries gradient.
  ParamList<double> ps;
  dec.params(ps);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto* p : ps)
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += nd(rng);
  Tensor<double> lat = random_tensor(cfg.dim, 2, cfg.grid.height, cfg.grid.width, rng);

  const Mat<double> wp = random_tensor(2 * cfg.points, 1, 1, cfg.queries, rng).m.reshaped(2 * cfg.points, cfg.queries);
  const Mat<double> wa = random_tensor(2 * cfg.points, 1, 1, cfg.queries, rng).m.reshaped(2 * cfg.points, cfg.queries);
  const Mat<double> wc = random_tensor(kNumClasses + 1, 1, 1, cfg.queries, rng).m.reshaped(kNumClasses + 1, cfg.queries);

  DecoderProbe probe;
  auto out = dec.forward(lat);
  ASSERT_EQ(out.size(), 2u);
  ASSERT_EQ(out[0].size(), 1u);
  EXPECT_EQ(out[0][0].point_logits.rows(), 2 * cfg.points);
  EXPECT_EQ(out[0][0].point_logits.cols(), cfg.queries);
  EXPECT_EQ(out[0][0].class_logits.rows(), kNumClasses + 1);

  auto loss = [&] { return probe.loss(dec.forward(lat), dec, wp, wc, wa); };
  zero_grads(ps);
  std::vector<std::vector<DecoderLayerGrad<double>>> grads(2, std::vector<DecoderLayerGrad<double>>(1));
  for (auto& s : grads)
    for (auto& g : s) g = {wp, wc, wa};
  dec.forward(lat);
  const Tensor<double> dlat = dec.backward(grads);
  {
    SCOPED_TRACE("latent");
    check_coords(lat.m, dlat.m, loss, rng, 1e-6);
  }
  for (auto* p : ps) {
    SCOPED_TRACE(p->name);
    check_coords(p->value, p->grad, loss, rng, 1e-6);
  }
}

TEST(Decoder, LaterLayersTrainTheQueryEmbedding) {
  std::mt19937_64 rng(15);
  const DecoderConfig cfg = small_decoder();
  DeformableDecoder<double> dec(cfg, rng);
  ParamList<double> ps;
  dec.params(ps);
  zero_grads(ps);
  Tensor<double> lat = random_tensor(cfg.dim, 1, cfg.grid.height, cfg.grid.width, rng);
  dec.forward(lat);
  std::vector<std::vector<DecoderLayerGrad<double>>> grads(1, std::vector<DecoderLayerGrad<double>>(cfg.layers));
  grads[0].back().classes = Mat<double>::Ones(kNumClasses + 1, cfg.queries);
  grads[0].back().classes.row(0).setConstant(-3.0);
  dec.backward(grads);
  EXPECT_GT(dec.query_param().grad.norm(), 0.0);
}

TEST(Decoder, ZeroOffsetsSampleOnlyUnderReferencePoints) {
  std::mt19937_64 rng(12);
  const DecoderConfig cfg = small_decoder();
  DeformableDecoder<double> dec(cfg, rng);
  ParamList<double> ps;
  dec.params(ps);
  for (auto* p : ps)
    if (p->name.find(".offset.") != std::string::npos || p->name.find(".attn.") != std::string::npos)
      p->value.setZero();
  Tensor<double> lat = random_tensor(cfg.dim, 1, cfg.grid.height, cfg.grid.width, rng);
  const auto base = dec.forward(lat);
  const std::vector<char> fp = dec.footprint(0);
  // The footprint must sit within the 2x2 neighbourhoods of reference points.
  std::vector<char> allowed(cfg.grid.cells(), 0);
  auto mark = [&](const Mat<double>& R) {
    for (int i = 0; i < cfg.queries; ++i)
      for (int j = 0; j < cfg.points; ++j) {
        const double r = sigmoid(R(2 * j, i)) * cfg.grid.height - 0.5;
        const double c = sigmoid(R(2 * j + 1, i)) * cfg.grid.width - 0.5;
        for (int dr = 0; dr < 2; ++dr)
          for (int dc = 0; dc < 2; ++dc) {
            const int rr = static_cast<int>(std::floor(r)) + dr, cc = static_cast<int>(std::floor(c)) + dc;
            if (rr >= 0 && rr < cfg.grid.height && cc >= 0 && cc < cfg.grid.width) allowed[rr * cfg.grid.width + cc] = 1;
          }
      }
  };
  mark(dec.reference_param().value);
  mark(base[0][0].point_logits);
  int far = -1;
  for (int i = 0; i < cfg.grid.cells(); ++i) {
    if (fp[i]) EXPECT_TRUE(allowed[i]) << i;
    if (!allowed[i]) far = i;
  }
  ASSERT_GE(far, 0);
  lat.m.col(far).array() += 100.0;
  const auto moved = dec.forward(lat);
  for (int l = 0; l < cfg.layers; ++l) {
    EXPECT_EQ(moved[0][l].point_logits, base[0][l].point_logits);
    EXPECT_EQ(moved[0][l].class_logits, base[0][l].class_logits);
  }
}

TEST(Decoder, LatentGradientConfinedToFootprint) {
  std::mt19937_64 rng(13);
  const DecoderConfig cfg = small_decoder();
  DeformableDecoder<double> dec(cfg, rng);
  Tensor<double> lat = random_tensor(cfg.dim, 1, cfg.grid.height, cfg.grid.width, rng);
  dec.forward(lat);
  const std::vector<char> fp = dec.footprint(0);
  std::vector<std::vector<DecoderLayerGrad<double>>> grads(1, std::vector<DecoderLayerGrad<double>>(cfg.layers));
  for (auto& g : grads[0]) {
    g.points = Mat<double>::Ones(2 * cfg.points, cfg.queries);
    g.classes = Mat<double>::Ones(kNumClasses + 1, cfg.queries);
  }
  const Tensor<double> dlat = dec.backward(grads);
  int covered = 0;
  for (int i = 0; i < cfg.grid.cells(); ++i) {
    if (!fp[i]) EXPECT_EQ(dlat.m.col(i).squaredNorm(), 0.0) << i;
    covered += dlat.m.col(i).norm() > 1e-12;
  }
  EXPECT_GT(covered, 0);
  EXPECT_LT(covered, cfg.grid.cells());
}

TEST(Decoder, RejectsMismatchedLatent) {
  std::mt19937_64 rng(14);
  DeformableDecoder<double> dec(small_decoder(), rng);
  Tensor<double> lat(5, 1, 10, 6);
  EXPECT_THROW(dec.forward(lat), std::invalid_argument);
}
