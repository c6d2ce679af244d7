#include <doctest.h>

#include <cmath>

#include "bnnfi/error.hpp"
#include "bnnfi/model_io.hpp"
#include "bnnfi/synth.hpp"
#include "bnnfi/trainer.hpp"
#include "support/test_util.hpp"

using namespace bnnfi;

namespace {

ShadowLayer bn_only_layer(float gamma, float beta, float mean, float var) {
  ShadowLayer l;
  l.kind = LayerKind::BinDense;
  l.gamma = {gamma};
  l.beta = {beta};
  l.run_mean = {mean};
  l.run_var = {var};
  return l;
}

// The real-valued rule the fold must reproduce exactly on integers.
bool bn_sign_rule(const ShadowLayer& l, size_t c, int32_t acc, double boundary) {
  const double sigma = std::sqrt(double(l.run_var[c]) + 1e-5);
  return double(l.gamma[c]) * (double(acc) - l.run_mean[c]) / sigma + l.beta[c] >= boundary;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("fold_batchnorm worked examples") {
  {
    const ShadowLayer l = bn_only_layer(1.0f, 0.0f, 5.0f, 1.0f);
    const FoldedThresholds f = fold_batchnorm(l, Precision::W1A1);
    CHECK(f.signs[0] == 1);
    CHECK(f.thresholds[0] == 5);
    CHECK((f.signs[0] * 5 >= f.signs[0] * f.thresholds[0]));       // acc=5 activates
    CHECK_FALSE((f.signs[0] * 4 >= f.signs[0] * f.thresholds[0]));  // acc=4 does not
  }
  {
    const ShadowLayer l = bn_only_layer(-1.0f, 0.0f, 0.0f, 1.0f);
    const FoldedThresholds f = fold_batchnorm(l, Precision::W1A1);
    CHECK(f.signs[0] == -1);
    CHECK(f.thresholds[0] == 0);
    CHECK((f.signs[0] * -1 >= f.signs[0] * f.thresholds[0]));      // acc=-1 activates
    CHECK_FALSE((f.signs[0] * 1 >= f.signs[0] * f.thresholds[0]));  // acc=+1 does not
  }
  CHECK_THROWS_AS(fold_batchnorm(bn_only_layer(0.0f, 0.0f, 0.0f, 1.0f), Precision::W1A1), Error);
}

TEST_CASE("fold equivalence over the full integer sweep") {
  SplitMix64 rng(61);
  for (int round = 0; round < 24; ++round) {
    ShadowLayer l = bn_only_layer(float(rng.uniform(-2.0, 2.0)), float(rng.uniform(-3.0, 3.0)),
                                  float(rng.uniform(-50.0, 50.0)), float(rng.uniform(0.01, 40.0)));
    if (l.gamma[0] == 0.0f) l.gamma[0] = 0.5f;

    const FoldedThresholds bin = fold_batchnorm(l, Precision::W1A1);
    for (int32_t acc = -1000; acc <= 1000; ++acc) {
      const bool real = bn_sign_rule(l, 0, acc, 0.0);
      const bool folded = bin.signs[0] * acc >= bin.signs[0] * bin.thresholds[0];
      REQUIRE(real == folded);
    }

    const FoldedThresholds q2 = fold_batchnorm(l, Precision::W1A2);
    const double boundaries[3] = {-2.0, 0.0, 2.0};
    for (int32_t acc = -1000; acc <= 1000; ++acc) {
      unsigned real_code = 0, folded_code = 0;
      for (int t = 0; t < 3; ++t) {
        real_code += unsigned(bn_sign_rule(l, 0, acc, boundaries[t]));
        folded_code += unsigned(q2.signs[0] * acc >= q2.signs[0] * q2.thresholds[t]);
      }
      REQUIRE(real_code == folded_code);
    }
  }
}

TEST_CASE("batch-norm backward matches finite differences") {
  using namespace train_detail;
  SplitMix64 rng(63);
  constexpr size_t count = 4, channels = 3, spatial = 2;
  constexpr size_t n = count * channels * spatial;
  std::vector<float> x(n), dy(n), gamma(channels), beta(channels);
  for (float& v : x) v = float(rng.uniform(-2.0, 2.0));
  for (float& v : dy) v = float(rng.uniform(-1.0, 1.0));
  for (float& v : gamma) v = float(rng.uniform(0.5, 1.5));
  for (float& v : beta) v = float(rng.uniform(-0.5, 0.5));

  // Scalar loss L = sum(dy * y) so dL/dy = dy.
  auto loss = [&](const std::vector<float>& xs) {
    const BnStats st = bn_stats(xs.data(), count, channels, spatial);
    std::vector<float> y(n);
    bn_forward(xs.data(), y.data(), count, channels, spatial, st, gamma.data(), beta.data());
    double sum = 0;
    for (size_t i = 0; i < n; ++i) sum += double(dy[i]) * y[i];
    return sum;
  };

  const BnStats st = bn_stats(x.data(), count, channels, spatial);
  std::vector<float> dx(n), dgamma(channels, 0.0f), dbeta(channels, 0.0f);
  bn_backward(x.data(), dy.data(), dx.data(), count, channels, spatial, st, gamma.data(),
              dgamma.data(), dbeta.data());

  const double eps = 1e-3;
  for (size_t i = 0; i < n; i += 5) {
    std::vector<float> xp = x, xm = x;
    xp[i] += float(eps);
    xm[i] -= float(eps);
    const double fd = (loss(xp) - loss(xm)) / (2 * eps);
    CHECK(dx[i] == doctest::Approx(fd).epsilon(0.05));
  }
}

TEST_CASE("conv3x3 backward matches finite differences") {
  using namespace train_detail;
  SplitMix64 rng(65);
  constexpr size_t ic = 2, ih = 5, iw = 5, oc = 2;
  constexpr size_t in_n = ic * ih * iw, w_n = oc * ic * 9, out_n = oc * 3 * 3;
  std::vector<float> in(in_n), w(w_n), dout(out_n);
  for (float& v : in) v = float(rng.uniform(-1.0, 1.0));
  for (float& v : w) v = float(rng.uniform(-1.0, 1.0));
  for (float& v : dout) v = float(rng.uniform(-1.0, 1.0));

  auto loss = [&](const std::vector<float>& ins, const std::vector<float>& ws) {
    std::vector<float> out(out_n);
    conv3x3_forward(ins.data(), ws.data(), out.data(), ic, ih, iw, oc);
    double sum = 0;
    for (size_t i = 0; i < out_n; ++i) sum += double(dout[i]) * out[i];
    return sum;
  };

  std::vector<float> din(in_n), dw(w_n, 0.0f);
  conv3x3_backward_input(dout.data(), w.data(), din.data(), ic, ih, iw, oc);
  conv3x3_backward_weights(in.data(), dout.data(), dw.data(), ic, ih, iw, oc);

  const double eps = 1e-3;
  for (size_t i = 0; i < in_n; i += 7) {
    std::vector<float> p = in, m = in;
    p[i] += float(eps);
    m[i] -= float(eps);
    CHECK(din[i] == doctest::Approx((loss(p, w) - loss(m, w)) / (2 * eps)).epsilon(0.02));
  }
  for (size_t i = 0; i < w_n; i += 5) {
    std::vector<float> p = w, m = w;
    p[i] += float(eps);
    m[i] -= float(eps);
    CHECK(dw[i] == doctest::Approx((loss(in, p) - loss(in, m)) / (2 * eps)).epsilon(0.02));
  }
}

TEST_CASE("zero learning rate leaves shadow weights at their init") {
  const NetworkTopology skeleton = build_lfc(8, Precision::W1A1);
  const DatasetSource data = make_synth_digits(DatasetKind::MNIST_IDX, 40, 3);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 20;
  cfg.lr = 0.0;
  cfg.seed = 9;
  const ShadowModel trained = train_ste(skeleton, data, cfg);
  const ShadowModel init = init_shadow(skeleton, cfg.seed);
  for (size_t k = 0; k < trained.layers.size(); ++k)
    CHECK(trained.layers[k].weights == init.layers[k].weights);
}

TEST_CASE("loss decreases on a small training run") {
  const NetworkTopology skeleton = build_lfc(24, Precision::W1A1);
  const DatasetSource data = make_synth_digits(DatasetKind::MNIST_IDX, 200, 4);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 50;
  cfg.lr = 0.02;
  cfg.seed = 10;
  std::vector<EpochLog> log;
  train_ste(skeleton, data, cfg, nullptr, &log);
  REQUIRE(log.size() == 4);
  CHECK(log.back().train_loss < log.front().train_loss);
}

TEST_CASE("training is deterministic given the seed") {
  const NetworkTopology skeleton = build_lfc(12, Precision::W1A1);
  const DatasetSource data = make_synth_digits(DatasetKind::MNIST_IDX, 80, 5);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 40;
  cfg.seed = 11;
  const ShadowModel a = train_ste(skeleton, data, cfg);
  const ShadowModel b = train_ste(skeleton, data, cfg);
  CHECK(save_model(export_topology(a)) == save_model(export_topology(b)));
}

TEST_CASE("export matches the training-graph quantized forward exactly") {
  const DatasetSource train = make_synth_digits(DatasetKind::MNIST_IDX, 300, 6);
  const DatasetSource eval = make_synth_digits(DatasetKind::MNIST_IDX, 200, 7);
  for (Precision p : {Precision::W1A1, Precision::W1A2}) {
    const NetworkTopology skeleton = build_lfc(16, p);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 50;
    cfg.seed = 12;
    const ShadowModel shadow = train_ste(skeleton, train, cfg);
    const NetworkTopology exported = export_topology(shadow);
    ActivationBuffer buffers = ActivationBuffer::for_network(exported);
    for (size_t i = 0; i < eval.count(); ++i) {
      const IntTensor image = eval.image(i, false);
      REQUIRE(forward(exported, image, nullptr, buffers).predicted_class ==
              quantized_predict(shadow, image));
    }
  }
}

TEST_CASE("conv export matches the training-graph forward exactly") {
  const DatasetSource train = make_synth_digits(DatasetKind::CIFAR10_BIN, 120, 8);
  const DatasetSource eval = make_synth_digits(DatasetKind::CIFAR10_BIN, 60, 9);
  for (Precision p : {Precision::W1A1, Precision::W2A2}) {
    const NetworkTopology skeleton = build_cnv_plan(p, 2, 16);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 30;
    cfg.seed = 13;
    const ShadowModel shadow = train_ste(skeleton, train, cfg);
    const NetworkTopology exported = export_topology(shadow);
    ActivationBuffer buffers = ActivationBuffer::for_network(exported);
    for (size_t i = 0; i < eval.count(); ++i) {
      const IntTensor image = eval.image(i, true);
      REQUIRE(forward(exported, image, nullptr, buffers).predicted_class ==
              quantized_predict(shadow, image));
    }
  }
}

TEST_CASE("W1A2 export routes precisions correctly") {
  const NetworkTopology skeleton = build_lfc(8, Precision::W1A2);
  const DatasetSource data = make_synth_digits(DatasetKind::MNIST_IDX, 40, 14);
  TrainConfig cfg;
  cfg.epochs = 0;  // deterministic export straight from init
  cfg.batch_size = 20;
  cfg.seed = 15;
  const ShadowModel shadow = train_ste(skeleton, data, cfg);
  const NetworkTopology exported = export_topology(shadow);
  CHECK(std::holds_alternative<BitTensor>(*exported.layers[0].weights));  // weights stay 1-bit
  CHECK((exported.layers[0].thresholds->shape() == Shape{8, 3}));           // activations are 2-bit
  const NetworkTopology again = export_topology(train_ste(skeleton, data, cfg));
  CHECK(save_model(exported) == save_model(again));  // 0-epoch export is deterministic
}

TEST_CASE("train_ste validates inputs") {
  const NetworkTopology skeleton = build_lfc(8, Precision::W1A1);
  const DatasetSource wrong = make_synth_digits(DatasetKind::CIFAR10_BIN, 40, 16);
  TrainConfig cfg;
  CHECK_THROWS_AS(train_ste(skeleton, wrong, cfg), Error);
  TrainConfig bad;
  bad.batch_size = 0;
  const DatasetSource data = make_synth_digits(DatasetKind::MNIST_IDX, 40, 17);
  CHECK_THROWS_AS(train_ste(skeleton, data, bad), Error);
}

}  // TEST_SUITE
