#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "diffano/analytic.hpp"
#include "diffano/forward_process.hpp"
#include "diffano/sampler.hpp"
#include "diffano/schedule.hpp"
#include "helpers.hpp"

using namespace diffano;

namespace {

const ImageTensor kOne(1, 1, 1, 1.0);
const ImageTensor kZero(1, 1, 1, 0.0);

// Two-pixel affine noise model eps = A_t x + b_t with a full 2x2 A_t.
class AffineModel final : public EpsilonModel {
 public:
  Eigen::Matrix2d A(int t) const {
    const double u = 0.001 * t;
    Eigen::Matrix2d a;
    a << 0.8 + 0.3 * u, -0.2 + u, 0.1 * std::cos(u), 0.6 - 0.2 * u;
    return a;
  }
  Eigen::Vector2d b(int t) const { return {0.05 * std::sin(0.01 * t), -0.03}; }
  ImageTensor predict(const ImageTensor& x, int t) const override {
    const Eigen::Vector2d v = A(t) * Eigen::Vector2d(x[0], x[1]) + b(t);
    return ImageTensor(Shape{1, 1, 2}, std::vector<double>{v[0], v[1]});
  }
};

// Constant gradient field, to make guidance visible.
class ConstGrad final : public ClassGradModel {
 public:
  explicit ConstGrad(double g) : g_(g) {}
  ImageTensor log_prob_grad(const ImageTensor& x, int, int) const override {
    return ImageTensor(x.shape(), g_);
  }

 private:
  double g_;
};

}  // namespace

TEST_CASE("reverse_step hand values") {
  const Schedule s = linear_beta_schedule(2, 0.1, 0.2);
  const ImageTensor xt = q_sample(kOne, 2, kOne, s);
  CHECK(xt[0] == doctest::Approx(1.377679).epsilon(1e-6));
  const ImageTensor out = reverse_step(xt, kOne, 2, 0.0, {}, s);
  CHECK(out[0] == doctest::Approx(1.264911).epsilon(1e-6));
  // Exact noise: lands on the t-1 marginal sample with the same eps.
  const double want = std::sqrt(0.9) + std::sqrt(0.1);
  CHECK(testing::rel_err(out[0], want) < 1e-14);
}

TEST_CASE("reverse_step with exact eps hits the t-1 sample") {
  const Schedule s = linear_beta_schedule(1000);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int t = uniform_int(rng, 1, 1000);
    const ImageTensor x0 = testing::uniform_image({1, 4, 4}, rng);
    const ImageTensor eps = standard_normal(x0.shape(), rng);
    const ImageTensor out = reverse_step(q_sample(x0, t, eps, s), eps, t, 0.0, {}, s);
    const ImageTensor want = linear_combination(std::sqrt(s.alpha_bar(t - 1)), x0,
                                                std::sqrt(1 - s.alpha_bar(t - 1)), eps);
    CHECK(relative_l2_error(out, want) < 1e-9);
  }
}

TEST_CASE("reverse_step noise enters additively") {
  const Schedule s = linear_beta_schedule(1000);
  Rng rng(4);
  const ImageTensor xt = standard_normal({1, 4, 4}, rng);
  const ImageTensor eps = standard_normal(xt.shape(), rng);
  const ImageTensor z = standard_normal(xt.shape(), rng);
  const int t = 400;
  const double sig = s.sigma(t);
  const ImageTensor a = reverse_step(xt, eps, t, sig, ImageTensor(xt.shape()), s);
  const ImageTensor b = reverse_step(xt, eps, t, sig, z, s);
  for (std::size_t i = 0; i < xt.size(); ++i) {
    CHECK(b[i] - a[i] == doctest::Approx(sig * z[i]).epsilon(1e-12));
  }
  // sigma = 0 ignores noise entirely
  CHECK(reverse_step(xt, eps, t, 0.0, z, s) == reverse_step(xt, eps, t, 0.0, {}, s));
}

TEST_CASE("reverse_step rejects invalid sigma") {
  const Schedule s = linear_beta_schedule(1000);
  const ImageTensor x(1, 2, 2);
  CHECK_THROWS(reverse_step(x, x, 10, -0.1, x, s));
  const double too_big = std::sqrt(1 - s.alpha_bar(9)) * 1.01;
  CHECK_THROWS(reverse_step(x, x, 10, too_big, x, s));
  CHECK_THROWS(reverse_step(x, x, 0, 0.0, {}, s));
  CHECK_THROWS(reverse_step(x, x, 10, 0.1, ImageTensor(1, 3, 3), s));
}

TEST_CASE("encode_step hand values") {
  const Schedule s = linear_beta_schedule(2, 0.1, 0.2);
  const ImageTensor out = encode_step(kOne, kZero, 1, s);
  CHECK(out[0] == doctest::Approx(0.894427).epsilon(1e-6));
  CHECK(testing::rel_err(out[0], std::sqrt(0.8)) < 1e-14);
  CHECK_THROWS(encode_step(kOne, kZero, 2, s));
  CHECK_THROWS(encode_step(kOne, kZero, -1, s));
}

TEST_CASE("encode_step is the identity when abar does not change") {
  const Schedule s({0.1, 1e-300});  // alpha_2 rounds to exactly 1
  REQUIRE(s.alpha_bar(2) == s.alpha_bar(1));
  Rng rng(5);
  const ImageTensor x = standard_normal({1, 3, 3}, rng);
  const ImageTensor e = standard_normal(x.shape(), rng);
  CHECK(encode_step(x, e, 1, s) == x);
}

TEST_CASE("encode_step then reverse_step with a frozen eps is an inverse") {
  const Schedule s = linear_beta_schedule(1000);
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const int t = uniform_int(rng, 0, 999);
    const ImageTensor x = standard_normal({1, 4, 4}, rng);
    const ImageTensor e = standard_normal(x.shape(), rng);
    const ImageTensor back = reverse_step(encode_step(x, e, t, s), e, t + 1, 0.0, {}, s);
    CHECK(relative_l2_error(back, x) < 1e-9);
  }
}

TEST_CASE("guided_epsilon") {
  const Schedule s = linear_beta_schedule(2, 0.1, 0.2);
  const ImageTensor eps(1, 1, 1, 0.5), grad(1, 1, 1, 0.2);
  CHECK(guided_epsilon(eps, grad, 100, 2, s)[0] == doctest::Approx(-10.083005).epsilon(1e-7));
  CHECK(guided_epsilon(eps, grad, 0.0, 2, s) == eps);
  CHECK(guided_epsilon(eps, ImageTensor(1, 1, 1), 37.0, 2, s) == eps);
  CHECK_THROWS(guided_epsilon(eps, grad, -1.0, 2, s));
}

TEST_CASE("encode is deterministic and L = 0 is the identity") {
  const Schedule s = linear_beta_schedule(1000);
  GaussianEpsilonModel model({ImageTensor(1, 4, 4, 0.3), ImageTensor(1, 4, 4, 0.05)}, s);
  Rng rng(8);
  const ImageTensor x = testing::uniform_image({1, 4, 4}, rng);
  CHECK(encode(x, 250, model, s) == encode(x, 250, model, s));
  CHECK(encode(x, 0, model, s) == x);
  CHECK_THROWS(encode(x, 1001, model, s));
}

TEST_CASE("standard-normal flow preserves unit variance") {
  const Schedule s = linear_beta_schedule(1000);
  const Shape shape{1, 1, 4};
  GaussianEpsilonModel model({ImageTensor(shape, 0.0), ImageTensor(shape, 1.0)}, s);
  Rng rng(9);
  double sq_enc = 0, sq_round = 0;
  int n = 0;
  for (int i = 0; i < 1000; ++i) {
    const ImageTensor x0 = standard_normal(shape, rng);
    const ImageTensor xl = encode(x0, 500, model, s);
    const ImageTensor back = decode(xl, 500, model, std::nullopt, s);
    for (std::size_t k = 0; k < shape.size(); ++k) {
      sq_enc += xl[k] * xl[k];
      sq_round += back[k] * back[k];
      ++n;
    }
  }
  CHECK(std::abs(sq_enc / n - 1.0) < 0.1);
  CHECK(std::abs(sq_round / n - 1.0) < 0.1);
}

TEST_CASE("decode: absent guide and s = 0 agree bit for bit") {
  const Schedule s = linear_beta_schedule(1000);
  GaussianEpsilonModel model({ImageTensor(1, 4, 4, 0.3), ImageTensor(1, 4, 4, 0.05)}, s);
  ConstGrad grad(0.7);
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const ImageTensor x = standard_normal({1, 4, 4}, rng);
    const ImageTensor plain = decode(x, 300, model, std::nullopt, s);
    const ImageTensor zero = decode(x, 300, model, Guide{grad, {0.0, 0, true}}, s);
    const ImageTensor off = decode(x, 300, model, Guide{grad, {5.0, 0, false}}, s);
    CHECK(plain == zero);
    CHECK(plain == off);
    CHECK(decode(x, 300, model, Guide{grad, {5.0, 0, true}}, s) != plain);
  }
}

TEST_CASE("decode hook sees every step") {
  const Schedule s = linear_beta_schedule(100);
  GaussianEpsilonModel model({ImageTensor(1, 2, 2, 0.3), ImageTensor(1, 2, 2, 0.05)}, s);
  std::vector<int> seen;
  ImageTensor last;
  const ImageTensor out = decode(ImageTensor(1, 2, 2, 0.1), 40, model, std::nullopt, s,
                                 [&](int t, const ImageTensor& x) {
                                   seen.push_back(t);
                                   last = x;
                                 });
  REQUIRE(seen.size() == 40);
  CHECK(seen.front() == 39);
  CHECK(seen.back() == 0);
  CHECK(last == out);
}

TEST_CASE("affine model: loops equal the composed step matrices") {
  const Schedule s = linear_beta_schedule(1000);
  AffineModel model;
  const int L = 500;
  Eigen::Matrix2d M = Eigen::Matrix2d::Identity();
  Eigen::Vector2d m = Eigen::Vector2d::Zero();
  const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
  for (int t = 0; t < L; ++t) {
    const double a = s.alpha_bar(t), an = s.alpha_bar(t + 1);
    const double c1 = std::sqrt(1 / a) - std::sqrt(1 / an);
    const double c2 = std::sqrt(1 / an - 1) - std::sqrt(1 / a - 1);
    const Eigen::Matrix2d step = I + std::sqrt(an) * (c1 * I + c2 * model.A(t));
    const Eigen::Vector2d shift = std::sqrt(an) * c2 * model.b(t);
    M = step * M;
    m = step * m + shift;
  }
  Eigen::Matrix2d D = Eigen::Matrix2d::Identity();
  Eigen::Vector2d d = Eigen::Vector2d::Zero();
  for (int t = L; t >= 1; --t) {
    const double a = s.alpha_bar(t), ap = s.alpha_bar(t - 1);
    const double k = std::sqrt(1 - ap) - std::sqrt(ap) * std::sqrt(1 - a) / std::sqrt(a);
    const Eigen::Matrix2d step = std::sqrt(ap / a) * I + k * model.A(t);
    const Eigen::Vector2d shift = k * model.b(t);
    D = step * D;
    d = step * d + shift;
  }
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageTensor x = standard_normal({1, 1, 2}, rng);
    const Eigen::Vector2d xv(x[0], x[1]);
    const ImageTensor enc = encode(x, L, model, s);
    const Eigen::Vector2d want_enc = M * xv + m;
    CHECK(std::abs(enc[0] - want_enc[0]) < 1e-8 * want_enc.norm());
    CHECK(std::abs(enc[1] - want_enc[1]) < 1e-8 * want_enc.norm());
    const ImageTensor dec = decode(enc, L, model, std::nullopt, s);
    const Eigen::Vector2d want_dec = D * want_enc + d;
    CHECK(std::abs(dec[0] - want_dec[0]) < 1e-8 * want_dec.norm());
    CHECK(std::abs(dec[1] - want_dec[1]) < 1e-8 * want_dec.norm());
  }
}

TEST_CASE("full-length decode stays finite") {
  const Schedule s = linear_beta_schedule(1000);
  GaussianEpsilonModel model({ImageTensor(1, 4, 4, 0.4), ImageTensor(1, 4, 4, 0.02)}, s);
  Rng rng(12);
  const ImageTensor xT = standard_normal({1, 4, 4}, rng);
  CHECK(decode(xT, 1000, model, std::nullopt, s).all_finite());
  CHECK(decode_stochastic(xT, 1000, model, std::nullopt, s, rng).all_finite());
  CHECK(encode(testing::uniform_image({1, 4, 4}, rng), 1000, model, s).all_finite());
}

TEST_CASE("stochastic decode is seeded") {
  const Schedule s = linear_beta_schedule(200);
  GaussianEpsilonModel model({ImageTensor(1, 3, 3, 0.4), ImageTensor(1, 3, 3, 0.02)}, s);
  const ImageTensor x(1, 3, 3, 0.2);
  Rng a(1), b(1), c(2);
  const ImageTensor ra = decode_stochastic(x, 100, model, std::nullopt, s, a);
  CHECK(ra == decode_stochastic(x, 100, model, std::nullopt, s, b));
  CHECK(ra != decode_stochastic(x, 100, model, std::nullopt, s, c));
}

TEST_CASE("reconstruction error shrinks with more steps") {
  // Same abar endpoint: betas scaled by 1000 / T, L = T / 2.
  const GaussianDataModel data{ImageTensor(1, 4, 4, 0.4), ImageTensor(1, 4, 4, 0.01)};
  Rng rng(13);
  std::vector<ImageTensor> inputs;
  for (int i = 0; i < 5; ++i) inputs.push_back(testing::uniform_image({1, 4, 4}, rng, 0.2, 0.6));
  auto error_at = [&](int T) {
    const double k = 1000.0 / T;
    const Schedule s = linear_beta_schedule(T, 1e-4 * k, 0.02 * k);
    GaussianEpsilonModel model(data, s);
    double total = 0;
    for (const auto& x : inputs) {
      total += relative_l2_error(decode(encode(x, T / 2, model, s), T / 2, model, std::nullopt, s), x);
    }
    return total / inputs.size();
  };
  const double e1000 = error_at(1000);
  const double e100 = error_at(100);
  CHECK(e100 > e1000);
  CHECK(e1000 < 1e-2);
}

TEST_CASE("clip_epsilon clamps the implied clean image") {
  const Schedule s = linear_beta_schedule(1000);
  const int t = 300;
  const double a = s.alpha_bar(t);
  // Predictions x0 = -0.5, 0.25 and 1.5 for the three pixels.
  const std::vector<double> x0{-0.5, 0.25, 1.5};
  const std::vector<double> e{0.3, -1.2, 0.7};
  ImageTensor x(Shape{1, 1, 3}), eps(Shape{1, 1, 3});
  for (int i = 0; i < 3; ++i) {
    eps[i] = e[i];
    x[i] = std::sqrt(a) * x0[i] + std::sqrt(1 - a) * e[i];
  }
  const ImageTensor c = clip_epsilon(x, eps, t, 0.0, 1.0, s);
  CHECK(c[1] == eps[1]);
  CHECK(testing::rel_err(c[0], (x[0] - 0.0) / std::sqrt(1 - a)) < 1e-12);
  CHECK(testing::rel_err(c[2], (x[2] - std::sqrt(a)) / std::sqrt(1 - a)) < 1e-12);
  // The clamped prediction is what reverse_step now sees.
  for (int i = 0; i < 3; ++i) {
    const double implied = (x[i] - std::sqrt(1 - a) * c[i]) / std::sqrt(a);
    CHECK(std::abs(implied - std::clamp(x0[i], 0.0, 1.0)) < 1e-12);
  }
  CHECK(clip_epsilon(x, eps, 0, 0.0, 1.0, s) == eps);  // abar_0 = 1
  CHECK(clip_epsilon(x, eps, t, -10.0, 10.0, s) == eps);
  CHECK_THROWS_AS(clip_epsilon(x, eps, t, 1.0, 0.0, s), std::invalid_argument);
}

TEST_CASE("clipped model keeps an unstable predictor bounded") {
  // eps = 10 x makes the plain encoder grow geometrically.
  class Runaway final : public EpsilonModel {
   public:
    ImageTensor predict(const ImageTensor& x, int) const override { return scaled(x, 10.0); }
  };
  const Schedule s = linear_beta_schedule(200);
  const Runaway raw;
  const ClippedEpsilonModel clipped(raw, s);
  const ImageTensor x(Shape{1, 2, 2}, std::vector<double>{0.1, 0.4, 0.7, 0.9});
  const ImageTensor far = encode(x, 100, raw, s);
  CHECK(l2_norm(far) > 1000.0);
  CHECK(l2_norm(encode(x, 100, clipped, s)) < 50.0);
  // A latent far off the data range still decodes into [0, 1].
  const ImageTensor wild(Shape{1, 2, 2}, std::vector<double>{-30.0, 5.0, 40.0, 80.0});
  const ImageTensor back = decode(wild, 100, clipped, std::nullopt, s);
  for (double v : back.data()) {
    CHECK(v >= -1e-12);
    CHECK(v <= 1.0 + 1e-12);
  }
}
