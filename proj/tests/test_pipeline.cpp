#include <doctest.h>

#include <cstdlib>
#include <stdexcept>

#include "diffano/analytic.hpp"
#include "diffano/data.hpp"
#include "diffano/pipeline.hpp"
#include "diffano/sampler.hpp"
#include "helpers.hpp"

using namespace diffano;

namespace {

// Analytic backend fitted to a toy training split, shared by several cases.
struct Fixture {
  Schedule schedule = linear_beta_schedule(1000);
  Dataset data;
  TwoClassModel model;
  std::unique_ptr<MixtureEpsilonModel> eps;
  std::unique_ptr<AnalyticClassifier> cls;

  Fixture() {
    PhantomConfig pc;
    pc.train_healthy = pc.train_diseased = 300;
    pc.test_healthy = pc.test_diseased = 10;
    data = generate_toy_dataset(pc, 11);
    std::vector<ImageTensor> h, d;
    for (const auto& s : data.train) (s.label ? d : h).push_back(s.image);
    model = {fit_gaussian(h), fit_gaussian(d), 0.5};
    eps = std::make_unique<MixtureEpsilonModel>(model, schedule);
    cls = std::make_unique<AnalyticClassifier>(model, schedule);
  }

  std::vector<ImageTensor> test_images(int label) const {
    std::vector<ImageTensor> out;
    for (const auto& s : data.test) {
      if (s.label == label) out.push_back(s.image);
    }
    return out;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("anomaly_map basics") {
  Rng rng(1);
  const ImageTensor x = testing::uniform_image({3, 4, 4}, rng);
  const ImageTensor zero = anomaly_map(x, x);
  CHECK(zero.shape() == Shape{1, 4, 4});
  for (double v : zero.data()) CHECK(v == 0.0);

  const ImageTensor a(Shape{2, 1, 1}, std::vector<double>{0.5, 0.2});
  const ImageTensor b(Shape{2, 1, 1}, std::vector<double>{0.4, 0.5});
  CHECK(anomaly_map(a, b)[0] == doctest::Approx(0.4).epsilon(1e-15));

  // Channel permutation and channel-marginal sums.
  const ImageTensor y = testing::uniform_image({3, 4, 4}, rng);
  const ImageTensor m = anomaly_map(x, y);
  auto permute = [](const ImageTensor& t) {
    ImageTensor out(t.shape());
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < 16; ++i) out[((c + 1) % 3) * 16 + i] = t[c * 16 + i];
    }
    return out;
  };
  const ImageTensor mp = anomaly_map(permute(x), permute(y));
  ImageTensor sum(1, 4, 4);
  for (std::size_t c = 0; c < 3; ++c) {
    const ImageTensor part = anomaly_map(extract_channel(x, c), extract_channel(y, c));
    for (std::size_t i = 0; i < 16; ++i) sum[i] += part[i];
  }
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(mp[i] == doctest::Approx(m[i]).epsilon(1e-15));
    CHECK(sum[i] == doctest::Approx(m[i]).epsilon(1e-15));
  }
  CHECK_THROWS(anomaly_map(x, ImageTensor(1, 4, 4)));
}

TEST_CASE("detect result invariants and s = 0 reduction") {
  const Fixture& f = fixture();
  const ImageTensor x = f.test_images(1).front();
  const DetectionResult r = detect(x, {0.0, 500, 0}, *f.eps, *f.cls, f.schedule);
  const ImageTensor recon = decode(encode(x, 500, *f.eps, f.schedule), 500, *f.eps,
                                   std::nullopt, f.schedule);
  CHECK(r.synthetic == recon);
  CHECK(r.anomaly_map == anomaly_map(x, recon));
  CHECK(r.input == x);
  CHECK(r.params.levels == 500);

  const DetectionResult g = detect(x, {100.0, 500, 0}, *f.eps, *f.cls, f.schedule);
  CHECK(g.anomaly_map.channels() == 1);
  double sum = 0;
  for (double v : g.anomaly_map.data()) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(std::abs(g.score - sum / g.anomaly_map.size()) < 1e-12);
  CHECK(g.score > r.score);
}

TEST_CASE("clip_denoised runs the pipeline on the clipped predictor") {
  const Fixture& f = fixture();
  const ImageTensor x = f.test_images(1).front();
  const ClippedEpsilonModel clipped(*f.eps, f.schedule);
  const DetectionResult r = detect(x, {50.0, 300, 0, true}, *f.eps, *f.cls, f.schedule);
  const DetectionResult want = detect(x, {50.0, 300, 0}, clipped, *f.cls, f.schedule);
  CHECK(r.synthetic == want.synthetic);
  CHECK(r.params.clip_denoised);

  // s = 0 ends on a clamped prediction, so the output stays in range.
  const DetectionResult z = detect(x, {0.0, 300, 0, true}, *f.eps, *f.cls, f.schedule);
  for (double v : z.synthetic.data()) {
    CHECK(v >= -1e-12);
    CHECK(v <= 1.0 + 1e-12);
  }
  const DetectionResult a = detect_stochastic_ablation(x, {0.0, 300, 0, true}, *f.eps, *f.cls, f.schedule, 3);
  for (double v : a.synthetic.data()) {
    CHECK(v >= -1e-12);
    CHECK(v <= 1.0 + 1e-12);
  }
}

TEST_CASE("detect parameter checks") {
  const Fixture& f = fixture();
  const ImageTensor x = f.test_images(0).front();
  CHECK_THROWS_AS(detect(x, {1.0, 0, 0}, *f.eps, *f.cls, f.schedule), std::out_of_range);
  CHECK_THROWS_AS(detect(x, {1.0, 1001, 0}, *f.eps, *f.cls, f.schedule), std::out_of_range);
  CHECK_THROWS_AS(detect(x, {-1.0, 10, 0}, *f.eps, *f.cls, f.schedule), std::invalid_argument);
  CHECK_THROWS(detect_stochastic_ablation(x, {1.0, 0, 0}, *f.eps, *f.cls, f.schedule, 1));
}

TEST_CASE("batch detection is deterministic and order independent") {
  const Fixture& f = fixture();
  std::vector<ImageTensor> inputs;
  for (const auto& s : f.data.test) inputs.push_back(s.image);
  inputs.resize(6);
  const DetectionParams p{50.0, 300, 0};
  const auto serial = detect_batch(inputs, p, *f.eps, *f.cls, f.schedule, 1);
  const auto threaded = detect_batch(inputs, p, *f.eps, *f.cls, f.schedule, 3);
  std::vector<ImageTensor> reversed(inputs.rbegin(), inputs.rend());
  const auto back = detect_batch(reversed, p, *f.eps, *f.cls, f.schedule, 2);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    CHECK(serial[i].anomaly_map == threaded[i].anomaly_map);
    CHECK(serial[i].synthetic == back[inputs.size() - 1 - i].synthetic);
    CHECK(serial[i].synthetic == detect(inputs[i], p, *f.eps, *f.cls, f.schedule).synthetic);
  }
}

TEST_CASE("healthy inputs give near-zero maps with analytic models") {
  const Fixture& f = fixture();
  double healthy = 0, diseased = 0, ablation = 0;
  const auto h = f.test_images(0);
  const auto d = f.test_images(1);
  for (std::size_t i = 0; i < h.size(); ++i) {
    healthy += detect(h[i], {100.0, 500, 0}, *f.eps, *f.cls, f.schedule).score / h.size();
    ablation += detect_stochastic_ablation(h[i], {100.0, 500, 0}, *f.eps, *f.cls, f.schedule, i)
                    .score / h.size();
  }
  for (const auto& x : d) {
    diseased += detect(x, {100.0, 500, 0}, *f.eps, *f.cls, f.schedule).score / d.size();
  }
  MESSAGE("healthy " << healthy << " diseased " << diseased << " ablation " << ablation);
  // Measured 0.0108 on this fixture.
  CHECK(healthy <= 0.0125);
  CHECK(healthy < diseased);
  // DDPM-style noising and sampling alters healthy anatomy more.
  CHECK(ablation >= healthy);
}

TEST_CASE("stochastic ablation is seeded") {
  const Fixture& f = fixture();
  const ImageTensor x = f.test_images(1).front();
  const DetectionParams p{20.0, 200, 0};
  const auto a = detect_stochastic_ablation(x, p, *f.eps, *f.cls, f.schedule, 5);
  const auto b = detect_stochastic_ablation(x, p, *f.eps, *f.cls, f.schedule, 5);
  const auto c = detect_stochastic_ablation(x, p, *f.eps, *f.cls, f.schedule, 6);
  CHECK(a.anomaly_map == b.anomaly_map);
  CHECK(a.anomaly_map != c.anomaly_map);
  CHECK(detect(x, p, *f.eps, *f.cls, f.schedule).anomaly_map ==
        detect(x, p, *f.eps, *f.cls, f.schedule).anomaly_map);
}

TEST_CASE("guidance moves diseased inputs toward the healthy class") {
  const Fixture& f = fixture();
  const auto d = f.test_images(1);
  double prev = -1;
  for (double s : {0.0, 5.0, 10.0, 20.0, 50.0, 100.0}) {
    double mean = 0;
    for (const auto& x : d) {
      const auto r = detect(x, {s, 500, 0}, *f.eps, *f.cls, f.schedule);
      mean += f.cls->posterior(r.synthetic, 0, kHealthyClass) / d.size();
    }
    MESSAGE("s=" << s << " mean healthy posterior " << mean);
    CHECK(mean >= prev);
    prev = mean;
  }
}

TEST_CASE("evaluate_results pairs results with labels and masks") {
  const Fixture& f = fixture();
  std::vector<ImageTensor> inputs;
  std::vector<int> labels;
  std::vector<std::optional<BinaryMask>> masks;
  for (const auto& s : f.data.test) {
    inputs.push_back(s.image);
    labels.push_back(s.label);
    masks.emplace_back(s.mask);
  }
  const auto results = detect_batch(inputs, {100.0, 500, 0}, *f.eps, *f.cls, f.schedule, 1);
  const EvalSummary s = evaluate_results(results, labels, masks);
  MESSAGE("analytic dice " << s.mean_dice << " pixel auroc " << s.pixel_auroc);
  CHECK(s.n_images == inputs.size());
  CHECK(s.n_diseased == 10);
  CHECK(s.mean_dice > 0.8);
  CHECK(s.image_auroc > 0.9);
  labels.pop_back();
  CHECK_THROWS(evaluate_results(results, labels, masks));
}

TEST_CASE("worker plumbing") {
  setenv("DIFFANO_WORKERS", "3", 1);
  CHECK(worker_count_from_env() == 3);
  setenv("DIFFANO_WORKERS", "zero", 1);
  CHECK(worker_count_from_env() == 1);
  unsetenv("DIFFANO_WORKERS");
  CHECK(worker_count_from_env() == 1);

  std::vector<int> hits(50, 0);
  parallel_for(50, 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}
