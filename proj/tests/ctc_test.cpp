#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "lpr/ctc.hpp"
#include "lpr/gradcheck.hpp"

namespace lpr {
namespace {

Tensor random_log_probs(std::size_t frames, std::size_t classes,
                        std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  Tensor logits({frames, classes});
  for (double& v : logits.data()) v = u(rng);
  return log_softmax_rows(logits);
}

LabelSeq collapse_oracle(const std::vector<int>& path, int blank) {
  LabelSeq out;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (path[t] == blank) continue;
    if (t > 0 && path[t] == path[t - 1]) continue;
    out.push_back(path[t]);
  }
  return out;
}

// Sums the probability of every frame path, grouped by collapsed labeling.
std::map<LabelSeq, double> enumerate_labelings(const Tensor& lp) {
  const std::size_t frames = lp.dim(0), classes = lp.dim(1);
  std::map<LabelSeq, double> mass;
  std::vector<int> path(frames, 0);
  while (true) {
    double p = 1.0;
    for (std::size_t t = 0; t < frames; ++t) p *= std::exp(lp.at({t, std::size_t(path[t])}));
    mass[collapse_oracle(path, int(classes) - 1)] += p;
    std::size_t t = 0;
    while (t < frames && ++path[t] == int(classes)) path[t++] = 0;
    if (t == frames) break;
  }
  return mass;
}

TEST(AlphabetTest, PlateAlphabet) {
  Alphabet a = Alphabet::plates();
  EXPECT_EQ(a.num_classes(), 38);
  EXPECT_EQ(a.blank(), 37);
  EXPECT_EQ(a.decode(a.encode("ABC-1234")), "ABC-1234");
  EXPECT_THROW(a.encode("abc"), std::invalid_argument);
  EXPECT_THROW(Alphabet("AA"), std::invalid_argument);
}

TEST(CtcLossTest, UniformTwoFramesSingleSymbol) {
  // Paths collapsing to "a" over T=2, C=3: aa, a-, -a.
  Tensor lp({2, 3}, std::log(1.0 / 3.0));
  CtcResult r = ctc_loss(lp, LabelSeq{0});
  EXPECT_NEAR(r.loss, std::log(3.0), 1e-12);
  EXPECT_NEAR(-std::log(enumerate_labelings(lp)[LabelSeq{0}]), std::log(3.0), 1e-12);
}

TEST(CtcLossTest, CertainPathHasZeroLoss) {
  Tensor lp({3, 3}, -1e4);
  lp.at({0, 0}) = 0.0;
  lp.at({1, 2}) = 0.0;
  lp.at({2, 1}) = 0.0;
  EXPECT_NEAR(ctc_loss(lp, LabelSeq{0, 1}).loss, 0.0, 1e-12);
}

TEST(CtcLossTest, InfeasibleTargets) {
  Tensor lp({1, 3}, std::log(1.0 / 3.0));
  EXPECT_THROW(ctc_loss(lp, LabelSeq{0, 1}), InfeasibleTargetError);
  Tensor lp2({2, 3}, std::log(1.0 / 3.0));
  EXPECT_THROW(ctc_loss(lp2, LabelSeq{0, 0}), InfeasibleTargetError);
  EXPECT_NO_THROW(ctc_loss(Tensor({3, 3}, std::log(1.0 / 3.0)), LabelSeq{0, 0}));
  EXPECT_THROW(ctc_loss(lp, LabelSeq{2}), std::invalid_argument);
}

TEST(CtcLossTest, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t frames = 1 + rng() % 6;
    const std::size_t classes = 2 + rng() % 2;
    LabelSeq target(rng() % 4);
    for (int& l : target) l = int(rng() % (classes - 1));
    if (ctc_min_frames(target) > frames) continue;
    Tensor lp = random_log_probs(frames, classes, rng);
    const double oracle = -std::log(enumerate_labelings(lp)[target]);
    EXPECT_NEAR(ctc_loss(lp, target).loss, oracle, 1e-9) << "trial " << trial;
  }
}

TEST(CtcLossTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor lp = random_log_probs(5, 4, rng);
    const LabelSeq target{int(rng() % 3), int(rng() % 3)};
    CtcResult r = ctc_loss(lp, target);
    for (std::size_t i = 0; i < lp.size(); ++i) {
      Tensor up = lp, down = lp;
      up[i] += 1e-5;
      down[i] -= 1e-5;
      const double numeric =
          (ctc_loss(up, target).loss - ctc_loss(down, target).loss) / 2e-5;
      const double denom = std::max({std::abs(numeric), std::abs(r.grad[i]), 1e-8});
      EXPECT_LE(std::abs(numeric - r.grad[i]) / denom, 1e-5);
    }
  }
}

TEST(CtcLossTest, ComposedWithLogSoftmaxGradcheck) {
  std::mt19937_64 rng(8);
  Tensor logits({2, 6, 4});
  std::uniform_real_distribution<double> u(-2, 2);
  for (double& v : logits.data()) v = u(rng);
  const std::vector<LabelSeq> targets{{0, 1}, {2, 2, 1}};
  auto r = gradcheck(
      [&](Tape& t, std::span<const Var> in) {
        return ag::ctc_loss(t, ag::log_softmax_rows(t, in[0]), targets);
      },
      {&logits}, {});
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(CtcLossTest, InvariantUnderPermutingOtherClasses) {
  std::mt19937_64 rng(9);
  // Classes 0..3 symbols, 4 blank; target uses 0 and 1 only.
  Tensor lp = random_log_probs(6, 5, rng);
  Tensor swapped = lp;
  for (std::size_t t = 0; t < 6; ++t) std::swap(swapped.at({t, 2}), swapped.at({t, 3}));
  EXPECT_NEAR(ctc_loss(lp, LabelSeq{0, 1}).loss, ctc_loss(swapped, LabelSeq{0, 1}).loss,
              1e-12);
}

TEST(CollapseTest, Rules) {
  const int blank = 2;
  EXPECT_EQ(collapse(std::vector<int>{0, 0, 2, 1}, blank), (LabelSeq{0, 1}));
  EXPECT_EQ(collapse(std::vector<int>{0, 2, 0}, blank), (LabelSeq{0, 0}));
  EXPECT_TRUE(collapse(std::vector<int>{2, 2, 2}, blank).empty());
}

TEST(CollapseTest, Idempotent) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> frames(1 + rng() % 12);
    for (int& f : frames) f = int(rng() % 4);
    LabelSeq once = collapse(frames, 3);
    EXPECT_EQ(once, collapse_oracle(frames, 3));
    // Read back as frames, a labeling needs a blank between repeated symbols.
    std::vector<int> as_frames;
    for (std::size_t i = 0; i < once.size(); ++i) {
      if (i > 0 && once[i] == once[i - 1]) as_frames.push_back(3);
      as_frames.push_back(once[i]);
    }
    EXPECT_EQ(collapse(as_frames, 3), once);
  }
}

Tensor peaked(const std::vector<int>& frames, std::size_t classes) {
  Tensor lp({frames.size(), classes}, std::log(0.01 / double(classes - 1)));
  for (std::size_t t = 0; t < frames.size(); ++t) lp.at({t, std::size_t(frames[t])}) = std::log(0.99);
  return lp;
}

TEST(GreedyDecodeTest, Examples) {
  EXPECT_EQ(ctc_greedy_decode(peaked({0, 0, 2, 1}, 3)), (LabelSeq{0, 1}));
  EXPECT_EQ(ctc_greedy_decode(peaked({0, 2, 0}, 3)), (LabelSeq{0, 0}));
  EXPECT_TRUE(ctc_greedy_decode(peaked({2, 2}, 3)).empty());
}

TEST(BeamDecodeTest, DominantPathMatchesGreedy) {
  const Tensor lp = peaked({0, 0, 3, 1, 1, 3, 2}, 4);
  for (std::size_t w : {1u, 3u, 10u}) EXPECT_EQ(ctc_beam_decode(lp, w).labels, ctc_greedy_decode(lp));
  EXPECT_THROW(ctc_beam_decode(lp, 0), std::invalid_argument);
}

TEST(BeamDecodeTest, WideBeamFindsMostProbableLabeling) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor lp = random_log_probs(3, 3, rng);
    auto mass = enumerate_labelings(lp);
    auto best = std::max_element(mass.begin(), mass.end(), [](auto& a, auto& b) {
      return a.second < b.second;
    });
    BeamHypothesis h = ctc_beam_decode(lp, 16);
    EXPECT_EQ(h.labels, best->first);
    EXPECT_NEAR(std::exp(h.log_prob), best->second, 1e-12);
  }
}

TEST(BeamDecodeTest, WideBeamNeverWorseThanGreedyLabeling) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor lp = random_log_probs(5, 4, rng);
    auto mass = enumerate_labelings(lp);
    const double greedy = mass[ctc_greedy_decode(lp)];
    const double beam = mass[ctc_beam_decode(lp, 64).labels];
    EXPECT_GE(beam, greedy - 1e-15) << "trial " << trial;
  }
}

}  // namespace
}  // namespace lpr
