#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <tuple>

#include "lpr/pipeline.hpp"
#include "lpr/platelang.hpp"

namespace lpr {
namespace {

// (T, C) log-probabilities with probability `p` on `frames[t]` and the rest
// spread evenly.
Tensor peaked(const std::vector<int>& frames, std::size_t classes, double p) {
  Tensor lp({frames.size(), classes});
  const double rest = (1.0 - p) / double(classes - 1);
  for (std::size_t t = 0; t < frames.size(); ++t)
    for (std::size_t c = 0; c < classes; ++c)
      lp[t * classes + c] = std::log(int(c) == frames[t] ? p : rest);
  return lp;
}

// Spells `text` over 32 frames: each symbol held for two frames, then a blank.
std::vector<int> spell(const Alphabet& a, const std::string& text) {
  std::vector<int> frames;
  for (char ch : text) {
    frames.push_back(a.index_of(ch));
    frames.push_back(a.index_of(ch));
    frames.push_back(a.blank());
  }
  while (frames.size() < 32) frames.push_back(a.blank());
  return frames;
}

TEST(Decode, PeakedLogitsSpellPlate) {
  const Alphabet a = Alphabet::plates();
  const Tensor lp = peaked(spell(a, "AB-12"), std::size_t(a.num_classes()), 0.9);
  for (std::size_t beam : {1u, 8u}) {
    const Recognition r = decode_log_probs(lp, a, beam);
    EXPECT_EQ(r.text, "AB-12");
    EXPECT_TRUE(r.grammar_ok);
    EXPECT_NEAR(r.confidence, 0.9, 1e-12);
  }
}

TEST(Decode, NonGrammaticalStringStillReturned) {
  const Alphabet a = Alphabet::plates();
  const Recognition r = decode_log_probs(peaked(spell(a, "0750JC"), 38, 0.8), a);
  EXPECT_EQ(r.text, "0750JC");
  EXPECT_FALSE(validate("0750JC"));
  EXPECT_FALSE(r.grammar_ok);
}

TEST(Decode, RejectsWrongShape) {
  const Alphabet a("AB");
  EXPECT_THROW(decode_log_probs(Tensor({4, 5}), a), ShapeError);
  EXPECT_THROW(decode_log_probs(peaked({0, 1, 2}, 3, 0.5), a, 0), std::invalid_argument);
}

// Brute force over all C^T paths.
std::vector<int> brute_alignment(const Tensor& lp, const LabelSeq& labels) {
  const std::size_t T = lp.dim(0), C = lp.dim(1);
  const int blank = int(C) - 1;
  std::vector<int> path(T, 0), best;
  double best_score = -INFINITY;
  std::function<void(std::size_t, double)> rec = [&](std::size_t t, double s) {
    if (t == T) {
      if (collapse(path, blank) == labels && s > best_score) {
        best_score = s;
        best = path;
      }
      return;
    }
    for (std::size_t c = 0; c < C; ++c) {
      path[t] = int(c);
      rec(t + 1, s + lp[t * C + c]);
    }
  };
  rec(0, 0.0);
  return best;
}

TEST(Decode, BestAlignmentMatchesBruteForce) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::uniform_int_distribution<int> len(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 6, C = 3;
    Tensor lp({T, C});
    for (std::size_t t = 0; t < T; ++t) {
      double z = 0;
      for (std::size_t c = 0; c < C; ++c) z += (lp[t * C + c] = u(rng));
      for (std::size_t c = 0; c < C; ++c) lp[t * C + c] = std::log(lp[t * C + c] / z);
    }
    LabelSeq labels(std::size_t(len(rng)));
    for (int& l : labels) l = int(rng() % (C - 1));
    if (ctc_min_frames(labels) > T) continue;
    const std::vector<int> got = best_alignment(lp, labels);
    const std::vector<int> want = brute_alignment(lp, labels);
    double gs = 0, ws = 0;
    for (std::size_t t = 0; t < T; ++t) {
      gs += lp[t * C + std::size_t(got[t])];
      ws += lp[t * C + std::size_t(want[t])];
    }
    EXPECT_EQ(collapse(got, int(C) - 1), labels);
    EXPECT_NEAR(gs, ws, 1e-12) << "trial " << trial;
  }
  EXPECT_THROW(best_alignment(peaked({0, 0}, 3, 0.5), LabelSeq{0, 0}), InfeasibleTargetError);
}

Recognition rec(const std::string& text, double confidence) {
  Recognition r;
  r.text = text;
  r.confidence = confidence;
  return r;
}

TEST(MajorityVote, Plurality) {
  EXPECT_EQ(majority_vote({rec("ABC-123", 0.5), rec("ABC-123", 0.5), rec("ABD-123", 0.99)}),
            "ABC-123");
  EXPECT_EQ(majority_vote({rec("ZZ-99", 0.1)}), "ZZ-99");
  EXPECT_THROW(majority_vote({}), std::invalid_argument);
}

TEST(MajorityVote, TieBreaks) {
  // 2-2 tie, mean confidence decides.
  EXPECT_EQ(majority_vote({rec("B", 0.9), rec("A", 0.6), rec("B", 0.7), rec("A", 0.6)}), "B");
  // Equal counts and equal mean confidence: lexicographically smallest.
  EXPECT_EQ(majority_vote({rec("B", 0.5), rec("A", 0.5), rec("B", 0.5), rec("A", 0.5)}), "A");
}

TEST(MajorityVote, AgreesWithRuleOnRandomTies) {
  // Rule-application oracle: order candidates by (-votes, -mean confidence,
  // text) and take the first.
  std::mt19937_64 rng(5);
  const std::string pool[] = {"AA-11", "AA-12", "AB-11", "BB-22"};
  const double confs[] = {0.25, 0.5, 0.75};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Recognition> preds;
    const std::size_t n = 1 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) preds.push_back(rec(pool[rng() % 4], confs[rng() % 3]));
    std::vector<std::tuple<long, double, std::string>> keys;
    for (const std::string& s : pool) {
      long votes = 0;
      double sum = 0;
      for (const auto& p : preds)
        if (p.text == s) {
          ++votes;
          sum += p.confidence;
        }
      if (votes) keys.emplace_back(-votes, -sum / double(votes), s);
    }
    std::sort(keys.begin(), keys.end());
    EXPECT_EQ(majority_vote(preds), std::get<2>(keys.front())) << "trial " << trial;
  }
}

TEST(Metrics, EditDistance) {
  EXPECT_EQ(edit_distance("", ""), 0u);
  EXPECT_EQ(edit_distance("ABC", ""), 3u);
  EXPECT_EQ(edit_distance("0750J0", "0750JC"), 1u);
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3u);
  EXPECT_EQ(edit_distance("AB-12", "AB12"), 1u);
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

TEST(Metrics, PlateAccuracyArithmetic) {
  EXPECT_EQ(percent(plate_accuracy(1479, 1500)), "98.60");
  EXPECT_EQ(percent(plate_accuracy(47, 50)), "94.00");
  EXPECT_EQ(plate_accuracy(7, 7), 1.0);
  EXPECT_THROW(plate_accuracy(0, 0), std::invalid_argument);
  EXPECT_THROW(plate_accuracy(3, 2), std::invalid_argument);
}

EvalItem item(const std::string& truth, const std::string& group = "") {
  EvalItem e;
  e.name = truth + ".ppm";
  e.truth = truth;
  if (!group.empty()) e.group = group;
  return e;
}

TEST(Score, AllCorrect) {
  const std::vector<EvalItem> items = {item("AB-12"), item("CD-34")};
  const EvalReport r = score(items, {rec("AB-12", 1), rec("CD-34", 1)});
  EXPECT_EQ(r.plate_accuracy, 1.0);
  EXPECT_EQ(r.char_accuracy, 1.0);
  EXPECT_TRUE(r.failures.empty());
  EXPECT_TRUE(std::isnan(r.group_accuracy));
}

TEST(Score, CharacterAccuracyAndFailures) {
  const std::vector<EvalItem> items = {item("0750J0"), item("AB-12"), item("XY")};
  const EvalReport r = score(items, {rec("0750JC", 1), rec("AB-12", 1), rec("QQQQQ", 1)});
  EXPECT_EQ(r.correct, 1u);
  EXPECT_DOUBLE_EQ(r.plate_accuracy, 1.0 / 3.0);
  // 5 of 6, 5 of 5, and 0 of 2 (distance 5 floors at zero).
  EXPECT_DOUBLE_EQ(r.char_accuracy, 10.0 / 13.0);
  ASSERT_EQ(r.failures.size(), 2u);
  EXPECT_EQ(r.failures[0].truth, "0750J0");
  EXPECT_EQ(r.failures[0].prediction, "0750JC");
  EXPECT_EQ(r.failures[0].name, "0750J0.ppm");
  EXPECT_THROW(score(items, {}), std::invalid_argument);
}

TEST(Score, GroupsUseMajorityVote) {
  std::vector<EvalItem> items;
  std::vector<Recognition> preds;
  for (int i = 0; i < 3; ++i) items.push_back(item("AB-12", "g1"));
  preds = {rec("AB-12", 1), rec("AB-17", 1), rec("AB-12", 1)};
  for (int i = 0; i < 3; ++i) items.push_back(item("CD-34", "g2"));
  preds.push_back(rec("CD-84", 1));
  preds.push_back(rec("CD-84", 1));
  preds.push_back(rec("CD-34", 1));
  const EvalReport r = score(items, preds);
  EXPECT_EQ(r.groups, 2u);
  EXPECT_EQ(r.groups_correct, 1u);
  EXPECT_DOUBLE_EQ(r.group_accuracy, 0.5);
  EXPECT_DOUBLE_EQ(r.plate_accuracy, 3.0 / 6.0);
}

TEST(Score, MajorityVoteBeatsSingleFramesUnderIndependentNoise) {
  // Groups of 30 with 20% independent corruption.
  std::mt19937_64 rng(99);
  std::bernoulli_distribution corrupt(0.2);
  std::vector<EvalItem> items;
  std::vector<Recognition> preds;
  for (int g = 0; g < 50; ++g) {
    const std::string truth = "AB-" + std::to_string(10 + g);
    for (int k = 0; k < 30; ++k) {
      items.push_back(item(truth, "g" + std::to_string(g)));
      std::string p = truth;
      if (corrupt(rng)) p[rng() % p.size()] = char('A' + rng() % 26);
      preds.push_back(rec(p, 0.5));
    }
  }
  const EvalReport r = score(items, preds);
  EXPECT_GT(r.group_accuracy, r.plate_accuracy);
  EXPECT_EQ(r.group_accuracy, 1.0);
}

RecognizerModel tiny_recognizer() {
  RecognizerConfig c;
  c.width = 0.25;
  c.num_classes = 13;
  return RecognizerModel(c);
}

std::vector<EvalItem> rendered_items(std::size_t n) {
  std::mt19937_64 rng(3);
  SynthOptions opts;
  opts.fabricate.templates = templates_with_length(5);
  opts.fabricate.letters = "ABCDEF";
  opts.fabricate.digits = "01234";
  const GlyphSet g = GlyphSet::builtin();
  std::vector<EvalItem> out;
  for (std::size_t i = 0; i < n; ++i) {
    SynthPlate p = synthesize_plate(rng, g, opts);
    EvalItem e = item(p.label.text);
    e.image = p.image;
    out.push_back(e);
  }
  return out;
}

TEST(Evaluate, RepeatedRunsIdentical) {
  RecognizerModel m = tiny_recognizer();
  const Alphabet a("ABCDEF01234-");
  const auto items = rendered_items(4);
  const EvalReport r1 = evaluate(m, a, items);
  const EvalReport r2 = evaluate(m, a, items);
  EXPECT_EQ(r1.plate_accuracy, r2.plate_accuracy);
  EXPECT_EQ(r1.char_accuracy, r2.char_accuracy);
  ASSERT_EQ(r1.predictions.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r1.predictions[i].text, r2.predictions[i].text);
    EXPECT_EQ(r1.predictions[i].confidence, r2.predictions[i].confidence);
  }
  EXPECT_GT(r1.images_per_second, 0.0);
}

TEST(Recognize, RectifyNeedsCornerModel) {
  RecognizerModel m = tiny_recognizer();
  RecognizeOptions o;
  o.rectify = true;
  EXPECT_THROW(recognize(m, Alphabet("ABCDEF01234-"), rendered_items(1)[0].image, o),
               std::invalid_argument);
}

TEST(Recognize, RectifyReportsCorners) {
  RecognizerModel m = tiny_recognizer();
  CornerModel cm(5);
  RecognizeOptions o;
  o.rectify = true;
  o.corner_model = &cm;
  const Recognition r = recognize(m, Alphabet("ABCDEF01234-"), rendered_items(1)[0].image, o);
  if (r.corners) {
    for (const Point& p : *r.corners) {
      EXPECT_GE(p.x, 0.0);
      EXPECT_LE(p.x, 127.0);
    }
  }
  EXPECT_GE(r.confidence, 0.0);
  EXPECT_LE(r.confidence, 1.0);
}

TEST(Bench, PositiveFiniteThroughput) {
  RecognizerModel m = tiny_recognizer();
  std::vector<Image> images;
  for (const auto& e : rendered_items(2)) images.push_back(e.image);
  const FpsReport f = bench_fps(m, Alphabet("ABCDEF01234-"), images, 3, {}, 3);
  ASSERT_EQ(f.repeats.size(), 3u);
  EXPECT_GT(f.mean, 0.0);
  EXPECT_TRUE(std::isfinite(f.mean));
  EXPECT_GE(f.stdev, 0.0);
  EXPECT_THROW(bench_fps(m, Alphabet("ABCDEF01234-"), images, 0), std::invalid_argument);
}

}  // namespace
}  // namespace lpr
