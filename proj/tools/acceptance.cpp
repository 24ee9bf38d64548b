// Acceptance run: one PASS/FAIL line per criterion, followed by key=value
// detail lines. Exit status is the number of failed criteria (capped at 1).
//
//   lpr_acceptance                 all criteria
//   lpr_acceptance --only 1,2,5    a subset (7, 8 and 11 share one training run)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "lpr/checkpoint.hpp"
#include "lpr/ctc.hpp"
#include "lpr/gradcheck.hpp"
#include "lpr/models.hpp"
#include "lpr/pipeline.hpp"
#include "lpr/platelang.hpp"
#include "lpr/rectify.hpp"
#include "lpr/runtime.hpp"
#include "lpr/train.hpp"

namespace {

using namespace lpr;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// --- pinned tolerances and budgets -----------------------------------------

constexpr double kCtcOracleTol = 1e-9;
constexpr double kCtcUniformTol = 1e-12;
constexpr double kCtcRuntimeLimit = 5.0;  // seconds
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr int kGradTrials = 20;
constexpr double kRowSumTol = 1e-12;
constexpr double kAffineTol = 1e-9;
constexpr int kAffineTrials = 1000;
constexpr double kDeskTarget = 0.95;
constexpr double kDeskBudget = 30 * 60.0;  // seconds
constexpr double kFpsVariation = 0.10;

// Desk-scale training recipe. Chosen by timing runs on a single core; see
// the README for the search.
constexpr double kDeskWidth = 0.25;
constexpr std::size_t kDeskEpochs = 40;
constexpr std::size_t kDeskBatch = 32;
constexpr double kDeskLearningRate = 1e-2;
constexpr double kDeskFinalLrFraction = 0.05;
constexpr std::size_t kDeskTrain = 2000;
constexpr std::size_t kDeskTest = 200;
constexpr std::uint64_t kDeskSeed = 7;
const char* const kDeskAlphabet = "ABCDEF01234-";

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;  // key=value lines
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// --- 1. CTC oracle ----------------------------------------------------------

// Sums path probabilities over all C^T frame paths that collapse to the
// target. Collapse is restated here: merge repeats, then drop blanks.
double brute_force_ctc(const Tensor& lp, const LabelSeq& target) {
  const std::size_t T = lp.dim(0), C = lp.dim(1);
  const int blank = int(C) - 1;
  std::vector<int> path(T, 0);
  double total = 0.0;
  std::size_t combos = 1;
  for (std::size_t t = 0; t < T; ++t) combos *= C;
  for (std::size_t code = 0; code < combos; ++code) {
    std::size_t rest = code;
    double logp = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      path[t] = int(rest % C);
      rest /= C;
      logp += lp[t * C + std::size_t(path[t])];
    }
    LabelSeq out;
    for (std::size_t t = 0; t < T; ++t) {
      if (path[t] == blank || (t > 0 && path[t] == path[t - 1])) continue;
      out.push_back(path[t]);
    }
    if (out == target) total += std::exp(logp);
  }
  return -std::log(total);
}

Outcome ctc_oracle() {
  Outcome o;
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  double worst = 0.0;
  int trials = 0;
  while (trials < 100) {
    const std::size_t T = 1 + rng() % 6;
    const std::size_t C = 2 + rng() % 2;
    LabelSeq target(rng() % 4);
    for (int& l : target) l = int(rng() % (C - 1));
    if (ctc_min_frames(target) > T) continue;
    Tensor logits({T, C});
    for (double& v : logits.data()) v = u(rng);
    const Tensor lp = log_softmax_rows(logits);
    worst = std::max(worst, std::abs(ctc_loss(lp, target).loss - brute_force_ctc(lp, target)));
    ++trials;
  }
  const Tensor uniform({2, 3}, std::log(1.0 / 3.0));
  const double uniform_err = std::abs(ctc_loss(uniform, LabelSeq{0}).loss - std::log(3.0));
  const double elapsed = seconds_since(start);
  o.pass = worst <= kCtcOracleTol && uniform_err <= kCtcUniformTol && elapsed < kCtcRuntimeLimit;
  o.summary = "CTC oracle equivalence: max |dp - brute| = " + fmt("%.2e", worst) + " over " +
              std::to_string(trials) + " trials, ln3 case error " + fmt("%.1e", uniform_err) +
              ", " + fmt("%.2f", elapsed) + " s";
  o.details.push_back("max_abs_error=" + fmt("%.3e", worst) + " tolerance=1e-09 trials=100");
  o.details.push_back("uniform_ln3_error=" + fmt("%.3e", uniform_err) + " tolerance=1e-12");
  o.details.push_back("seconds=" + fmt("%.3f", elapsed) + " limit=5");
  return o;
}

// --- 2. gradient integrity --------------------------------------------------

Outcome gradient_integrity() {
  Outcome o;
  std::map<std::string, double> worst;
  auto check = [&](const std::string& layer, const LossBuilder& build, std::vector<Tensor*> in,
                   std::vector<Tensor*> params) {
    const GradcheckResult r = gradcheck(build, std::move(in), std::move(params), kGradStep);
    worst[layer] = std::max(worst[layer], r.max_relative_error);
  };
  for (int trial = 0; trial < kGradTrials; ++trial) {
    std::mt19937_64 rng(5000 + trial);
    const std::size_t s = 1 + trial % 2;
    {
      ConvParams p = ConvParams::zeros(2, 3, 3, 3, Stride{s, s});
      p.weight = random_tensor(p.weight.shape(), rng);
      p.bias = random_tensor(p.bias.shape(), rng);
      Tensor x = random_tensor({2, 5, 4, 2}, rng);
      const Tensor w = random_tensor(conv2d(x, p).shape(), rng);
      check("conv", [&](Tape& t, std::span<const Var> v) {
        return ag::weighted_sum(t, ag::conv2d(t, v[0], p), w);
      }, {&x}, {&p.weight, &p.bias});
    }
    {
      DepthwiseParams p = DepthwiseParams::zeros(3, 3, 3, Stride{s, s});
      p.weight = random_tensor(p.weight.shape(), rng);
      p.bias = random_tensor(p.bias.shape(), rng);
      Tensor x = random_tensor({2, 4, 5, 3}, rng);
      const Tensor w = random_tensor(depthwise_conv2d(x, p).shape(), rng);
      check("depthwise", [&](Tape& t, std::span<const Var> v) {
        return ag::weighted_sum(t, ag::depthwise_conv2d(t, v[0], p), w);
      }, {&x}, {&p.weight, &p.bias});
    }
    {
      SeparableParams p = separable_params(3, 4, 3);
      p.depthwise.weight = random_tensor(p.depthwise.weight.shape(), rng);
      p.pointwise.weight = random_tensor(p.pointwise.weight.shape(), rng);
      p.pointwise.bias = random_tensor(p.pointwise.bias.shape(), rng);
      Tensor x = random_tensor({2, 4, 4, 3}, rng);
      const Tensor w = random_tensor(separable_conv2d(x, p.depthwise, p.pointwise).shape(), rng);
      check("separable", [&](Tape& t, std::span<const Var> v) {
        return ag::weighted_sum(t, ag::separable_conv2d(t, v[0], p.depthwise, p.pointwise), w);
      }, {&x}, {&p.depthwise.weight, &p.pointwise.weight, &p.pointwise.bias});
    }
    for (Mode mode : {Mode::Train, Mode::Infer}) {
      BNParams p = BNParams::identity(3);
      p.gamma = random_tensor({3}, rng, 0.5, 1.5);
      p.beta = random_tensor({3}, rng);
      p.running_mean = random_tensor({3}, rng);
      p.running_var = random_tensor({3}, rng, 0.5, 2.0);
      Tensor x = random_tensor({2, 3, 2, 3}, rng);
      const Tensor w = random_tensor(x.shape(), rng);
      check(mode == Mode::Train ? "batchnorm_train" : "batchnorm_infer",
            [&](Tape& t, std::span<const Var> v) {
              return ag::weighted_sum(t, ag::batchnorm(t, v[0], p, mode), w);
            },
            {&x}, {&p.gamma, &p.beta});
    }
    {
      LstmParams p = LstmParams::zeros(3, 2);
      for (LstmDirection* d : {&p.forward, &p.backward}) {
        d->weight = random_tensor(d->weight.shape(), rng, -0.5, 0.5);
        d->bias = random_tensor(d->bias.shape(), rng, -0.5, 0.5);
      }
      Tensor x = random_tensor({2, 4, 3}, rng);
      const Tensor w = random_tensor({2, 4, 4}, rng);
      check("lstm", [&](Tape& t, std::span<const Var> v) {
        return ag::weighted_sum(t, ag::bilstm(t, v[0], p), w);
      }, {&x}, {&p.forward.weight, &p.forward.bias, &p.backward.weight, &p.backward.bias});
    }
    {
      DenseParams p = DenseParams::zeros(4, 3);
      p.weight = random_tensor(p.weight.shape(), rng);
      p.bias = random_tensor(p.bias.shape(), rng);
      Tensor x = random_tensor({2, 5, 4}, rng);
      const Tensor w = random_tensor({2, 5, 3}, rng);
      check("dense", [&](Tape& t, std::span<const Var> v) {
        return ag::weighted_sum(t, ag::dense(t, v[0], p), w);
      }, {&x}, {&p.weight, &p.bias});
    }
    {
      Tensor logits = random_tensor({2, 5, 4}, rng, -2.0, 2.0);
      std::vector<LabelSeq> targets = {{int(rng() % 3), int(rng() % 3)}, {int(rng() % 3)}};
      check("ctc", [&](Tape& t, std::span<const Var> v) {
        return ag::ctc_loss(t, ag::log_softmax_rows(t, v[0]), targets);
      }, {&logits}, {});
    }
  }
  double overall = 0.0;
  std::ostringstream per_layer;
  for (const auto& [layer, err] : worst) {
    overall = std::max(overall, err);
    o.details.push_back("layer=" + layer + " max_relative_error=" + fmt("%.3e", err) +
                        " trials=20 tolerance=1e-04");
    per_layer << (per_layer.tellp() ? ", " : "") << layer;
  }
  o.pass = overall <= kGradTol && worst.size() == 8;
  o.summary = "Gradient integrity: worst relative error " + fmt("%.2e", overall) + " across " +
              per_layer.str();
  return o;
}

// --- 3. architecture shapes -------------------------------------------------

Outcome architecture_shapes() {
  Outcome o;
  // Output shapes as listed in the architecture table, batch axis dropped.
  const ShapeTrace expected = {
      {"Concat", {128, 32, 2}},
      {"Conv + BN + LeakyReLU", {64, 16, 32}},
      {"Conv + BN + LeakyReLU", {64, 16, 64}},
      {"Xception Module", {64, 16, 64}},
      {"Xception Module", {64, 16, 64}},
      {"Inception Module B", {64, 16, 64}},
      {"Inception Module B", {64, 16, 64}},
      {"Xception Reduce Module", {32, 8, 128}},
      {"Xception Module", {32, 8, 128}},
      {"Xception Module", {32, 8, 128}},
      {"Inception Module B", {32, 8, 128}},
      {"Inception Module B", {32, 8, 128}},
      {"Xception Module", {32, 8, 128}},
      {"Xception Module", {32, 8, 128}},
      {"Permute", {8, 32, 128}},
      {"GlobalAvgPool1D", {32, 128}},
      {"Dropout", {32, 128}},
      {"LSTM", {32, 38}},
      {"BatchNorm", {32, 38}},
      {"Softmax", {32, 38}},
  };
  RecognizerModel model(RecognizerConfig{});
  std::mt19937_64 rng(3);
  Tape tape(false);
  ShapeTrace trace;
  const Var out = model.forward(tape, tape.input(random_tensor({128, 32, 2}, rng, 0.0, 1.0)),
                                Mode::Infer, nullptr, &trace);
  const Tensor& lp = tape.value(out);
  double worst_row = 0.0;
  for (std::size_t t = 0; t < lp.dim(0); ++t) {
    double sum = 0.0;
    for (std::size_t k = 0; k < lp.dim(1); ++k) sum += std::exp(lp.at({t, k}));
    worst_row = std::max(worst_row, std::abs(sum - 1.0));
  }
  std::size_t matched = 0;
  for (std::size_t i = 0; i < std::min(trace.size(), expected.size()); ++i) {
    if (trace[i] == expected[i]) ++matched;
    o.details.push_back("layer=\"" + trace[i].first + "\" shape=" + to_string(trace[i].second) +
                        (trace[i] == expected[i] ? " match=true" : " match=false"));
  }
  o.pass = trace == expected && lp.shape() == Shape{32, 38} && worst_row <= kRowSumTol;
  o.summary = "Architecture conformance: " + std::to_string(matched) + "/" +
              std::to_string(expected.size()) + " layer shapes match, output " +
              to_string(lp.shape()) + ", max |row sum - 1| = " + fmt("%.1e", worst_row);
  return o;
}

// --- 4. separable economy ---------------------------------------------------

Outcome separable_economy() {
  Outcome o;
  const std::size_t sep = separable_params(64, 64, 3).param_count();
  const std::size_t dense = ConvParams::zeros(64, 64, 3, 3).param_count();
  RecognizerModel model(RecognizerConfig{});
  const std::size_t full = model.param_count(), all_dense = model.dense_equivalent_param_count();
  o.pass = sep == 4736 && dense == 36928 && full < all_dense;
  o.summary = "Separable economy: 3x3 64->64 separable " + std::to_string(sep) + " vs dense " +
              std::to_string(dense) + "; model " + std::to_string(full) + " vs all-dense " +
              std::to_string(all_dense);
  o.details.push_back("separable=" + std::to_string(sep) + " dense=" + std::to_string(dense));
  o.details.push_back("model_params=" + std::to_string(full) +
                      " all_dense_params=" + std::to_string(all_dense));
  return o;
}

// --- 5. affine recovery -----------------------------------------------------

Outcome affine_recovery() {
  Outcome o;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.0, 200.0);
  double worst = 0.0;
  int degenerate_skipped = 0;
  for (int trial = 0; trial < kAffineTrials; ++trial) {
    const AffineMatrix truth{1 + 0.8 * u(rng), 0.8 * u(rng), 100 * u(rng),
                             0.8 * u(rng), 1 + 0.8 * u(rng), 100 * u(rng)};
    if (std::abs(truth.determinant()) < 1e-3) {
      ++degenerate_skipped;
      continue;
    }
    Quad src;
    for (Point& p : src) p = Point{pos(rng), pos(rng)};
    if (std::abs(quad_area(src)) < 1.0) {
      ++degenerate_skipped;
      continue;
    }
    Quad dst;
    for (std::size_t i = 0; i < 4; ++i) {
      dst[i] = Point{truth.a * src[i].x + truth.b * src[i].y + truth.tx,
                     truth.c * src[i].x + truth.d * src[i].y + truth.ty};
    }
    const AffineMatrix got = fit_affine(src, dst);
    for (double d : {got.a - truth.a, got.b - truth.b, got.tx - truth.tx, got.c - truth.c,
                     got.d - truth.d, got.ty - truth.ty})
      worst = std::max(worst, std::abs(d));
  }
  // Integer translations: every overlapping pixel must equal its source.
  Image img(40, 24, 1);
  std::mt19937_64 pix(5);
  for (double& v : img.pixels) v = std::uniform_real_distribution<double>(0, 1)(pix);
  std::size_t mismatches = 0, compared = 0;
  for (int dx = -5; dx <= 5; ++dx) {
    for (int dy = -3; dy <= 3; ++dy) {
      const Image out = warp_bilinear(img, AffineMatrix{1, 0, double(dx), 0, 1, double(dy)},
                                      img.width, img.height);
      for (int y = 0; y < int(img.height); ++y) {
        for (int x = 0; x < int(img.width); ++x) {
          const int sx = x - dx, sy = y - dy;
          if (sx < 0 || sy < 0 || sx >= int(img.width) || sy >= int(img.height)) continue;
          ++compared;
          if (out.at(std::size_t(x), std::size_t(y)) != img.at(std::size_t(sx), std::size_t(sy)))
            ++mismatches;
        }
      }
    }
  }
  o.pass = worst <= kAffineTol && mismatches == 0 && degenerate_skipped == 0;
  o.summary = "Affine recovery: max parameter error " + fmt("%.2e", worst) + " over " +
              std::to_string(kAffineTrials - degenerate_skipped) + " trials; integer shifts " +
              std::to_string(compared - mismatches) + "/" + std::to_string(compared) +
              " pixels exact";
  o.details.push_back("max_param_error=" + fmt("%.3e", worst) + " tolerance=1e-09 trials=" +
                      std::to_string(kAffineTrials - degenerate_skipped));
  o.details.push_back("translation_pixels=" + std::to_string(compared) +
                      " mismatches=" + std::to_string(mismatches));
  return o;
}

// --- 6. grammar -------------------------------------------------------------

Outcome grammar_exactness() {
  Outcome o;
  // The plate template table, transcribed independently of the library.
  const std::set<std::string> table = {
      "AA-AN",   "AA-NN",   "AN-NN",   "NA-NN",   "NN-AA",   "NN-AN",   "NN-NA",
      "AA-ANN",  "AA-NNN",  "AN-NNN",  "NA-NNN",  "NNN-AA",  "NNN-AN",  "NNN-NA",
      "AA-NNNN", "AN-NNNN", "NA-NNNN", "AAA-NNN", "AAN-NNN", "ANA-NNN", "ANN-NNN",
      "NAA-NNN", "NNN-AAA", "NNNN-AA", "NNNN-AN", "AAA-NNNN"};
  std::set<std::string> accepted;
  std::size_t candidates = 0, disagreements = 0;
  for (std::size_t len = 4; len <= 7; ++len) {
    for (std::size_t mask = 0; mask < (1u << len); ++mask) {
      // dash position len + 1 means no dash at all
      for (std::size_t dash = 0; dash <= len + 1; ++dash) {
        std::string pattern, text;
        for (std::size_t i = 0; i <= len; ++i) {
          if (i == dash) {
            pattern += '-';
            text += '-';
          }
          if (i == len) break;
          const bool letter = (mask >> i) & 1u;
          pattern += letter ? 'A' : 'N';
          text += letter ? char('B' + (i * 7) % 24) : char('1' + (i * 3) % 9);
        }
        ++candidates;
        const auto got = validate(text);
        const bool legal = table.count(pattern) > 0;
        if (got.has_value() != legal || (got && *got != pattern)) ++disagreements;
        if (got) accepted.insert(*got);
      }
    }
  }
  std::mt19937_64 rng(10000);
  std::size_t invalid = 0;
  for (int i = 0; i < 10000; ++i) {
    const PlateString s = fabricate_string(rng);
    if (validate(s.text) != s.pattern) ++invalid;
  }
  const std::set<std::string> library(plate_templates().begin(), plate_templates().end());
  o.pass = disagreements == 0 && accepted == table && library == table && invalid == 0;
  o.summary = "Grammar exactness: validator accepts exactly the " + std::to_string(table.size()) +
              "-template table (" + std::to_string(candidates) + " enumerated strings, " +
              std::to_string(disagreements) + " disagreements); 10000 fabricated, " +
              std::to_string(invalid) + " invalid. Note: the template table has " +
              std::to_string(table.size()) + " rows, the criterion wording says 22";
  o.details.push_back("table_templates=" + std::to_string(table.size()) +
                      " criterion_text_count=22 enumerated=" + std::to_string(candidates) +
                      " disagreements=" + std::to_string(disagreements));
  o.details.push_back("fabricated=10000 invalid=" + std::to_string(invalid));
  return o;
}

// --- 7, 8, 11. desk corpus, training, rectification, throughput -------------

SynthOptions desk_synth() {
  SynthOptions opts;
  opts.fabricate.templates = templates_with_length(5);
  opts.fabricate.letters = "ABCDEF";
  opts.fabricate.digits = "01234";
  opts.augment = AugmentConfig{};
  return opts;
}

std::vector<LabeledImage> desk_corpus(std::size_t n, std::uint64_t seed) {
  const GlyphSet glyphs = GlyphSet::builtin();
  const SynthOptions opts = desk_synth();
  std::mt19937_64 rng(seed);
  std::vector<LabeledImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SynthPlate p = synthesize_plate(rng, glyphs, opts);
    out.push_back({std::move(p.image), p.label.text});
  }
  return out;
}

TrainConfig desk_config(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = kDeskBatch;
  cfg.adam.learning_rate = kDeskLearningRate;
  cfg.final_lr_fraction = kDeskFinalLrFraction;
  cfg.seed = kDeskSeed;
  return cfg;
}

RecognizerModel desk_model() {
  RecognizerConfig rc;
  rc.width = kDeskWidth;
  rc.num_classes = std::strlen(kDeskAlphabet) + 1;
  rc.seed = kDeskSeed;
  return RecognizerModel(rc);
}

struct DeskRun {
  RecognizerModel model;
  std::vector<LabeledImage> train, test;
  TrainResult result;
  double accuracy = 0.0;
  double total_seconds = 0.0;
};

Outcome desk_training(DeskRun& run) {
  Outcome o;
  const Alphabet alphabet(kDeskAlphabet);
  const auto start = Clock::now();
  run.train = desk_corpus(kDeskTrain, kDeskSeed);
  run.test = desk_corpus(kDeskTest, kDeskSeed + 1000);
  run.model = desk_model();
  TrainConfig cfg = desk_config(kDeskEpochs);
  cfg.time_budget_seconds = kDeskBudget - seconds_since(start) - 60.0;  // keep room to score
  cfg.on_epoch = [&](const EpochStats& s) {
    std::cout << "  progress epoch=" << s.epoch << " train_loss=" << fmt("%.4f", s.train_loss)
              << " seconds=" << fmt("%.0f", s.seconds) << std::endl;
  };
  run.result = train_recognizer(run.model, alphabet, run.train, nullptr, cfg);
  run.accuracy = recognizer_accuracy(run.model, alphabet, run.test);
  run.total_seconds = seconds_since(start);

  // Reproducibility: a fresh model trained for one epoch with the same seed
  // must retrace the first epoch exactly.
  RecognizerModel again = desk_model();
  const TrainResult replay = train_recognizer(again, alphabet, run.train, nullptr, desk_config(1));
  const bool reproducible = !run.result.epochs.empty() &&
                            replay.epochs.front().train_loss == run.result.epochs.front().train_loss;

  o.pass = run.accuracy >= kDeskTarget && run.total_seconds <= kDeskBudget && reproducible;
  o.summary = "Desk-scale training: plate accuracy " + fmt("%.2f", 100 * run.accuracy) +
              "% on " + std::to_string(kDeskTest) + " held-out plates after " +
              std::to_string(run.result.epochs.size()) + " epochs in " +
              fmt("%.0f", run.total_seconds) + " s (target >= 95% within 1800 s), first-epoch replay " +
              (reproducible ? "identical" : "DIFFERS");
  for (const EpochStats& s : run.result.epochs)
    o.details.push_back("epoch=" + std::to_string(s.epoch) + " train_loss=" +
                        fmt("%.5f", s.train_loss) + " seconds=" + fmt("%.1f", s.seconds));
  o.details.push_back("plate_accuracy=" + fmt("%.4f", run.accuracy) + " target=0.95 seconds=" +
                      fmt("%.1f", run.total_seconds) + " budget=1800 width=" +
                      fmt("%g", kDeskWidth) + " params=" + std::to_string(run.model.param_count()));
  o.details.push_back("replay_epoch1_loss=" +
                      fmt("%.17g", replay.epochs.front().train_loss) + " run_epoch1_loss=" +
                      fmt("%.17g", run.result.epochs.empty() ? NAN : run.result.epochs.front().train_loss));
  return o;
}

struct TiltedSet {
  std::vector<CornerSample> samples;
  std::vector<std::string> labels;
};

TiltedSet tilted(const std::vector<LabeledImage>& plates, std::uint64_t seed) {
  TiltedSet out;
  std::mt19937_64 rng(seed);
  for (const LabeledImage& p : plates) {
    TiltedPlate t = tilt_plate(p.image, rng);
    out.samples.push_back({std::move(t.image), t.corners});
    out.labels.push_back(p.text);
  }
  return out;
}

struct CornerRun {
  CornerModel model;
  bool trained = false;
};

Outcome rectification_ablation(DeskRun& run, CornerRun& corners) {
  Outcome o;
  const Alphabet alphabet(kDeskAlphabet);
  const auto start = Clock::now();
  TiltedSet train = tilted(run.train, 31);
  // Frontal plates teach the corner model that a plate filling the crop
  // needs no warp.
  for (std::size_t i = 0; i < run.train.size(); i += 2)
    train.samples.push_back({run.train[i].image, canonical_quad(128, 32)});
  const TiltedSet test = tilted(run.test, 32);
  corners.model = CornerModel(kDeskSeed);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.seed = kDeskSeed;
  train_corner_model(corners.model, train.samples, cfg);
  corners.trained = true;
  const double corner_err = mean_corner_error(corners.model, test.samples);

  std::vector<EvalItem> items;
  for (std::size_t i = 0; i < test.samples.size(); ++i)
    items.push_back({"tilted" + std::to_string(i), test.samples[i].image, test.labels[i], {}});
  RecognizeOptions off, on;
  on.rectify = true;
  on.corner_model = &corners.model;
  const EvalReport r_off = evaluate(run.model, alphabet, items, off);
  const EvalReport r_on = evaluate(run.model, alphabet, items, on);

  // Oracle corners bound what a perfect corner model could give.
  std::size_t oracle_correct = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Image flat = rectify_plate(items[i].image, test.samples[i].corners, 128, 32);
    if (decode_log_probs(run.model.log_probs(to_two_channel(flat)), alphabet).text == items[i].truth)
      ++oracle_correct;
  }
  // On frontal plates rectification should be close to a no-op.
  std::size_t frontal_agree = 0;
  for (const LabeledImage& p : run.test)
    if (recognize(run.model, alphabet, p.image, off).text == recognize(run.model, alphabet, p.image, on).text)
      ++frontal_agree;
  const double margin = r_on.plate_accuracy - r_off.plate_accuracy;
  o.pass = margin > 0.0;
  o.summary = "Rectification ablation: tilted-plate accuracy " + fmt("%.2f", 100 * r_off.plate_accuracy) +
              "% without, " + fmt("%.2f", 100 * r_on.plate_accuracy) + "% with rectification (" +
              fmt("%+.2f", 100 * margin) + " points; claimed gain on real plates: 1 to 3 percent)";
  o.details.push_back("accuracy_off=" + fmt("%.4f", r_off.plate_accuracy) + " accuracy_on=" +
                      fmt("%.4f", r_on.plate_accuracy) + " margin=" + fmt("%.4f", margin));
  o.details.push_back("accuracy_true_corners=" +
                      fmt("%.4f", double(oracle_correct) / double(items.size())));
  o.details.push_back("frontal_decode_agreement=" +
                      fmt("%.4f", double(frontal_agree) / double(run.test.size())));
  o.details.push_back("corner_error_px=" + fmt("%.3f", corner_err) + " corner_error_width_fraction=" +
                      fmt("%.4f", corner_err / 128.0));
  o.details.push_back("seconds=" + fmt("%.1f", seconds_since(start)));
  return o;
}

// --- 9. majority vote -------------------------------------------------------

Outcome majority_protocol() {
  Outcome o;
  std::mt19937_64 rng(909);
  std::bernoulli_distribution corrupt(0.2);
  std::vector<EvalItem> items;
  std::vector<Recognition> preds;
  const FabricateOptions fab;
  for (int g = 0; g < 200; ++g) {
    const std::string truth = fabricate_string(rng, fab).text;
    for (int k = 0; k < 30; ++k) {
      EvalItem e;
      e.truth = truth;
      e.group = "g" + std::to_string(g);
      items.push_back(e);
      Recognition r;
      r.text = truth;
      r.confidence = 0.5;
      if (corrupt(rng)) {
        // Substitute one character with a different one.
        const std::size_t pos = rng() % truth.size();
        const char old = r.text[pos];
        do r.text[pos] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"[rng() % 36];
        while (r.text[pos] == old);
      }
      preds.push_back(r);
    }
  }
  const EvalReport rep = score(items, preds);

  auto rec = [](const std::string& t, double c) {
    Recognition r;
    r.text = t;
    r.confidence = c;
    return r;
  };
  const bool conf_tie = majority_vote({rec("AB-123", 0.6), rec("XY-999", 0.9), rec("AB-123", 0.6),
                                       rec("XY-999", 0.8)}) == "XY-999";
  const bool lex_tie = majority_vote({rec("ZZ-11", 0.7), rec("AA-11", 0.7), rec("AA-11", 0.7),
                                      rec("ZZ-11", 0.7)}) == "AA-11";
  const bool plurality = majority_vote({rec("ABC-123", 0.1), rec("ABC-123", 0.1),
                                        rec("ABD-123", 0.99)}) == "ABC-123";
  o.pass = rep.group_accuracy > rep.plate_accuracy && conf_tie && lex_tie && plurality;
  o.summary = "Majority vote: grouped accuracy " + fmt("%.2f", 100 * rep.group_accuracy) +
              "% vs per-image " + fmt("%.2f", 100 * rep.plate_accuracy) +
              "% (200 groups of 30, 20% corruption); tie-breaks " +
              (conf_tie && lex_tie ? "honored" : "VIOLATED");
  o.details.push_back("groups=" + std::to_string(rep.groups) + " group_accuracy=" +
                      fmt("%.4f", rep.group_accuracy) + " image_accuracy=" +
                      fmt("%.4f", rep.plate_accuracy));
  o.details.push_back(std::string("confidence_tie=") + (conf_tie ? "ok" : "wrong") +
                      " lexicographic_tie=" + (lex_tie ? "ok" : "wrong") +
                      " plurality=" + (plurality ? "ok" : "wrong"));
  return o;
}

// --- 10. persistence --------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

Outcome persistence() {
  Outcome o;
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("lpr_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  RecognizerModel model(RecognizerConfig{});
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  const TensorList tensors = model.tensors();
  for (const NamedTensor& nt : tensors)
    for (double& v : nt.tensor->data()) v = v * u(rng) + (u(rng) - 1.0) * 0.01;
  round_to_float32(tensors);
  save_weights(model, Alphabet::plates(), dir / "w.lprw");
  LoadedRecognizer loaded = load_recognizer(dir / "w.lprw");
  const Tensor x = random_tensor({4, 128, 32, 2}, rng, 0.0, 1.0);
  const Tensor a = model.log_probs_batch(x), b = loaded.model.log_probs_batch(x);
  const bool bitwise = a.shape() == b.shape() &&
                       std::memcmp(a.raw(), b.raw(), a.size() * sizeof(double)) == 0;

  const std::string good = slurp(dir / "w.lprw");
  auto kind = [&](const std::string& bytes) -> std::string {
    spit(dir / "bad.lprw", bytes);
    try {
      read_checkpoint(dir / "bad.lprw");
    } catch (const BadMagicError&) {
      return "magic";
    } catch (const VersionMismatchError&) {
      return "version";
    } catch (const TruncatedCheckpointError& e) {
      return std::string("truncated:") + e.what();
    } catch (const std::exception&) {
      return "other";
    }
    return "none";
  };
  std::string magic = good;
  magic[0] = 'Q';
  std::string version = good;
  version[4] = 9;
  const std::string first_name = good.substr(14, std::uint8_t(good[12]));
  const std::string truncated = kind(good.substr(0, 14 + first_name.size() + 4 + 16 + 10));
  const bool magic_ok = kind(magic) == "magic";
  const bool version_ok = kind(version) == "version";
  const bool trunc_ok = truncated.starts_with("truncated:") &&
                        truncated.find("'" + first_name + "'") != std::string::npos;
  fs::remove_all(dir);
  o.pass = bitwise && magic_ok && version_ok && trunc_ok;
  o.summary = std::string("Persistence: roundtrip forward outputs ") +
              (bitwise ? "bit-identical" : "DIFFER") + "; bad magic, version and truncation raise " +
              (magic_ok && version_ok && trunc_ok ? "their distinct errors" : "WRONG errors");
  o.details.push_back(std::string("bit_identical=") + (bitwise ? "true" : "false") +
                      " tensors=" + std::to_string(tensors.size()) +
                      " params=" + std::to_string(model.param_count()));
  o.details.push_back(std::string("magic_error=") + (magic_ok ? "ok" : "wrong") + " version_error=" +
                      (version_ok ? "ok" : "wrong") + " truncation_error=" + (trunc_ok ? "ok" : "wrong") +
                      " truncation_names=" + first_name);
  return o;
}

// --- 11. throughput ---------------------------------------------------------

Outcome benchmark_sanity(DeskRun* run, CornerRun* corners) {
  Outcome o;
  const Alphabet alphabet(kDeskAlphabet);
  std::optional<RecognizerModel> fresh;
  RecognizerModel* model = run ? &run->model : &fresh.emplace(desk_model());
  std::optional<CornerModel> fresh_corners;
  CornerModel* cm = corners && corners->trained ? &corners->model : &fresh_corners.emplace(1);
  std::vector<Image> images;
  for (const LabeledImage& p : desk_corpus(32, 4242)) images.push_back(p.image);

  constexpr std::size_t kN = 400;  // about two seconds per repeat
  RecognizeOptions off, on;
  on.rectify = true;
  on.corner_model = cm;
  const FpsReport f_off = bench_fps(*model, alphabet, images, kN, off);
  const FpsReport f_double = bench_fps(*model, alphabet, images, 2 * kN, off);
  const FpsReport f_on = bench_fps(*model, alphabet, images, kN, on);
  // Variation across repeats is the coefficient of variation; the max-min
  // range is reported alongside it.
  auto cv = [](const FpsReport& f) { return f.stdev / f.mean; };
  auto range = [](const FpsReport& f) {
    const auto [lo, hi] = std::minmax_element(f.repeats.begin(), f.repeats.end());
    return (*hi - *lo) / f.mean;
  };
  const double doubling = std::abs(f_double.mean - f_off.mean) / f_off.mean;
  o.pass = cv(f_off) < kFpsVariation && cv(f_on) < kFpsVariation && doubling < kFpsVariation &&
           f_on.mean <= f_off.mean && std::isfinite(f_off.mean) && f_off.mean > 0;
  o.summary = "Benchmark sanity: " + fmt("%.1f", f_off.mean) + " img/s rectify off (cv " +
              fmt("%.1f", 100 * cv(f_off)) + "%, range " + fmt("%.1f", 100 * range(f_off)) + "%), " +
              fmt("%.1f", f_on.mean) + " img/s rectify on (cv " + fmt("%.1f", 100 * cv(f_on)) +
              "%, range " + fmt("%.1f", 100 * range(f_on)) + "%), n vs 2n " +
              fmt("%.1f", 100 * doubling) + "%";
  auto line = [&](const std::string& name, const FpsReport& f) {
    std::string s = "config=" + name + " mean=" + fmt("%.2f", f.mean) + " stdev=" + fmt("%.2f", f.stdev);
    for (double r : f.repeats) s += " " + fmt("%.2f", r);
    return s;
  };
  o.details.push_back(line("rectify_off_n400", f_off));
  o.details.push_back(line("rectify_off_n800", f_double));
  o.details.push_back(line("rectify_on_n400", f_on));
  o.details.push_back("width=" + fmt("%g", model->config().width) + " variation_limit=0.10");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);
  std::set<int> want(only.begin(), only.end());
  if (want.empty())
    for (int i = 1; i <= 11; ++i) want.insert(i);

  const std::map<int, std::string> names = {
      {1, "ctc-oracle"},      {2, "gradient-integrity"}, {3, "architecture-shapes"},
      {4, "separable-economy"}, {5, "affine-recovery"},  {6, "grammar-exactness"},
      {7, "desk-training"},   {8, "rectification-ablation"}, {9, "majority-vote"},
      {10, "persistence"},    {11, "benchmark-sanity"}};

  std::optional<DeskRun> desk;
  std::optional<CornerRun> corners;
  auto ensure_desk = [&]() -> std::optional<Outcome> {
    if (desk) return std::nullopt;
    desk.emplace();
    return desk_training(*desk);
  };

  int failed = 0;
  std::map<int, Outcome> done;
  for (int id : want) {
    Outcome o;
    try {
      switch (id) {
        case 1: o = ctc_oracle(); break;
        case 2: o = gradient_integrity(); break;
        case 3: o = architecture_shapes(); break;
        case 4: o = separable_economy(); break;
        case 5: o = affine_recovery(); break;
        case 6: o = grammar_exactness(); break;
        case 7: o = *ensure_desk(); break;
        case 8: {
          if (!desk) ensure_desk();
          corners.emplace();
          o = rectification_ablation(*desk, *corners);
          break;
        }
        case 9: o = majority_protocol(); break;
        case 10: o = persistence(); break;
        case 11:
          o = benchmark_sanity(desk ? &*desk : nullptr, corners ? &*corners : nullptr);
          break;
      }
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = names.at(id) + " raised: " + e.what();
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << names.at(id) << ": "
              << o.summary << std::endl;
    for (const std::string& d : o.details) std::cout << "  criterion=" << id << " " << d << '\n';
    std::cout << std::flush;
  }
  std::cout << "summary passed=" << want.size() - std::size_t(failed) << " failed=" << failed
            << " run=" << want.size() << std::endl;
  return failed ? 1 : 0;
}
