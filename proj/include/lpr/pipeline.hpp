#pragma once

// Inference path (optional rectification, recognizer, decoding) and the
// evaluation protocols built on it.

#include <optional>
#include <string>
#include <vector>

#include "lpr/ctc.hpp"
#include "lpr/image.hpp"
#include "lpr/models.hpp"
#include "lpr/rectify.hpp"

namespace lpr {

struct RecognizeOptions {
  /// Warp the predicted corner quad onto the frontal plate first. Needs
  /// `corner_model`.
  bool rectify = false;
  CornerModel* corner_model = nullptr;
  /// 1 selects greedy decoding, larger values prefix beam search.
  std::size_t beam_width = 1;
};

struct Recognition {
  std::string text;
  /// Mean over frames of the probability along the most likely alignment
  /// of `text`.
  double confidence = 0.0;
  bool grammar_ok = false;
  /// Corners used for rectification, in input pixel coordinates.
  std::optional<Quad> corners;
};

/// Decodes (T, C) log-probabilities. Strings that match no template are
/// still returned, with grammar_ok false.
Recognition decode_log_probs(const Tensor& log_probs, const Alphabet& alphabet,
                             std::size_t beam_width = 1);

/// Per-frame classes of the most probable alignment that collapses to
/// `labels`. Throws InfeasibleTargetError when no alignment exists.
std::vector<int> best_alignment(const Tensor& log_probs, std::span<const int> labels);

/// When the predicted quad is degenerate the unrectified image is used and
/// `corners` stays empty.
Recognition recognize(RecognizerModel& model, const Alphabet& alphabet, const Image& image,
                      const RecognizeOptions& options = {});

/// Plurality winner. Ties go to the highest mean confidence, then to the
/// lexicographically smallest string. Throws std::invalid_argument when
/// `predictions` is empty.
std::string majority_vote(const std::vector<Recognition>& predictions);

std::size_t edit_distance(std::string_view a, std::string_view b);

/// correct / total; throws std::invalid_argument for total == 0 or
/// correct > total.
double plate_accuracy(std::size_t correct, std::size_t total);

struct EvalItem {
  std::string name;  // image path or any identifier
  Image image;
  std::string truth;
  std::optional<std::string> group;
};

struct EvalFailure {
  std::string name;
  std::string truth;
  std::string prediction;
};

struct EvalReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  double plate_accuracy = 0.0;
  /// 1 - edit distance / truth length, floored at 0 per image, pooled over
  /// characters.
  double char_accuracy = 0.0;
  std::size_t groups = 0;
  std::size_t groups_correct = 0;
  /// Majority-vote accuracy over groups; NaN when no item has a group.
  double group_accuracy = 0.0;
  double images_per_second = 0.0;
  std::vector<Recognition> predictions;  // in item order
  std::vector<EvalFailure> failures;
};

/// Recognition-only throughput; repeated calls on the same inputs return
/// identical accuracies and predictions.
EvalReport evaluate(RecognizerModel& model, const Alphabet& alphabet,
                    const std::vector<EvalItem>& items, const RecognizeOptions& options = {});

/// Accuracy fields of a report from precomputed predictions.
EvalReport score(const std::vector<EvalItem>& items, const std::vector<Recognition>& predictions);

struct FpsReport {
  double mean = 0.0;
  double stdev = 0.0;
  std::vector<double> repeats;  // images per second of each timed repeat
};

/// Throughput of recognize() over `n` images cycled from `images`, already
/// decoded in memory. One untimed warmup pass precedes `repeats` timed
/// passes.
FpsReport bench_fps(RecognizerModel& model, const Alphabet& alphabet,
                    const std::vector<Image>& images, std::size_t n,
                    const RecognizeOptions& options = {}, std::size_t repeats = 5);

}  // namespace lpr
