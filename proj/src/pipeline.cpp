#include "lpr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "lpr/platelang.hpp"
#include "lpr/train.hpp"

namespace lpr {

std::vector<int> best_alignment(const Tensor& log_probs, std::span<const int> labels) {
  if (log_probs.rank() != 2) throw ShapeError("best_alignment: expected (T, C) log-probabilities");
  const std::size_t frames = log_probs.dim(0), classes = log_probs.dim(1);
  const int blank = static_cast<int>(classes) - 1;
  if (ctc_min_frames(labels) > frames) {
    throw InfeasibleTargetError("best_alignment: " + std::to_string(labels.size()) +
                                " labels do not fit in " + std::to_string(frames) + " frames");
  }
  // Blank-interleaved target: b l0 b l1 ... b
  std::vector<int> ext(2 * labels.size() + 1, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  const std::size_t s_len = ext.size();
  constexpr double kNeg = -std::numeric_limits<double>::infinity();
  std::vector<double> score(frames * s_len, kNeg);
  std::vector<int> from(frames * s_len, -1);
  auto lp = [&](std::size_t t, int c) { return log_probs[t * classes + std::size_t(c)]; };

  score[0] = lp(0, ext[0]);
  if (s_len > 1) score[1] = lp(0, ext[1]);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double best = score[(t - 1) * s_len + s];
      int arg = int(s);
      if (s >= 1 && score[(t - 1) * s_len + s - 1] > best) {
        best = score[(t - 1) * s_len + s - 1];
        arg = int(s) - 1;
      }
      if (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] &&
          score[(t - 1) * s_len + s - 2] > best) {
        best = score[(t - 1) * s_len + s - 2];
        arg = int(s) - 2;
      }
      if (best == kNeg) continue;
      score[t * s_len + s] = best + lp(t, ext[s]);
      from[t * s_len + s] = arg;
    }
  }
  std::size_t s = s_len - 1;
  const std::size_t last = (frames - 1) * s_len;
  if (s_len > 1 && score[last + s_len - 2] > score[last + s]) s = s_len - 2;
  std::vector<int> path(frames);
  for (std::size_t t = frames; t-- > 0;) {
    path[t] = ext[s];
    if (t > 0) s = std::size_t(from[t * s_len + s]);
  }
  return path;
}

Recognition decode_log_probs(const Tensor& log_probs, const Alphabet& alphabet,
                             std::size_t beam_width) {
  if (beam_width == 0) throw std::invalid_argument("decode: beam width must be >= 1");
  if (log_probs.rank() != 2 || log_probs.dim(1) != std::size_t(alphabet.num_classes())) {
    throw ShapeError("decode: expected (T, " + std::to_string(alphabet.num_classes()) +
                     ") log-probabilities, got " + to_string(log_probs.shape()));
  }
  const LabelSeq labels = beam_width == 1 ? ctc_greedy_decode(log_probs)
                                          : ctc_beam_decode(log_probs, beam_width).labels;
  const std::vector<int> path = best_alignment(log_probs, labels);
  const std::size_t classes = log_probs.dim(1);
  double sum = 0.0;
  for (std::size_t t = 0; t < path.size(); ++t)
    sum += std::exp(log_probs[t * classes + std::size_t(path[t])]);
  Recognition r;
  r.text = alphabet.decode(labels);
  r.confidence = sum / static_cast<double>(path.size());
  r.grammar_ok = validate(r.text).has_value();
  return r;
}

Recognition recognize(RecognizerModel& model, const Alphabet& alphabet, const Image& image,
                      const RecognizeOptions& options) {
  if (options.rectify && !options.corner_model) {
    throw std::invalid_argument("recognize: rectification needs a corner model");
  }
  const Image* input = &image;
  Image rectified;
  std::optional<Quad> corners;
  if (options.rectify) {
    const Quad q = denormalize_corners(options.corner_model->predict(to_two_channel(image)),
                                       image.width, image.height);
    try {
      rectified = rectify_plate(image, q, kPlateWidth, kPlateHeight);
      input = &rectified;
      corners = q;
    } catch (const DegenerateQuadError&) {
    }
  }
  Recognition r = decode_log_probs(model.log_probs(to_two_channel(*input)), alphabet,
                                   options.beam_width);
  r.corners = corners;
  return r;
}

std::string majority_vote(const std::vector<Recognition>& predictions) {
  if (predictions.empty()) throw std::invalid_argument("majority_vote: no predictions");
  struct Tally {
    std::size_t votes = 0;
    double confidence = 0.0;
  };
  std::map<std::string, Tally> tally;  // ordered, so ties fall to the smallest key
  for (const Recognition& p : predictions) {
    Tally& t = tally[p.text];
    ++t.votes;
    t.confidence += p.confidence;
  }
  const std::string* best = nullptr;
  std::size_t best_votes = 0;
  double best_conf = 0.0;
  for (const auto& [text, t] : tally) {
    const double mean = t.confidence / static_cast<double>(t.votes);
    if (!best || t.votes > best_votes || (t.votes == best_votes && mean > best_conf)) {
      best = &text;
      best_votes = t.votes;
      best_conf = mean;
    }
  }
  return *best;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double plate_accuracy(std::size_t correct, std::size_t total) {
  if (total == 0) throw std::invalid_argument("plate_accuracy: empty set");
  if (correct > total) throw std::invalid_argument("plate_accuracy: correct exceeds total");
  return static_cast<double>(correct) / static_cast<double>(total);
}

EvalReport score(const std::vector<EvalItem>& items, const std::vector<Recognition>& predictions) {
  if (items.size() != predictions.size()) {
    throw std::invalid_argument("score: " + std::to_string(items.size()) + " items but " +
                                std::to_string(predictions.size()) + " predictions");
  }
  EvalReport r;
  r.total = items.size();
  r.predictions = predictions;
  std::size_t chars = 0, chars_right = 0;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string& truth = items[i].truth;
    const std::string& pred = predictions[i].text;
    if (pred == truth) {
      ++r.correct;
    } else {
      r.failures.push_back({items[i].name, truth, pred});
    }
    const std::size_t d = edit_distance(truth, pred);
    chars += truth.size();
    chars_right += truth.size() > d ? truth.size() - d : 0;
    if (items[i].group) groups[*items[i].group].push_back(i);
  }
  r.plate_accuracy = r.total ? plate_accuracy(r.correct, r.total) : 0.0;
  r.char_accuracy = chars ? static_cast<double>(chars_right) / static_cast<double>(chars) : 0.0;
  r.groups = groups.size();
  for (const auto& [id, members] : groups) {
    std::vector<Recognition> votes;
    for (std::size_t i : members) votes.push_back(predictions[i]);
    // Members of one group share a plate; the first member's label is truth.
    if (majority_vote(votes) == items[members.front()].truth) ++r.groups_correct;
  }
  r.group_accuracy = r.groups ? plate_accuracy(r.groups_correct, r.groups)
                              : std::numeric_limits<double>::quiet_NaN();
  return r;
}

EvalReport evaluate(RecognizerModel& model, const Alphabet& alphabet,
                    const std::vector<EvalItem>& items, const RecognizeOptions& options) {
  std::vector<Recognition> predictions;
  predictions.reserve(items.size());
  const auto start = std::chrono::steady_clock::now();
  for (const EvalItem& item : items)
    predictions.push_back(recognize(model, alphabet, item.image, options));
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EvalReport r = score(items, predictions);
  r.images_per_second = seconds > 0.0 ? static_cast<double>(items.size()) / seconds : 0.0;
  return r;
}

FpsReport bench_fps(RecognizerModel& model, const Alphabet& alphabet,
                    const std::vector<Image>& images, std::size_t n,
                    const RecognizeOptions& options, std::size_t repeats) {
  if (n == 0) throw std::invalid_argument("bench_fps: n must be >= 1");
  if (repeats == 0) throw std::invalid_argument("bench_fps: repeats must be >= 1");
  if (images.empty()) throw std::invalid_argument("bench_fps: no images");
  auto pass = [&] {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n; ++i) recognize(model, alphabet, images[i % images.size()], options);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  pass();  // warmup
  FpsReport r;
  for (std::size_t k = 0; k < repeats; ++k) r.repeats.push_back(static_cast<double>(n) / pass());
  double sum = 0.0;
  for (double v : r.repeats) sum += v;
  r.mean = sum / static_cast<double>(repeats);
  double sq = 0.0;
  for (double v : r.repeats) sq += (v - r.mean) * (v - r.mean);
  r.stdev = repeats > 1 ? std::sqrt(sq / static_cast<double>(repeats - 1)) : 0.0;
  return r;
}

}  // namespace lpr
