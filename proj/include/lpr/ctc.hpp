#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lpr/autograd.hpp"
#include "lpr/tensor.hpp"

namespace lpr {

/// Target symbol indices, blanks excluded.
using LabelSeq = std::vector<int>;

/// Ordered output symbols. The CTC blank is the class after the last
/// symbol, so num_classes() == symbols().size() + 1.
class Alphabet {
 public:
  explicit Alphabet(std::string symbols);

  /// A-Z, 0-9 and '-': 37 symbols, 38 classes with the blank.
  static Alphabet plates();

  const std::string& symbols() const { return symbols_; }
  int num_classes() const { return static_cast<int>(symbols_.size()) + 1; }
  int blank() const { return static_cast<int>(symbols_.size()); }
  bool contains(char c) const;
  int index_of(char c) const;

  /// Throws std::invalid_argument for characters outside the alphabet.
  LabelSeq encode(std::string_view text) const;
  std::string decode(std::span<const int> labels) const;

 private:
  std::string symbols_;
};

class InfeasibleTargetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Frames needed to emit `target`: one per symbol plus one blank between
/// each pair of equal neighbours.
std::size_t ctc_min_frames(std::span<const int> target);

struct CtcResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d log_probs, (T, C)
};

/// -log P(target | log_probs) over all alignments, by log-space
/// forward-backward. `log_probs` is (T, C) with the blank in the last column.
CtcResult ctc_loss(const Tensor& log_probs, std::span<const int> target);

/// Merge repeats, then drop blanks.
LabelSeq collapse(std::span<const int> frames, int blank);

LabelSeq ctc_greedy_decode(const Tensor& log_probs);

struct BeamHypothesis {
  LabelSeq labels;
  double log_prob = 0.0;
};

/// Prefix beam search keeping separate blank / non-blank mass per prefix.
BeamHypothesis ctc_beam_decode(const Tensor& log_probs, std::size_t width);

namespace ag {
/// Mean CTC loss over a batch. `log_probs` is (N, T, C).
Var ctc_loss(Tape& tape, Var log_probs, const std::vector<LabelSeq>& targets);
}  // namespace ag

}  // namespace lpr
