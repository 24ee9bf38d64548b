#include "lpr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>

namespace lpr {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_matrix(const Tensor& lp, const char* what) {
  if (lp.rank() != 2 || lp.dim(0) == 0 || lp.dim(1) < 2) {
    throw ShapeError(std::string(what) +
                     ": expected (T, C) log-probabilities with C >= 2, got " +
                     to_string(lp.shape()));
  }
}
}  // namespace

Alphabet::Alphabet(std::string symbols) : symbols_(std::move(symbols)) {
  if (symbols_.empty()) throw std::invalid_argument("alphabet is empty");
  std::string sorted = symbols_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("alphabet symbols must be unique: " + symbols_);
  }
}

Alphabet Alphabet::plates() {
  return Alphabet("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-");
}

bool Alphabet::contains(char c) const {
  return symbols_.find(c) != std::string::npos;
}

int Alphabet::index_of(char c) const {
  const auto pos = symbols_.find(c);
  if (pos == std::string::npos) {
    throw std::invalid_argument(std::string("symbol '") + c +
                                "' is not in the alphabet");
  }
  return static_cast<int>(pos);
}

LabelSeq Alphabet::encode(std::string_view text) const {
  LabelSeq out;
  out.reserve(text.size());
  for (char c : text) out.push_back(index_of(c));
  return out;
}

std::string Alphabet::decode(std::span<const int> labels) const {
  std::string out;
  for (int l : labels) {
    if (l < 0 || l >= blank()) {
      throw std::invalid_argument("label " + std::to_string(l) +
                                  " outside the alphabet");
    }
    out.push_back(symbols_[static_cast<std::size_t>(l)]);
  }
  return out;
}

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

CtcResult ctc_loss(const Tensor& log_probs, std::span<const int> target) {
  check_matrix(log_probs, "ctc_loss");
  const std::size_t frames = log_probs.dim(0);
  const std::size_t classes = log_probs.dim(1);
  const int blank = static_cast<int>(classes) - 1;
  for (int l : target) {
    if (l < 0 || l >= blank) {
      throw std::invalid_argument("ctc_loss: target label " + std::to_string(l) +
                                  " is the blank or out of range");
    }
  }
  if (ctc_min_frames(target) > frames) {
    throw InfeasibleTargetError(
        "ctc_loss: target of length " + std::to_string(target.size()) +
        " needs at least " + std::to_string(ctc_min_frames(target)) +
        " frames, have " + std::to_string(frames));
  }

  const std::size_t states = 2 * target.size() + 1;
  std::vector<int> ext(states, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto lp = [&](std::size_t t, std::size_t s) {
    return log_probs[t * classes + static_cast<std::size_t>(ext[s])];
  };
  auto can_skip = [&](std::size_t s) {  // s-2 -> s allowed
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  std::vector<double> alpha(frames * states, kNegInf);
  std::vector<double> beta(frames * states, kNegInf);
  alpha[0] = lp(0, 0);
  if (states > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    const double* prev = alpha.data() + (t - 1) * states;
    double* cur = alpha.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (can_skip(s)) a = log_add(a, prev[s - 2]);
      cur[s] = a == kNegInf ? kNegInf : a + lp(t, s);
    }
  }
  const std::size_t last = frames - 1;
  beta[last * states + states - 1] = lp(last, states - 1);
  if (states > 1) beta[last * states + states - 2] = lp(last, states - 2);
  for (std::size_t t = last; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * states;
    double* cur = beta.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double b = next[s];
      if (s + 1 < states) b = log_add(b, next[s + 1]);
      if (s + 2 < states && can_skip(s + 2)) b = log_add(b, next[s + 2]);
      cur[s] = b == kNegInf ? kNegInf : b + lp(t, s);
    }
  }

  double log_p = alpha[last * states + states - 1];
  if (states > 1) log_p = log_add(log_p, alpha[last * states + states - 2]);
  if (log_p == kNegInf) {
    throw InfeasibleTargetError("ctc_loss: target has zero probability");
  }

  CtcResult result{-log_p, Tensor({frames, classes})};
  std::vector<double> occupancy(classes);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kNegInf);
    for (std::size_t s = 0; s < states; ++s) {
      const std::size_t k = static_cast<std::size_t>(ext[s]);
      occupancy[k] = log_add(occupancy[k],
                             alpha[t * states + s] + beta[t * states + s]);
    }
    for (std::size_t k = 0; k < classes; ++k) {
      if (occupancy[k] == kNegInf) continue;
      // alpha and beta both include the emission at t; divide it out once.
      result.grad[t * classes + k] =
          -std::exp(occupancy[k] - log_probs[t * classes + k] - log_p);
    }
  }
  return result;
}

LabelSeq collapse(std::span<const int> frames, int blank) {
  LabelSeq out;
  int prev = -1;
  for (int f : frames) {
    if (f != prev && f != blank) out.push_back(f);
    prev = f;
  }
  return out;
}

LabelSeq ctc_greedy_decode(const Tensor& log_probs) {
  check_matrix(log_probs, "ctc_greedy_decode");
  const std::size_t classes = log_probs.dim(1);
  std::vector<int> frames(log_probs.dim(0));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const double* row = log_probs.raw() + t * classes;
    frames[t] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return collapse(frames, static_cast<int>(classes) - 1);
}

BeamHypothesis ctc_beam_decode(const Tensor& log_probs, std::size_t width) {
  check_matrix(log_probs, "ctc_beam_decode");
  if (width == 0) throw std::invalid_argument("ctc_beam_decode: width must be >= 1");
  const std::size_t frames = log_probs.dim(0);
  const std::size_t classes = log_probs.dim(1);
  const int blank = static_cast<int>(classes) - 1;

  struct Mass {
    double blank = kNegInf;
    double non_blank = kNegInf;
    double total() const { return log_add(blank, non_blank); }
  };
  using Beam = std::vector<std::pair<LabelSeq, Mass>>;
  Beam beam{{LabelSeq{}, Mass{0.0, kNegInf}}};

  for (std::size_t t = 0; t < frames; ++t) {
    const double* row = log_probs.raw() + t * classes;
    std::map<LabelSeq, Mass> next;
    for (const auto& [prefix, mass] : beam) {
      for (int c = 0; c < static_cast<int>(classes); ++c) {
        const double p = row[c];
        if (c == blank) {
          Mass& m = next[prefix];
          m.blank = log_add(m.blank, mass.total() + p);
          continue;
        }
        LabelSeq extended = prefix;
        extended.push_back(c);
        Mass& me = next[extended];
        if (!prefix.empty() && prefix.back() == c) {
          // A repeat only extends after a blank; otherwise it merges.
          me.non_blank = log_add(me.non_blank, mass.blank + p);
          Mass& ms = next[prefix];
          ms.non_blank = log_add(ms.non_blank, mass.non_blank + p);
        } else {
          me.non_blank = log_add(me.non_blank, mass.total() + p);
        }
      }
    }
    beam.assign(next.begin(), next.end());
    std::stable_sort(beam.begin(), beam.end(), [](const auto& a, const auto& b) {
      return a.second.total() > b.second.total();
    });
    if (beam.size() > width) beam.resize(width);
  }
  return {beam.front().first, beam.front().second.total()};
}

namespace ag {

Var ctc_loss(Tape& tape, Var log_probs, const std::vector<LabelSeq>& targets) {
  const Tensor& lp = tape.value(log_probs);
  if (lp.rank() != 3 || lp.dim(0) != targets.size()) {
    throw ShapeError("ctc_loss: expected (N, T, C) log-probabilities for " +
                     std::to_string(targets.size()) + " targets, got " +
                     to_string(lp.shape()));
  }
  const std::size_t n = lp.dim(0), frames = lp.dim(1), classes = lp.dim(2);
  auto grad = std::make_shared<Tensor>(lp.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor row({frames, classes},
               std::vector<double>(lp.raw() + i * frames * classes,
                                   lp.raw() + (i + 1) * frames * classes));
    CtcResult r = lpr::ctc_loss(row, targets[i]);
    total += r.loss;
    std::copy(r.grad.data().begin(), r.grad.data().end(),
              grad->raw() + i * frames * classes);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return tape.emit(Tensor({1}, total * inv_n),
                   [log_probs, grad, inv_n](Tape& t, const Tensor& g) {
                     Tensor& dx = t.grad_buffer(log_probs);
                     for (std::size_t i = 0; i < dx.size(); ++i)
                       dx[i] += g[0] * inv_n * (*grad)[i];
                   });
}

}  // namespace ag
}  // namespace lpr
