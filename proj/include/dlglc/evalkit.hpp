#pragma once

// Verification trials, cosine scoring, and the two detection metrics:
// equal error rate (interpolated at the crossing) and normalized minimum
// detection cost.

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlglc/datagen.hpp"
#include "dlglc/matrix.hpp"
#include "dlglc/numerics.hpp"
#include "dlglc/rng.hpp"

namespace dlglc {

struct Trial {
  std::uint64_t id_a = 0;
  std::uint64_t id_b = 0;
  bool same_speaker = false;
};

using TrialSet = std::vector<Trial>;

struct EmbeddingStore {
  std::vector<std::uint64_t> ids;
  Matrix vectors;  // one row per id

  std::span<const double> lookup(std::uint64_t id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return vectors.row(i);
    throw std::invalid_argument("EmbeddingStore: unknown utterance id " + std::to_string(id));
  }
};

// Uniform sampling without replacement of same-speaker and different-speaker
// pairs; never pairs an utterance with itself.
inline TrialSet build_trials(const Corpus& corpus, std::size_t n_pos, std::size_t n_neg,
                             Rng& rng) {
  std::map<std::uint32_t, std::vector<std::uint64_t>> by_speaker;
  for (const auto& u : corpus.utterances) by_speaker[u.true_speaker].push_back(u.id);
  std::size_t speakers_with_two = 0;
  for (const auto& [s, ids] : by_speaker)
    if (ids.size() >= 2) ++speakers_with_two;
  if (by_speaker.size() < 2 || speakers_with_two < 2)
    throw std::invalid_argument("build_trials: insufficient corpus (need >=2 speakers with >=2 utterances)");

  std::vector<std::pair<std::uint64_t, std::uint64_t>> pos, neg;
  const auto& utts = corpus.utterances;
  for (std::size_t i = 0; i < utts.size(); ++i)
    for (std::size_t j = i + 1; j < utts.size(); ++j) {
      if (utts[i].true_speaker == utts[j].true_speaker)
        pos.emplace_back(utts[i].id, utts[j].id);
      else
        neg.emplace_back(utts[i].id, utts[j].id);
    }
  if (n_pos > pos.size() || n_neg > neg.size())
    throw std::invalid_argument("build_trials: insufficient corpus for requested trial counts");
  rng.shuffle(pos);
  rng.shuffle(neg);

  TrialSet trials;
  trials.reserve(n_pos + n_neg);
  for (std::size_t i = 0; i < n_pos; ++i) trials.push_back({pos[i].first, pos[i].second, true});
  for (std::size_t i = 0; i < n_neg; ++i) trials.push_back({neg[i].first, neg[i].second, false});
  return trials;
}

inline std::vector<double> score_trials(const EmbeddingStore& store, const TrialSet& trials) {
  std::vector<double> scores;
  scores.reserve(trials.size());
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < store.ids.size(); ++i) index[store.ids[i]] = i;
  for (const auto& t : trials) {
    auto ia = index.find(t.id_a);
    if (ia == index.end())
      throw std::invalid_argument("score_trials: unknown utterance id " + std::to_string(t.id_a));
    auto ib = index.find(t.id_b);
    if (ib == index.end())
      throw std::invalid_argument("score_trials: unknown utterance id " + std::to_string(t.id_b));
    scores.push_back(cosine_similarity(store.vectors.row(ia->second), store.vectors.row(ib->second)));
  }
  return scores;
}

namespace detail {

// Operating points of the accept-if-score>=threshold rule, one per distinct
// score plus the accept-nothing point; thresholds sit at score midpoints
// with sentinels past the extremes.
struct OperatingPoints {
  std::vector<double> threshold;
  std::vector<double> fa;  // false-accept rate among different-speaker trials
  std::vector<double> fr;  // false-reject rate among same-speaker trials
};

inline OperatingPoints sweep_operating_points(std::span<const double> scores,
                                              std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("scoring: scores/labels size mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (auto l : labels) (l ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("scoring: need at least one positive and one negative trial");
  check_finite(scores, "scoring");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  OperatingPoints ops;
  ops.threshold.push_back(scores[order[0]] + 1.0);
  ops.fa.push_back(0.0);
  ops.fr.push_back(1.0);
  std::size_t acc_pos = 0, acc_neg = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? acc_pos : acc_neg)++;
      ++i;
    }
    const double next_t =
        (i < order.size()) ? 0.5 * (s + scores[order[i]]) : s - 1.0;
    ops.threshold.push_back(next_t);
    ops.fa.push_back(static_cast<double>(acc_neg) / static_cast<double>(n_neg));
    ops.fr.push_back(1.0 - static_cast<double>(acc_pos) / static_cast<double>(n_pos));
  }
  return ops;
}

}  // namespace detail

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Rate where false-accept equals false-reject, linearly interpolated
// between the two straddling operating points. Depends on scores only
// through their ordering, so it is invariant under strictly increasing
// transforms.
inline EerResult eer(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto ops = detail::sweep_operating_points(scores, labels);
  for (std::size_t j = 1; j < ops.fa.size(); ++j) {
    const double diff = ops.fa[j] - ops.fr[j];
    if (diff >= 0.0) {
      const double d_fa = ops.fa[j] - ops.fa[j - 1];
      const double d_fr = ops.fr[j] - ops.fr[j - 1];
      const double u = (ops.fr[j - 1] - ops.fa[j - 1]) / (d_fa - d_fr);
      EerResult out;
      out.eer = ops.fa[j - 1] + u * d_fa;
      out.threshold = ops.threshold[j - 1] + u * (ops.threshold[j] - ops.threshold[j - 1]);
      return out;
    }
  }
  throw std::logic_error("eer: no crossing found");  // unreachable
}

// min over thresholds of the detection cost, normalized by the cost of the
// better trivial policy.
inline double min_dcf(std::span<const double> scores, std::span<const std::uint8_t> labels,
                      double p_target = 0.05, double c_miss = 1.0, double c_fa = 1.0) {
  if (!(p_target > 0.0 && p_target < 1.0))
    throw std::invalid_argument("min_dcf: p_target must be in (0,1)");
  if (!(c_miss > 0.0) || !(c_fa > 0.0))
    throw std::invalid_argument("min_dcf: costs must be > 0");
  const auto ops = detail::sweep_operating_points(scores, labels);
  const double denom = std::min(c_miss * p_target, c_fa * (1.0 - p_target));
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < ops.fa.size(); ++j) {
    const double cost = c_miss * p_target * ops.fr[j] + c_fa * (1.0 - p_target) * ops.fa[j];
    best = std::min(best, cost / denom);
  }
  return best;
}

}  // namespace dlglc
