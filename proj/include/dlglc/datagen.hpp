#pragma once

// Synthetic speaker-like corpora. Speakers are latent unit-norm centroids;
// utterances are renormalized noisy observations of their centroid. Crops
// are noisy views of one utterance, with short views strictly noisier than
// long ones (extra noise plus a random coordinate mask).

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dlglc/matrix.hpp"
#include "dlglc/rng.hpp"

namespace dlglc {

struct CorpusSpec {
  std::size_t n_speakers = 20;
  std::size_t utts_per_speaker = 50;
  std::size_t dim = 16;
  double within_speaker_noise = 0.3;
  double augment_noise = 0.2;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_speakers < 1 || utts_per_speaker < 1 || dim < 1)
      throw std::invalid_argument("CorpusSpec: counts must be >= 1");
    if (!(within_speaker_noise > 0.0) || !(augment_noise > 0.0))
      throw std::invalid_argument("CorpusSpec: noise scales must be > 0");
  }
};

struct Utterance {
  std::uint64_t id = 0;
  std::vector<double> features;
  // Hidden ground truth: read by metrics and diagnostics only, never by any
  // training code path.
  std::uint32_t true_speaker = 0;
  std::optional<std::uint32_t> pseudo_label;
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  std::size_t dim() const { return spec.dim; }

  std::vector<std::uint32_t> true_labels() const {
    std::vector<std::uint32_t> out;
    out.reserve(utterances.size());
    for (const auto& u : utterances) out.push_back(u.true_speaker);
    return out;
  }

  std::vector<std::uint64_t> ids() const {
    std::vector<std::uint64_t> out;
    out.reserve(utterances.size());
    for (const auto& u : utterances) out.push_back(u.id);
    return out;
  }
};

// What the trainers are allowed to see: features and ids, no ground truth.
struct FeatureSet {
  std::size_t dim = 0;
  double augment_noise = 0.0;
  std::vector<std::uint64_t> ids;
  Matrix features;  // one row per utterance, aligned with ids

  static FeatureSet from_corpus(const Corpus& corpus) {
    FeatureSet fs;
    fs.dim = corpus.dim();
    fs.augment_noise = corpus.spec.augment_noise;
    fs.ids = corpus.ids();
    fs.features = Matrix(corpus.size(), corpus.dim());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& f = corpus.utterances[i].features;
      std::copy(f.begin(), f.end(), fs.features.row(i).begin());
    }
    return fs;
  }
};

struct CropSet {
  std::array<std::vector<double>, 2> long_views;
  std::array<std::vector<double>, 4> short_views;
};

namespace detail {

inline std::vector<double> random_unit_vector(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double n = 0.0;
  do {
    for (auto& x : v) x = rng.next_gaussian();
    n = norm2(v);
  } while (n < 1e-12);
  for (auto& x : v) x /= n;
  return v;
}

}  // namespace detail

// Deterministic in spec.seed; each speaker consumes an independent
// sub-stream derived from (seed, speaker_id).
inline Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.spec = spec;
  corpus.utterances.reserve(spec.n_speakers * spec.utts_per_speaker);
  std::uint64_t next_id = 0;
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    Rng rng(derive_seed(spec.seed, s));
    const auto centroid = detail::random_unit_vector(spec.dim, rng);
    for (std::size_t u = 0; u < spec.utts_per_speaker; ++u) {
      Utterance utt;
      utt.id = next_id++;
      utt.true_speaker = static_cast<std::uint32_t>(s);
      utt.features.resize(spec.dim);
      double n = 0.0;
      for (std::size_t d = 0; d < spec.dim; ++d) {
        utt.features[d] = centroid[d] + spec.within_speaker_noise * rng.next_gaussian();
        n += utt.features[d] * utt.features[d];
      }
      n = std::sqrt(n);
      if (n < 1e-12) {
        utt.features = centroid;  // vanishing draw; keep the centroid
      } else {
        for (auto& x : utt.features) x /= n;
      }
      corpus.utterances.push_back(std::move(utt));
    }
  }
  return corpus;
}

// 2 long views = features + noise; 4 short views = features + stronger noise
// with a random coordinate mask. Consumes the rng in a fixed order.
inline CropSet multi_crop(std::span<const double> features, Rng& rng,
                          double augment_noise, double mask_fraction = 0.25,
                          double short_noise_factor = 2.0) {
  if (augment_noise < 0.0)
    throw std::invalid_argument("multi_crop: augment_noise must be >= 0");
  if (mask_fraction < 0.0 || mask_fraction > 1.0)
    throw std::invalid_argument("multi_crop: mask_fraction must be in [0,1]");
  const std::size_t dim = features.size();
  CropSet crops;
  for (auto& view : crops.long_views) {
    view.resize(dim);
    for (std::size_t d = 0; d < dim; ++d)
      view[d] = features[d] + augment_noise * rng.next_gaussian();
  }
  const auto mask_count =
      static_cast<std::size_t>(std::lround(mask_fraction * static_cast<double>(dim)));
  std::vector<std::size_t> index(dim);
  for (auto& view : crops.short_views) {
    view.resize(dim);
    for (std::size_t d = 0; d < dim; ++d)
      view[d] = features[d] + short_noise_factor * augment_noise * rng.next_gaussian();
    // partial Fisher-Yates picks mask_count distinct coordinates
    for (std::size_t d = 0; d < dim; ++d) index[d] = d;
    for (std::size_t i = 0; i < mask_count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.next_below(dim - i));
      std::swap(index[i], index[j]);
      view[index[i]] = 0.0;
    }
  }
  return crops;
}

inline CropSet multi_crop(const Utterance& u, Rng& rng, double augment_noise,
                          double mask_fraction = 0.25, double short_noise_factor = 2.0) {
  return multi_crop(std::span<const double>(u.features), rng, augment_noise,
                    mask_fraction, short_noise_factor);
}

// Each label is independently replaced by a uniformly random *different*
// class with probability flip_rate.
inline std::vector<std::uint32_t> inject_label_noise(
    const std::vector<std::uint32_t>& labels, double flip_rate, std::size_t n_classes,
    Rng& rng) {
  if (flip_rate < 0.0 || flip_rate > 1.0)
    throw std::invalid_argument("inject_label_noise: flip_rate must be in [0,1]");
  if (n_classes < 2 && flip_rate > 0.0)
    throw std::invalid_argument("inject_label_noise: need n_classes >= 2 to flip");
  for (auto l : labels) {
    if (l >= n_classes)
      throw std::invalid_argument("inject_label_noise: label out of range");
  }
  std::vector<std::uint32_t> out = labels;
  for (auto& l : out) {
    if (rng.next_double() < flip_rate) {
      auto r = static_cast<std::uint32_t>(rng.next_below(n_classes - 1));
      l = (r >= l) ? r + 1 : r;
    }
  }
  return out;
}

}  // namespace dlglc
