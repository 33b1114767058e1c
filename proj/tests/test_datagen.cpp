#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dlglc/datagen.hpp"
#include "dlglc/numerics.hpp"

using namespace dlglc;
using Catch::Matchers::WithinAbs;

TEST_CASE("corpus generation is deterministic in the seed", "[datagen]") {
  CorpusSpec spec;
  spec.n_speakers = 2;
  spec.utts_per_speaker = 3;
  spec.dim = 8;
  spec.seed = 7;
  const auto a = generate_corpus(spec);
  const auto b = generate_corpus(spec);
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.utterances[i].id == b.utterances[i].id);
    CHECK(a.utterances[i].true_speaker == b.utterances[i].true_speaker);
    CHECK(a.utterances[i].features == b.utterances[i].features);
  }
  spec.seed = 8;
  const auto c = generate_corpus(spec);
  CHECK(a.utterances[0].features != c.utterances[0].features);
}

TEST_CASE("vanishing within-speaker noise collapses utterances onto the centroid",
          "[datagen]") {
  CorpusSpec spec;
  spec.n_speakers = 3;
  spec.utts_per_speaker = 4;
  spec.dim = 8;
  spec.within_speaker_noise = 1e-300;
  spec.seed = 11;
  const auto corpus = generate_corpus(spec);
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    const auto& first = corpus.utterances[s * spec.utts_per_speaker].features;
    for (std::size_t u = 1; u < spec.utts_per_speaker; ++u)
      CHECK(corpus.utterances[s * spec.utts_per_speaker + u].features == first);
  }
}

TEST_CASE("generated features are unit norm and class-structured", "[datagen]") {
  CorpusSpec spec;
  spec.n_speakers = 20;
  spec.utts_per_speaker = 50;
  spec.dim = 16;
  spec.within_speaker_noise = 0.3;
  spec.seed = 3;
  const auto corpus = generate_corpus(spec);
  for (const auto& u : corpus.utterances)
    REQUIRE_THAT(norm2(u.features), WithinAbs(1.0, 1e-9));

  // within-speaker cosine exceeds across-speaker cosine on average
  double within = 0.0, across = 0.0;
  std::size_t n_within = 0, n_across = 0;
  for (std::size_t i = 0; i < corpus.size(); i += 7)
    for (std::size_t j = i + 1; j < corpus.size(); j += 7) {
      const double c =
          cosine_similarity(corpus.utterances[i].features, corpus.utterances[j].features);
      if (corpus.utterances[i].true_speaker == corpus.utterances[j].true_speaker) {
        within += c;
        ++n_within;
      } else {
        across += c;
        ++n_across;
      }
    }
  REQUIRE(n_within > 0);
  REQUIRE(n_across > 0);
  CHECK(within / n_within > across / n_across + 0.1);
}

TEST_CASE("corpus spec validation", "[datagen]") {
  CorpusSpec spec;
  spec.n_speakers = 0;
  CHECK_THROWS_AS(generate_corpus(spec), std::invalid_argument);
  spec = CorpusSpec{};
  spec.within_speaker_noise = 0.0;
  CHECK_THROWS_AS(generate_corpus(spec), std::invalid_argument);
  spec = CorpusSpec{};
  spec.augment_noise = -0.1;
  CHECK_THROWS_AS(generate_corpus(spec), std::invalid_argument);
}

TEST_CASE("multi-crop with no noise and no mask reproduces the input", "[datagen]") {
  const std::vector<double> features{1.0, -2.0, 0.5, 3.0};
  Rng rng(5);
  const auto crops = multi_crop(features, rng, 0.0, 0.0, 2.0);
  for (const auto& v : crops.long_views) CHECK(v == features);
  for (const auto& v : crops.short_views) CHECK(v == features);
}

TEST_CASE("multi-crop is deterministic and always 2+4 views", "[datagen]") {
  const std::vector<double> features{0.2, 0.4, -0.1, 0.9, 1.5, -2.0, 0.0, 0.3};
  Rng a(42), b(42);
  const auto ca = multi_crop(features, a, 0.3);
  const auto cb = multi_crop(features, b, 0.3);
  REQUIRE(ca.long_views.size() == 2);
  REQUIRE(ca.short_views.size() == 4);
  for (std::size_t i = 0; i < 2; ++i) CHECK(ca.long_views[i] == cb.long_views[i]);
  for (std::size_t i = 0; i < 4; ++i) CHECK(ca.short_views[i] == cb.short_views[i]);
}

TEST_CASE("short views are strictly lossier than long views", "[datagen]") {
  // Monte-Carlo estimate of view fidelity over 1000 crop draws
  CorpusSpec spec;
  spec.dim = 16;
  spec.n_speakers = 1;
  spec.utts_per_speaker = 1;
  spec.seed = 9;
  const auto corpus = generate_corpus(spec);
  const auto& clean = corpus.utterances[0].features;
  Rng rng(17);
  double long_cos = 0.0, short_cos = 0.0;
  const int draws = 1000;
  for (int d = 0; d < draws; ++d) {
    const auto crops = multi_crop(clean, rng, 0.2);
    for (const auto& v : crops.long_views) long_cos += cosine_similarity(v, clean) / 2.0;
    for (const auto& v : crops.short_views) short_cos += cosine_similarity(v, clean) / 4.0;
  }
  long_cos /= draws;
  short_cos /= draws;
  CHECK(long_cos > short_cos + 0.05);
}

TEST_CASE("the short-view mask zeroes the configured fraction", "[datagen]") {
  const std::vector<double> features(16, 1.0);  // nonzero everywhere
  Rng rng(3);
  const auto crops = multi_crop(features, rng, 1e-12, 0.25, 2.0);
  for (const auto& v : crops.short_views) {
    std::size_t zeros = 0;
    for (double x : v)
      if (x == 0.0) ++zeros;
    CHECK(zeros == 4);  // 25% of 16
  }
}

TEST_CASE("label noise injection follows the flip rate", "[datagen]") {
  std::vector<std::uint32_t> labels(10000);
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<std::uint32_t>(i % 10);

  Rng rng(23);
  const auto same = inject_label_noise(labels, 0.0, 10, rng);
  CHECK(same == labels);

  std::vector<std::uint32_t> binary(100);
  for (std::size_t i = 0; i < binary.size(); ++i) binary[i] = i % 2;
  const auto flipped = inject_label_noise(binary, 1.0, 2, rng);
  for (std::size_t i = 0; i < binary.size(); ++i) REQUIRE(flipped[i] == 1 - binary[i]);

  const auto noisy = inject_label_noise(labels, 0.3, 10, rng);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (noisy[i] != labels[i]) ++flips;
  const double rate = static_cast<double>(flips) / static_cast<double>(labels.size());
  CHECK(rate > 0.28);
  CHECK(rate < 0.32);

  CHECK_THROWS_AS(inject_label_noise({0, 0}, 0.5, 1, rng), std::invalid_argument);
  CHECK_THROWS_AS(inject_label_noise({3}, 0.5, 2, rng), std::invalid_argument);
}
