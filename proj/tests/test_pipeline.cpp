#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "dlglc/config.hpp"
#include "dlglc/pipeline.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dlglc;
using Catch::Matchers::WithinAbs;

namespace {

// small but non-trivial settings so pipeline tests stay fast
PipelineConfig small_config() {
  PipelineConfig cfg;
  cfg.corpus.n_speakers = 8;
  cfg.corpus.utts_per_speaker = 12;
  cfg.corpus.dim = 12;
  cfg.dino.epochs = 4;
  cfg.dino.batch_size = 32;
  cfg.dino.n_outputs = 64;
  cfg.dino.emb_dim = 16;
  cfg.dino.enc_hidden = 24;
  cfg.dino.head_hidden = 24;
  cfg.dino.head_bottleneck = 8;
  cfg.stage2.epochs = 4;
  cfg.stage2.batch_size = 32;
  cfg.stage2.warmup_epochs = 1;
  cfg.clusters = 10;
  cfg.kmeans_restarts = 3;
  cfg.n_iterations = 2;
  cfg.trials_pos = 80;
  cfg.trials_neg = 80;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("config files parse, override, and reject unknown keys", "[pipeline]") {
  const auto dir = testutil::temp_dir("config");
  {
    std::ofstream out(dir + "/a.cfg");
    out << "# comment line\n";
    out << "seed = 99\n";
    out << "n_speakers=7\n";
    out << "gate_mode = dynamic+lc   # trailing comment\n";
    out << "margin=0.35\n";
    out << "widen_final=true\n";
  }
  auto cfg = load_config(dir + "/a.cfg");
  CHECK(cfg.seed == 99);
  CHECK(cfg.corpus.n_speakers == 7);
  CHECK(cfg.stage2.gate_mode == GateMode::dynamic_lc);
  CHECK_THAT(cfg.stage2.objective.margin, WithinAbs(0.35, 1e-15));
  CHECK(cfg.widen_final);
  CHECK(cfg.corpus.utts_per_speaker == 50);  // untouched default

  apply_config_key(cfg, "stage2_epochs", "3");
  CHECK(cfg.stage2.epochs == 3);
  CHECK_THROWS_WITH(apply_config_key(cfg, "no_such_key", "1"),
                    Catch::Matchers::ContainsSubstring("no_such_key"));
  CHECK_THROWS_WITH(apply_config_key(cfg, "margin", "abc"),
                    Catch::Matchers::ContainsSubstring("margin"));
  CHECK_THROWS_AS(gate_mode_from_string("both"), std::invalid_argument);

  {
    std::ofstream out(dir + "/bad.cfg");
    out << "seed 99\n";
  }
  CHECK_THROWS_WITH(load_config(dir + "/bad.cfg"),
                    Catch::Matchers::ContainsSubstring("key=value"));
}

TEST_CASE("stage-2 training fills one ledger entry per utterance per epoch",
          "[pipeline]") {
  const auto cfg = small_config();
  CorpusSpec spec = cfg.corpus;
  spec.seed = 81;
  const auto corpus = generate_corpus(spec);
  const auto fs = FeatureSet::from_corpus(corpus);

  Rng rng(82);
  std::vector<std::uint32_t> labels(corpus.size());
  for (auto& l : labels) l = static_cast<std::uint32_t>(rng.next_below(cfg.clusters));

  Rng init_rng(83);
  auto encoder = DinoNetwork::init(fs.dim, cfg.dino, init_rng).encoder;
  auto result = train_stage2(fs, labels, encoder, cfg.clusters, cfg.stage2, 84);

  REQUIRE(result.ledgers.size() == cfg.stage2.epochs);
  for (const auto& ledger : result.ledgers) {
    REQUIRE(ledger.entries.size() == corpus.size());
    for (const auto& u : corpus.utterances)
      REQUIRE(ledger.entries.count(u.id) == 1);
  }
  REQUIRE(result.retained_fraction.size() == cfg.stage2.epochs);
  for (double f : result.retained_fraction) {
    REQUIRE(f >= 0.0);
    REQUIRE(f <= 1.0);
  }
  // warmup epoch is ungated
  CHECK(result.retained_fraction.front() == 1.0);
  CHECK(result.tau_used.front() == std::numeric_limits<double>::infinity());

  // same seed, same data: bitwise identical encoders
  auto again = train_stage2(fs, labels, encoder, cfg.clusters, cfg.stage2, 84);
  auto a = oracle::collect_params(result.encoder);
  auto b = oracle::collect_params(again.encoder);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(*a[i] == *b[i]);
}

TEST_CASE("training never reads the hidden ground truth", "[pipeline]") {
  auto cfg = small_config();
  cfg.n_iterations = 1;

  CorpusSpec spec = cfg.corpus;
  spec.seed = derive_seed(cfg.seed, seed_tag::corpus);
  auto corpus_a = generate_corpus(spec);
  auto corpus_b = corpus_a;
  // scramble every hidden label in corpus B
  for (auto& u : corpus_b.utterances) u.true_speaker = (u.true_speaker * 7 + 3) % 5;

  auto run = [&](const Corpus& corpus) {
    PipelineState ps;
    ps.corpus = corpus;
    ps.features = FeatureSet::from_corpus(corpus);
    Rng trng(derive_seed(cfg.seed, seed_tag::trials));
    ps.trials = build_trials(corpus_a, cfg.trials_pos, cfg.trials_neg, trng);
    run_stage1(ps, cfg);
    run_iteration(ps, 1, cfg);
    return ps;
  };
  const auto sa = run(corpus_a);
  const auto sb = run(corpus_b);

  // identical training outputs, bit for bit
  auto pa = oracle::collect_params(const_cast<Mlp&>(sa.encoder));
  auto pb = oracle::collect_params(const_cast<Mlp&>(sb.encoder));
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(*pa[i] == *pb[i]);
  REQUIRE(sa.embeddings.data == sb.embeddings.data);
}

TEST_CASE("iteration reports serialize losslessly", "[pipeline]") {
  IterationReport r;
  r.iteration = 3;
  r.purity = 0.8123456789012345;
  r.nmi = 0.7;
  r.eer = 0.05250000000000001;
  r.min_dcf = 0.4;
  r.retained_fraction = {1.0, 0.7231, 0.81};
  r.gates = {{1, 1.5, 0.4054651081081644, false}, {2, 1.25, 0.22314355131420976, true}};
  r.gate_failure_epochs = {1};
  const auto back = IterationReport::from_json(r.to_json());
  REQUIRE(back == r);

  // through an actual file
  const auto dir = testutil::temp_dir("report");
  {
    std::ofstream out(dir + "/r.json");
    out << r.to_json().dump();
  }
  std::ifstream in(dir + "/r.json");
  nlohmann::json j;
  in >> j;
  REQUIRE(IterationReport::from_json(j) == r);
}

TEST_CASE("the full pipeline runs, reports, and reruns identically", "[pipeline]") {
  auto cfg = small_config();
  const auto dir = testutil::temp_dir("pipeline_run");
  const auto result = run_pipeline(cfg, dir);

  REQUIRE(result.reports.size() == cfg.n_iterations);
  for (const auto& r : result.reports) {
    REQUIRE_FALSE(r.failed);
    REQUIRE(std::isfinite(r.purity));
    REQUIRE(std::isfinite(r.nmi));
    REQUIRE(std::isfinite(r.eer));
    REQUIRE(std::isfinite(r.min_dcf));
    REQUIRE(r.retained_fraction.size() == cfg.stage2.epochs);
    for (double f : r.retained_fraction) {
      REQUIRE(f >= 0.0);
      REQUIRE(f <= 1.0);
    }
  }

  // tau stays inside the observed loss range of the epoch it was fitted on
  for (std::size_t iter = 1; iter <= cfg.n_iterations; ++iter) {
    const auto ledgers =
        read_ledgers(dir + "/ledger_iter" + std::to_string(iter) + ".csv");
    for (const auto& g : result.reports[iter - 1].gates) {
      const auto& fitted_on = ledgers.at(g.epoch - 1);  // fitted at the boundary
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      for (const auto& [id, loss] : fitted_on.entries) {
        lo = std::min(lo, loss);
        hi = std::max(hi, loss);
      }
      REQUIRE(std::isfinite(g.tau));
      REQUIRE(g.tau >= lo);
      REQUIRE(g.tau <= hi);
    }
  }

  const auto rerun = run_pipeline(cfg);
  REQUIRE(rerun.reports.size() == result.reports.size());
  for (std::size_t i = 0; i < rerun.reports.size(); ++i)
    REQUIRE(rerun.reports[i] == result.reports[i]);

  // artifacts exist
  for (const char* name :
       {"corpus.emb1", "manifest.tsv", "trials.txt", "dino_checkpoint.dsv1",
        "dino_loss.csv", "embeddings_iter0.emb1", "assignment_iter1.csv",
        "ledger_iter1.csv", "gates_iter1.csv", "checkpoint_iter1.dsv1",
        "embeddings_iter1.emb1", "reports.csv", "summary.json"})
    REQUIRE(std::filesystem::exists(dir + "/" + name));
}

TEST_CASE("gate mode none reduces to plain supervised training", "[pipeline]") {
  auto cfg = small_config();
  cfg.stage2.gate_mode = GateMode::none;
  cfg.n_iterations = 1;
  const auto result = run_pipeline(cfg);
  const auto& r = result.reports.front();
  REQUIRE(r.gates.empty());
  for (double f : r.retained_fraction) REQUIRE(f == 1.0);
}

TEST_CASE("stage-1 wall clock stays within budget", "[pipeline]") {
  PipelineConfig cfg;  // full default scale
  cfg.validate();
  PipelineState ps;
  CorpusSpec spec = cfg.corpus;
  spec.seed = derive_seed(cfg.seed, seed_tag::corpus);
  ps.corpus = generate_corpus(spec);
  ps.features = FeatureSet::from_corpus(ps.corpus);
  Rng trng(derive_seed(cfg.seed, seed_tag::trials));
  ps.trials = build_trials(ps.corpus, cfg.trials_pos, cfg.trials_neg, trng);

  const auto start = std::chrono::steady_clock::now();
  run_stage1(ps, cfg);
  const auto elapsed = std::chrono::duration_cast<std::chrono::seconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
  // budget: five minutes on one core; expected well under one
  CHECK(elapsed < 300);
}
