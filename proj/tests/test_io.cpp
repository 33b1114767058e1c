#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "dlglc/io.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dlglc;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("EMB1 files round-trip bitwise", "[io]") {
  const auto dir = testutil::temp_dir("emb1");
  Rng rng(71);
  Matrix vectors(5, 3);
  for (auto& x : vectors.data) x = rng.next_gaussian();
  const std::vector<std::uint64_t> ids{3, 1, 4, 1599, 26};

  const auto path = dir + "/a.emb1";
  write_emb1(path, ids, vectors);
  const auto store = read_emb1(path);
  REQUIRE(store.ids == ids);
  REQUIRE(store.vectors.rows == 5);
  REQUIRE(store.vectors.cols == 3);
  for (std::size_t i = 0; i < vectors.data.size(); ++i)
    REQUIRE(store.vectors.data[i] == static_cast<double>(static_cast<float>(vectors.data[i])));

  // a second write of the loaded store reproduces the file byte for byte
  const auto path2 = dir + "/b.emb1";
  write_emb1(path2, store.ids, store.vectors);
  REQUIRE(read_bytes(path) == read_bytes(path2));

  std::ofstream bad(dir + "/bad.emb1", std::ios::binary);
  bad << "NOPE";
  bad.close();
  CHECK_THROWS_WITH(read_emb1(dir + "/bad.emb1"),
                    Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("distillation checkpoints round-trip bitwise", "[io]") {
  const auto dir = testutil::temp_dir("ckpt1");
  Rng rng(72);
  DinoConfig cfg;
  cfg.n_outputs = 9;
  cfg.emb_dim = 4;
  cfg.enc_hidden = 5;
  cfg.head_hidden = 6;
  cfg.head_bottleneck = 3;
  DinoState state;
  state.student = DinoNetwork::init(7, cfg, rng);
  state.teacher = DinoNetwork::init(7, cfg, rng);
  state.center.resize(cfg.n_outputs);
  for (auto& x : state.center) x = rng.next_gaussian();
  state.step = 123;
  state.total_steps = 456;

  const auto path = dir + "/dino.dsv1";
  write_dino_checkpoint(path, state);
  auto loaded = read_dino_checkpoint(path);
  CHECK(loaded.step == 123);
  CHECK(loaded.total_steps == 456);
  CHECK(loaded.center == state.center);
  auto a = oracle::collect_params(state.student);
  auto b = oracle::collect_params(loaded.student);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(*a[i] == *b[i]);
  auto c = oracle::collect_params(state.teacher);
  auto d = oracle::collect_params(loaded.teacher);
  for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(*c[i] == *d[i]);

  CHECK_THROWS_WITH(read_stage2_checkpoint(path),
                    Catch::Matchers::ContainsSubstring("kind"));
}

TEST_CASE("classifier checkpoints round-trip and expose their encoder", "[io]") {
  const auto dir = testutil::temp_dir("ckpt2");
  Rng rng(73);
  Stage2Checkpoint ckpt;
  ckpt.encoder = Mlp::init({6, 8, 4}, rng);
  ckpt.head = ClassifierHead::init(11, 4, rng);

  const auto path = dir + "/stage2.dsv1";
  write_stage2_checkpoint(path, ckpt);
  const auto loaded = read_stage2_checkpoint(path);
  REQUIRE(loaded.head.v.data == ckpt.head.v.data);
  auto a = oracle::collect_params(ckpt.encoder);
  auto b = oracle::collect_params(const_cast<Mlp&>(loaded.encoder));
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(*a[i] == *b[i]);

  const auto enc = read_any_encoder(path);
  CHECK(enc.param_count() == ckpt.encoder.param_count());
}

TEST_CASE("manifest and trial files round-trip", "[io]") {
  const auto dir = testutil::temp_dir("textio");
  CorpusSpec spec;
  spec.n_speakers = 3;
  spec.utts_per_speaker = 4;
  spec.dim = 6;
  spec.seed = 74;
  const auto corpus = generate_corpus(spec);

  write_manifest(dir + "/manifest.tsv", corpus);
  const auto truth = read_manifest(dir + "/manifest.tsv");
  REQUIRE(truth.size() == corpus.size());
  for (const auto& u : corpus.utterances) REQUIRE(truth.at(u.id) == u.true_speaker);

  Rng rng(75);
  const auto trials = build_trials(corpus, 6, 6, rng);
  write_trials(dir + "/trials.txt", trials);
  const auto loaded = read_trials(dir + "/trials.txt");
  REQUIRE(loaded.size() == trials.size());
  for (std::size_t i = 0; i < trials.size(); ++i) {
    REQUIRE(loaded[i].id_a == trials[i].id_a);
    REQUIRE(loaded[i].id_b == trials[i].id_b);
    REQUIRE(loaded[i].same_speaker == trials[i].same_speaker);
  }
}

TEST_CASE("ledger CSV round-trips exact loss values", "[io]") {
  const auto dir = testutil::temp_dir("ledger");
  Rng rng(76);
  std::vector<LossLedger> ledgers(2);
  for (std::size_t e = 0; e < 2; ++e) {
    ledgers[e].epoch = e;
    for (std::uint64_t id = 0; id < 20; ++id)
      ledgers[e].record(id, std::exp(rng.next_gaussian()));
  }
  write_ledgers(dir + "/ledger.csv", ledgers);
  const auto loaded = read_ledgers(dir + "/ledger.csv");
  REQUIRE(loaded.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) {
    REQUIRE(loaded.at(e).entries.size() == 20);
    for (const auto& [id, loss] : ledgers[e].entries)
      REQUIRE(loaded.at(e).entries.at(id) == loss);
  }
}

TEST_CASE("gate and histogram exports are well-formed", "[io]") {
  const auto dir = testutil::temp_dir("gatecsv");
  GateState gate;
  gate.tau = 1.5;
  gate.tau_log = std::log(1.5);
  gate.epoch = 4;
  gate.gmm.mean1 = -1.0;
  gate.gmm.mean2 = 1.0;
  std::vector<GateState> gates{gate};
  write_gates(dir + "/gates.csv", gates);
  std::ifstream in(dir + "/gates.csv");
  std::string header, row;
  REQUIRE(std::getline(in, header));
  CHECK(header == "epoch,tau,tau_log,lambda1,mu1,sigma1,lambda2,mu2,sigma2,fallback_flag");
  REQUIRE(std::getline(in, row));
  CHECK(row.find("4,1.5,") == 0);

  Rng rng(77);
  std::vector<double> values;
  for (int i = 0; i < 100; ++i) values.push_back(rng.next_gaussian());
  const auto hist = make_histogram(values, 10);
  write_histogram(dir + "/hist.csv", hist, gate.gmm, values.size());
  std::ifstream hin(dir + "/hist.csv");
  std::string hheader;
  REQUIRE(std::getline(hin, hheader));
  CHECK(hheader == "bin_center,count,density,component1,component2,mixture");
  std::size_t rows = 0;
  while (std::getline(hin, row)) ++rows;
  CHECK(rows == 10);
}
