#pragma once

// Two-stage orchestration: self-distillation pretraining, then repeated
// {cluster -> pseudo-label -> gated classifier training -> re-extract}
// iterations with metrics logged each round.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlglc/cluster.hpp"
#include "dlglc/datagen.hpp"
#include "dlglc/dino.hpp"
#include "dlglc/evalkit.hpp"
#include "dlglc/io.hpp"
#include "dlglc/lossgate.hpp"
#include "dlglc/objective.hpp"

#include "json.hpp"

namespace dlglc {

enum class GateMode { none, fixed, dynamic, dynamic_lc };

inline std::string to_string(GateMode mode) {
  switch (mode) {
    case GateMode::none: return "none";
    case GateMode::fixed: return "fixed";
    case GateMode::dynamic: return "dynamic";
    case GateMode::dynamic_lc: return "dynamic+lc";
  }
  throw std::logic_error("bad gate mode");
}

inline GateMode gate_mode_from_string(const std::string& s) {
  if (s == "none") return GateMode::none;
  if (s == "fixed") return GateMode::fixed;
  if (s == "dynamic") return GateMode::dynamic;
  if (s == "dynamic+lc") return GateMode::dynamic_lc;
  throw std::invalid_argument("unknown gate mode: " + s +
                              " (expected none|fixed|dynamic|dynamic+lc)");
}

struct Stage2Config {
  std::size_t epochs = 12;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  std::size_t warmup_epochs = 1;  // ungated epochs while the ledger fills
  GateMode gate_mode = GateMode::dynamic_lc;
  double fixed_tau = 1.0;
  ObjectiveConfig objective;

  void validate() const {
    objective.validate();
    if (epochs < 1 || batch_size < 1)
      throw std::invalid_argument("Stage2Config: epochs and batch_size must be >= 1");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("Stage2Config: learning_rate must be > 0");
    if ((gate_mode == GateMode::dynamic || gate_mode == GateMode::dynamic_lc) &&
        warmup_epochs < 1)
      throw std::invalid_argument("Stage2Config: dynamic gating needs warmup_epochs >= 1");
    if (gate_mode == GateMode::fixed && !(fixed_tau > 0.0))
      throw std::invalid_argument("Stage2Config: fixed_tau must be > 0");
  }
};

struct Stage2TrainResult {
  Mlp encoder;
  ClassifierHead head;
  std::vector<LossLedger> ledgers;        // one per epoch
  std::vector<GateState> gates;           // fitted at epoch boundaries
  std::vector<double> tau_used;           // per epoch; +inf when ungated
  std::vector<double> retained_fraction;  // per epoch
  std::vector<std::size_t> gate_failure_epochs;
};

// Classifier training on pseudo labels with the configured gate mode.
// Epochs below warmup run ungated while the ledger fills; afterwards the
// gate refreshes at every epoch boundary from the previous epoch's losses.
inline Stage2TrainResult train_stage2(const FeatureSet& data,
                                      const std::vector<std::uint32_t>& pseudo_labels,
                                      Mlp encoder, std::size_t n_classes,
                                      const Stage2Config& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = data.features.rows;
  if (n == 0) throw std::invalid_argument("train_stage2: empty corpus");
  if (pseudo_labels.size() != n)
    throw std::invalid_argument("train_stage2: labels/features size mismatch");
  for (auto l : pseudo_labels)
    if (l >= n_classes) throw std::invalid_argument("train_stage2: label out of range");

  Rng rng(seed);
  Stage2TrainResult result;
  result.encoder = std::move(encoder);
  result.head = ClassifierHead::init(n_classes, result.encoder.output_dim(), rng);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const double inf = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double tau = inf;
    bool lc = false;
    if (epoch >= cfg.warmup_epochs) {
      switch (cfg.gate_mode) {
        case GateMode::none:
          break;
        case GateMode::fixed:
          tau = cfg.fixed_tau;
          break;
        case GateMode::dynamic:
        case GateMode::dynamic_lc:
          try {
            auto gate = refresh_gate(result.ledgers.back());
            tau = gate.tau;
            lc = cfg.gate_mode == GateMode::dynamic_lc;
            result.gates.push_back(gate);
          } catch (const std::runtime_error&) {
            // unusable loss history (too small or degenerate): stay ungated
            result.gate_failure_epochs.push_back(epoch);
          }
          break;
      }
    }
    result.tau_used.push_back(tau);

    LossLedger ledger;
    ledger.epoch = epoch;
    std::size_t retained_total = 0;

    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      std::sort(batch.begin(), batch.end());

      std::vector<Stage2Item> items;
      std::vector<MlpCache> caches(batch.size());
      items.reserve(batch.size());
      for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const std::size_t idx = batch[bi];
        Stage2Item item;
        item.label = pseudo_labels[idx];
        std::vector<double> aug(data.dim);
        const auto clean = data.features.row(idx);
        for (std::size_t d = 0; d < data.dim; ++d)
          aug[d] = clean[d] + data.augment_noise * rng.next_gaussian();
        item.embedding = mlp_forward(result.encoder, aug, &caches[bi]);
        if (lc) {
          // constant clean-view target: no gradients flow through it
          const auto clean_emb = mlp_forward(result.encoder, clean);
          CosineCache cc;
          cosine_layer_forward(clean_emb, result.head, cc);
          item.clean_probs = classifier_probs(cc.cosines, cfg.objective.scale);
        }
        items.push_back(std::move(item));
      }

      auto loss = total_stage2_loss(items, result.head, tau, lc, cfg.objective);
      if (!std::isfinite(loss.total))
        throw std::runtime_error("train_stage2: diverged (non-finite loss) in epoch " +
                                 std::to_string(epoch));
      retained_total += loss.retained;
      for (std::size_t bi = 0; bi < batch.size(); ++bi)
        ledger.record(data.ids[batch[bi]], loss.per_sample_loss[bi]);

      Mlp enc_grad = Mlp::zeros_like(result.encoder);
      for (std::size_t bi = 0; bi < batch.size(); ++bi)
        mlp_backward(result.encoder, caches[bi], loss.d_embedding[bi], enc_grad);
      mlp_axpy(result.encoder, -cfg.learning_rate, enc_grad);
      for (std::size_t j = 0; j < result.head.v.data.size(); ++j)
        result.head.v.data[j] -= cfg.learning_rate * loss.d_v.data[j];
    }

    result.ledgers.push_back(std::move(ledger));
    result.retained_fraction.push_back(static_cast<double>(retained_total) /
                                       static_cast<double>(n));
  }
  return result;
}

struct PipelineConfig {
  CorpusSpec corpus;
  DinoConfig dino;
  Stage2Config stage2;
  std::size_t clusters = 25;
  std::size_t kmeans_restarts = 10;
  std::size_t n_iterations = 5;
  std::size_t trials_pos = 500;
  std::size_t trials_neg = 500;
  double dcf_p_target = 0.05;
  double dcf_c_miss = 1.0;
  double dcf_c_fa = 1.0;
  bool warm_start = true;     // carry the encoder across iterations
  bool widen_final = false;   // final iteration: cold-start a wider encoder
  double widen_factor = 2.0;
  std::uint64_t seed = 1;

  void validate() const {
    corpus.validate();
    dino.validate();
    stage2.validate();
    if (clusters < 2) throw std::invalid_argument("PipelineConfig: clusters must be >= 2");
    if (n_iterations < 1)
      throw std::invalid_argument("PipelineConfig: iterations must be >= 1");
    if (kmeans_restarts < 1)
      throw std::invalid_argument("PipelineConfig: kmeans_restarts must be >= 1");
    if (trials_pos < 1 || trials_neg < 1)
      throw std::invalid_argument("PipelineConfig: trial counts must be >= 1");
    if (!(dcf_p_target > 0.0 && dcf_p_target < 1.0))
      throw std::invalid_argument("PipelineConfig: dcf_p_target must be in (0,1)");
    if (widen_final && !(widen_factor > 0.0))
      throw std::invalid_argument("PipelineConfig: widen_factor must be > 0");
  }
};

// Sub-stream tags for the master seed.
namespace seed_tag {
inline constexpr std::uint64_t corpus = 1;
inline constexpr std::uint64_t trials = 2;
inline constexpr std::uint64_t stage1 = 3;
inline constexpr std::uint64_t iteration_base = 100;
}  // namespace seed_tag

struct GateRecord {
  std::size_t epoch = 0;
  double tau = 0.0;
  double tau_log = 0.0;
  bool fallback = false;
};

struct IterationReport {
  std::size_t iteration = 0;  // 1-based
  double purity = 0.0;
  double nmi = 0.0;
  double eer = 0.0;
  double min_dcf = 0.0;
  std::vector<double> retained_fraction;  // per epoch
  std::vector<GateRecord> gates;
  std::vector<std::size_t> gate_failure_epochs;
  bool failed = false;
  std::string failure;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["iteration"] = iteration;
    j["purity"] = purity;
    j["nmi"] = nmi;
    j["eer"] = eer;
    j["min_dcf"] = min_dcf;
    j["retained_fraction"] = retained_fraction;
    j["gates"] = nlohmann::json::array();
    for (const auto& g : gates)
      j["gates"].push_back({{"epoch", g.epoch},
                            {"tau", g.tau},
                            {"tau_log", g.tau_log},
                            {"fallback", g.fallback}});
    j["gate_failure_epochs"] = gate_failure_epochs;
    j["failed"] = failed;
    j["failure"] = failure;
    return j;
  }

  static IterationReport from_json(const nlohmann::json& j) {
    IterationReport r;
    r.iteration = j.at("iteration").get<std::size_t>();
    r.purity = j.at("purity").get<double>();
    r.nmi = j.at("nmi").get<double>();
    r.eer = j.at("eer").get<double>();
    r.min_dcf = j.at("min_dcf").get<double>();
    r.retained_fraction = j.at("retained_fraction").get<std::vector<double>>();
    for (const auto& g : j.at("gates")) {
      GateRecord rec;
      rec.epoch = g.at("epoch").get<std::size_t>();
      rec.tau = g.at("tau").get<double>();
      rec.tau_log = g.at("tau_log").get<double>();
      rec.fallback = g.at("fallback").get<bool>();
      r.gates.push_back(rec);
    }
    r.gate_failure_epochs = j.at("gate_failure_epochs").get<std::vector<std::size_t>>();
    r.failed = j.at("failed").get<bool>();
    r.failure = j.at("failure").get<std::string>();
    return r;
  }

  bool operator==(const IterationReport&) const = default;
};

inline void write_reports_csv(const std::string& path,
                              std::span<const IterationReport> reports) {
  auto out = detail::open_out(path);
  out << "iteration,purity,nmi,eer,min_dcf,final_tau,final_retained_fraction,failed\n";
  for (const auto& r : reports) {
    const double final_tau = r.gates.empty() ? 0.0 : r.gates.back().tau;
    const double final_ret =
        r.retained_fraction.empty() ? 1.0 : r.retained_fraction.back();
    out << r.iteration << ',' << fmt_double(r.purity) << ',' << fmt_double(r.nmi) << ','
        << fmt_double(r.eer) << ',' << fmt_double(r.min_dcf) << ','
        << fmt_double(final_tau) << ',' << fmt_double(final_ret) << ','
        << (r.failed ? 1 : 0) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct PipelineState {
  Corpus corpus;  // ground truth: metrics only
  FeatureSet features;
  TrialSet trials;
  Mlp encoder;       // current extraction encoder
  Matrix embeddings; // aligned with features.ids
};

struct EvalSummary {
  double eer = 0.0;
  double min_dcf = 0.0;
};

inline EvalSummary evaluate_embeddings(const Matrix& embeddings,
                                       const std::vector<std::uint64_t>& ids,
                                       const TrialSet& trials, const PipelineConfig& cfg) {
  EmbeddingStore store;
  store.ids = ids;
  store.vectors = embeddings;
  const auto scores = score_trials(store, trials);
  std::vector<std::uint8_t> labels(trials.size());
  for (std::size_t i = 0; i < trials.size(); ++i) labels[i] = trials[i].same_speaker ? 1 : 0;
  EvalSummary out;
  out.eer = eer(scores, labels).eer;
  out.min_dcf = min_dcf(scores, labels, cfg.dcf_p_target, cfg.dcf_c_miss, cfg.dcf_c_fa);
  return out;
}

// Stage I: distillation pretraining plus embedding extraction.
inline DinoTrainResult run_stage1(PipelineState& ps, const PipelineConfig& cfg,
                                  const std::string& out_dir = "") {
  auto result = train_dino(ps.features, cfg.dino, derive_seed(cfg.seed, seed_tag::stage1));
  ps.encoder = extraction_encoder(result.state, cfg.dino);
  ps.embeddings = extract_embeddings(ps.encoder, ps.features.features);
  if (!out_dir.empty()) {
    write_dino_checkpoint(out_dir + "/dino_checkpoint.dsv1", result.state);
    write_dino_log(out_dir + "/dino_loss.csv", result.log);
    write_emb1(out_dir + "/embeddings_iter0.emb1", ps.features.ids, ps.embeddings);
  }
  return result;
}

// One pseudo-label iteration: k-means on the current embeddings, a fresh
// classifier head, gated training, then re-extraction with the new encoder.
inline IterationReport run_iteration(PipelineState& ps, std::size_t iteration,
                                     const PipelineConfig& cfg,
                                     const std::string& out_dir = "") {
  const std::uint64_t iter_seed =
      derive_seed(cfg.seed, seed_tag::iteration_base + iteration);
  IterationReport report;
  report.iteration = iteration;

  Rng km_rng(derive_seed(iter_seed, 0));
  KmeansOptions km_opts;
  km_opts.n_init = cfg.kmeans_restarts;
  auto assignment = kmeans(ps.embeddings, ps.features.ids, cfg.clusters, km_rng, km_opts);

  const auto truth_map = [&] {
    std::map<std::uint64_t, std::uint32_t> m;
    for (const auto& u : ps.corpus.utterances) m[u.id] = u.true_speaker;
    return m;
  }();
  const auto pseudo_map = assignment.as_map();
  report.purity = purity(pseudo_map, truth_map);
  report.nmi = nmi(pseudo_map, truth_map);

  Mlp encoder_init;
  const bool widen = cfg.widen_final && iteration == cfg.n_iterations;
  if (widen) {
    DinoConfig wide = cfg.dino;
    wide.enc_hidden = static_cast<std::size_t>(
        std::lround(static_cast<double>(cfg.dino.enc_hidden) * cfg.widen_factor));
    Rng init_rng(derive_seed(iter_seed, 2));
    encoder_init = DinoNetwork::init(ps.features.dim, wide, init_rng).encoder;
  } else if (cfg.warm_start) {
    encoder_init = ps.encoder;
  } else {
    Rng init_rng(derive_seed(iter_seed, 2));
    encoder_init = DinoNetwork::init(ps.features.dim, cfg.dino, init_rng).encoder;
  }

  auto trained = train_stage2(ps.features, assignment.labels, std::move(encoder_init),
                              cfg.clusters, cfg.stage2, derive_seed(iter_seed, 1));

  ps.encoder = std::move(trained.encoder);
  ps.embeddings = extract_embeddings(ps.encoder, ps.features.features);
  const auto metrics = evaluate_embeddings(ps.embeddings, ps.features.ids, ps.trials, cfg);
  report.eer = metrics.eer;
  report.min_dcf = metrics.min_dcf;
  report.retained_fraction = trained.retained_fraction;
  for (const auto& g : trained.gates)
    report.gates.push_back({g.epoch, g.tau, g.tau_log, g.fallback});
  report.gate_failure_epochs = trained.gate_failure_epochs;

  if (!out_dir.empty()) {
    const std::string tag = "_iter" + std::to_string(iteration);
    write_assignment(out_dir + "/assignment" + tag + ".csv", assignment);
    write_ledgers(out_dir + "/ledger" + tag + ".csv", trained.ledgers);
    write_gates(out_dir + "/gates" + tag + ".csv", trained.gates);
    write_stage2_checkpoint(out_dir + "/checkpoint" + tag + ".dsv1",
                            {ps.encoder, trained.head});
    write_emb1(out_dir + "/embeddings" + tag + ".emb1", ps.features.ids, ps.embeddings);
  }
  return report;
}

struct PipelineResult {
  std::vector<IterationReport> reports;
  PipelineState state;
};

// Full run: corpus, trials, Stage I, then n_iterations pseudo-label rounds.
// With an output directory every artifact is persisted; on an abort the
// reports collected so far are written with a failure marker.
inline PipelineResult run_pipeline(const PipelineConfig& cfg_in,
                                   const std::string& out_dir = "") {
  PipelineConfig cfg = cfg_in;
  cfg.validate();
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  PipelineResult result;
  PipelineState& ps = result.state;
  CorpusSpec corpus_spec = cfg.corpus;
  corpus_spec.seed = derive_seed(cfg.seed, seed_tag::corpus);
  ps.corpus = generate_corpus(corpus_spec);
  ps.features = FeatureSet::from_corpus(ps.corpus);
  Rng trial_rng(derive_seed(cfg.seed, seed_tag::trials));
  ps.trials = build_trials(ps.corpus, cfg.trials_pos, cfg.trials_neg, trial_rng);

  if (!out_dir.empty()) {
    write_emb1(out_dir + "/corpus.emb1", ps.features.ids, ps.features.features);
    write_manifest(out_dir + "/manifest.tsv", ps.corpus);
    write_trials(out_dir + "/trials.txt", ps.trials);
  }

  auto persist = [&] {
    if (out_dir.empty()) return;
    write_reports_csv(out_dir + "/reports.csv", result.reports);
    nlohmann::json summary;
    summary["seed"] = cfg.seed;
    summary["gate_mode"] = to_string(cfg.stage2.gate_mode);
    summary["iterations"] = nlohmann::json::array();
    for (const auto& r : result.reports) summary["iterations"].push_back(r.to_json());
    auto out = detail::open_out(out_dir + "/summary.json");
    out << summary.dump(2) << '\n';
  };

  try {
    run_stage1(ps, cfg, out_dir);
    for (std::size_t i = 1; i <= cfg.n_iterations; ++i)
      result.reports.push_back(run_iteration(ps, i, cfg, out_dir));
  } catch (const std::exception& e) {
    IterationReport failed;
    failed.iteration = result.reports.size() + 1;
    failed.failed = true;
    failed.failure = e.what();
    result.reports.push_back(failed);
    persist();
    throw;
  }
  persist();
  return result;
}

}  // namespace dlglc
