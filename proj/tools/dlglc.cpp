// Command-line front end for the two-stage pseudo-label training pipeline.
//
// Exit codes: 0 success, 1 validation error (bad flag, bad config), 2
// runtime failure. Every command accepts --config, --seed, --out-dir and
// repeatable --set key=value overrides; named flags win over --set, which
// wins over the config file. Reruns with identical inputs and seeds produce
// byte-identical output files.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dlglc/config.hpp"
#include "dlglc/io.hpp"
#include "dlglc/pipeline.hpp"

namespace {

using namespace dlglc;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_out_dir) {
  cmd->add_option("--config", opts.config_path, "configuration file (key=value lines)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", opts.overrides,
                  "override any config key, e.g. --set stage2_epochs=8 (repeatable)");
  cmd->add_option("--seed", opts.seed, "master seed (default 1)");
  auto* out = cmd->add_option("--out-dir", opts.out_dir, "output directory");
  if (needs_out_dir) out->required();
}

PipelineConfig build_config(const CommonOpts& opts) {
  PipelineConfig cfg;
  if (!opts.config_path.empty()) cfg = load_config(opts.config_path);
  for (const auto& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got: " + kv);
    apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed) cfg.seed = *opts.seed;
  return cfg;
}

void ensure_out_dir(const std::string& dir) {
  std::filesystem::create_directories(dir);
}

FeatureSet feature_set_from_emb1(const std::string& path, double augment_noise) {
  const auto store = read_emb1(path);
  FeatureSet fs;
  fs.dim = store.vectors.cols;
  fs.augment_noise = augment_noise;
  fs.ids = store.ids;
  fs.features = store.vectors;
  return fs;
}

Corpus corpus_from_files(const std::string& emb_path, const std::string& manifest_path,
                         const CorpusSpec& spec) {
  const auto store = read_emb1(emb_path);
  const auto truth = read_manifest(manifest_path);
  Corpus corpus;
  corpus.spec = spec;
  corpus.spec.dim = store.vectors.cols;
  for (std::size_t i = 0; i < store.ids.size(); ++i) {
    auto it = truth.find(store.ids[i]);
    if (it == truth.end())
      throw std::runtime_error("manifest is missing utterance id " +
                               std::to_string(store.ids[i]));
    Utterance u;
    u.id = store.ids[i];
    u.true_speaker = it->second;
    const auto row = store.vectors.row(i);
    u.features.assign(row.begin(), row.end());
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

int run_datagen(const CommonOpts& opts) {
  auto cfg = build_config(opts);
  cfg.validate();
  ensure_out_dir(opts.out_dir);
  CorpusSpec spec = cfg.corpus;
  spec.seed = derive_seed(cfg.seed, seed_tag::corpus);
  const auto corpus = generate_corpus(spec);
  const auto fs = FeatureSet::from_corpus(corpus);
  write_emb1(opts.out_dir + "/corpus.emb1", fs.ids, fs.features);
  write_manifest(opts.out_dir + "/manifest.tsv", corpus);
  Rng trial_rng(derive_seed(cfg.seed, seed_tag::trials));
  const auto trials = build_trials(corpus, cfg.trials_pos, cfg.trials_neg, trial_rng);
  write_trials(opts.out_dir + "/trials.txt", trials);
  std::cout << "wrote corpus.emb1 manifest.tsv trials.txt (" << corpus.size()
            << " utterances, " << trials.size() << " trials)\n";
  return 0;
}

int run_train_dino(const CommonOpts& opts, const std::string& corpus_path) {
  auto cfg = build_config(opts);
  cfg.validate();
  ensure_out_dir(opts.out_dir);
  PipelineState ps;
  ps.features = feature_set_from_emb1(corpus_path, cfg.corpus.augment_noise);
  run_stage1(ps, cfg, opts.out_dir);
  std::cout << "wrote dino_checkpoint.dsv1 dino_loss.csv embeddings_iter0.emb1\n";
  return 0;
}

int run_extract(const CommonOpts& opts, const std::string& checkpoint_path,
                const std::string& corpus_path, const std::string& net) {
  auto cfg = build_config(opts);
  ensure_out_dir(opts.out_dir);
  if (net != "teacher" && net != "student")
    throw std::invalid_argument("--net expects teacher or student, got " + net);
  const auto encoder = read_any_encoder(checkpoint_path, net == "teacher");
  const auto fs = feature_set_from_emb1(corpus_path, cfg.corpus.augment_noise);
  const auto embeddings = extract_embeddings(encoder, fs.features);
  write_emb1(opts.out_dir + "/embeddings.emb1", fs.ids, embeddings);
  std::cout << "wrote embeddings.emb1 (" << embeddings.rows << " x " << embeddings.cols
            << ")\n";
  return 0;
}

int run_cluster(const CommonOpts& opts, const std::string& emb_path) {
  auto cfg = build_config(opts);
  ensure_out_dir(opts.out_dir);
  const auto store = read_emb1(emb_path);
  Rng rng(cfg.seed);
  KmeansOptions km;
  km.n_init = cfg.kmeans_restarts;
  const auto assignment = kmeans(store.vectors, store.ids, cfg.clusters, rng, km);
  write_assignment(opts.out_dir + "/assignment.csv", assignment);
  std::cout << "wrote assignment.csv (k=" << cfg.clusters
            << ", inertia=" << fmt_double(assignment.inertia) << ")\n";
  return 0;
}

int run_train_iter(const CommonOpts& opts, const std::string& corpus_path,
                   const std::string& manifest_path, const std::string& emb_path,
                   const std::string& trials_path, const std::string& checkpoint_path,
                   std::size_t iteration) {
  auto cfg = build_config(opts);
  cfg.validate();
  ensure_out_dir(opts.out_dir);

  PipelineState ps;
  ps.corpus = corpus_from_files(corpus_path, manifest_path, cfg.corpus);
  ps.features = FeatureSet::from_corpus(ps.corpus);
  ps.trials = read_trials(trials_path);
  const auto store = read_emb1(emb_path);
  if (store.ids != ps.features.ids)
    throw std::runtime_error("embedding ids do not match the corpus");
  ps.embeddings = store.vectors;
  if (!checkpoint_path.empty()) {
    ps.encoder = read_any_encoder(checkpoint_path, cfg.dino.extract_with_teacher);
  } else {
    cfg.warm_start = false;  // nothing to warm-start from
  }

  const auto report = run_iteration(ps, iteration, cfg, opts.out_dir);
  {
    auto out = detail::open_out(opts.out_dir + "/report_iter" + std::to_string(iteration) +
                                ".json");
    out << report.to_json().dump(2) << '\n';
  }
  std::cout << "iteration " << iteration << ": purity=" << fmt_double(report.purity)
            << " nmi=" << fmt_double(report.nmi) << " EER=" << fmt_double(report.eer)
            << " minDCF=" << fmt_double(report.min_dcf) << '\n';
  return 0;
}

int run_full_pipeline(const CommonOpts& opts) {
  auto cfg = build_config(opts);
  cfg.validate();
  const auto result = run_pipeline(cfg, opts.out_dir);
  for (const auto& r : result.reports)
    std::cout << "iteration " << r.iteration << ": purity=" << fmt_double(r.purity)
              << " nmi=" << fmt_double(r.nmi) << " EER=" << fmt_double(r.eer)
              << " minDCF=" << fmt_double(r.min_dcf) << '\n';
  return 0;
}

int run_eval(const CommonOpts& opts, const std::string& emb_path,
             const std::string& trials_path, const std::string& scores_out) {
  auto cfg = build_config(opts);
  const auto store = read_emb1(emb_path);
  const auto trials = read_trials(trials_path);
  const auto scores = score_trials(store, trials);
  std::vector<std::uint8_t> labels(trials.size());
  for (std::size_t i = 0; i < trials.size(); ++i)
    labels[i] = trials[i].same_speaker ? 1 : 0;
  const auto e = eer(scores, labels);
  const double dcf =
      min_dcf(scores, labels, cfg.dcf_p_target, cfg.dcf_c_miss, cfg.dcf_c_fa);
  std::cout << "EER=" << fmt_double(e.eer) << '\n';
  std::cout << "minDCF=" << fmt_double(dcf) << '\n';
  if (!scores_out.empty()) {
    if (!opts.out_dir.empty()) ensure_out_dir(opts.out_dir);
    write_scores(scores_out, trials, scores);
  }
  return 0;
}

int run_export_hist(const CommonOpts& opts, const std::string& ledger_path,
                    std::size_t bins, std::optional<std::size_t> epoch) {
  build_config(opts);  // validates --set/--config even though no keys are used
  ensure_out_dir(opts.out_dir);
  const auto ledgers = read_ledgers(ledger_path);
  const std::size_t chosen = epoch ? *epoch : ledgers.rbegin()->first;
  auto it = ledgers.find(chosen);
  if (it == ledgers.end())
    throw std::runtime_error("ledger file has no epoch " + std::to_string(chosen));
  const auto logs = it->second.log_losses();
  const auto fit = fit_gmm2(logs);
  const auto hist = make_histogram(logs, bins);
  write_histogram(opts.out_dir + "/histogram.csv", hist, fit.params, logs.size());
  const auto thr = solve_threshold(fit.params);
  std::cout << "wrote histogram.csv (epoch " << chosen << ", " << bins
            << " bins, tau=" << fmt_double(std::exp(thr.tau_log)) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dlglc: self-supervised speaker-embedding training with a dynamic "
               "loss-gate and label correction"};
  app.require_subcommand(1);

  CommonOpts opts;
  int rc = 0;

  auto* datagen = app.add_subcommand("datagen", "generate a synthetic corpus with trials");
  add_common(datagen, opts, true);
  datagen->callback([&] { rc = run_datagen(opts); });

  auto* train_dino_cmd =
      app.add_subcommand("train-dino", "stage I: self-distillation pretraining");
  add_common(train_dino_cmd, opts, true);
  std::string corpus_path;
  train_dino_cmd->add_option("--corpus", corpus_path, "corpus EMB1 file")
      ->required()
      ->check(CLI::ExistingFile);
  train_dino_cmd->callback([&] { rc = run_train_dino(opts, corpus_path); });

  auto* extract = app.add_subcommand("extract", "extract embeddings with a checkpoint");
  add_common(extract, opts, true);
  std::string ckpt_path, net = "teacher";
  extract->add_option("--checkpoint", ckpt_path, "DSV1 checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  extract->add_option("--corpus", corpus_path, "corpus EMB1 file")
      ->required()
      ->check(CLI::ExistingFile);
  extract->add_option("--net", net, "teacher|student (distillation checkpoints only)");
  extract->callback([&] { rc = run_extract(opts, ckpt_path, corpus_path, net); });

  auto* cluster_cmd = app.add_subcommand("cluster", "k-means pseudo-labels from embeddings");
  add_common(cluster_cmd, opts, true);
  std::string emb_path;
  cluster_cmd->add_option("--emb", emb_path, "embeddings EMB1 file")
      ->required()
      ->check(CLI::ExistingFile);
  std::size_t clusters_flag = 0;
  auto* clusters_opt =
      cluster_cmd->add_option("--clusters", clusters_flag, "cluster count override");
  cluster_cmd->callback([&] {
    if (*clusters_opt) opts.overrides.push_back("clusters=" + std::to_string(clusters_flag));
    rc = run_cluster(opts, emb_path);
  });

  auto* train_iter =
      app.add_subcommand("train-iter", "one pseudo-label iteration (cluster + train)");
  add_common(train_iter, opts, true);
  std::string manifest_path, trials_path, warm_ckpt;
  std::size_t iteration = 1;
  std::string gate_mode_flag;
  train_iter->add_option("--corpus", corpus_path, "corpus EMB1 file")
      ->required()
      ->check(CLI::ExistingFile);
  train_iter->add_option("--manifest", manifest_path, "id<TAB>speaker manifest")
      ->required()
      ->check(CLI::ExistingFile);
  train_iter->add_option("--emb", emb_path, "current embeddings EMB1 file")
      ->required()
      ->check(CLI::ExistingFile);
  train_iter->add_option("--trials", trials_path, "trial list for scoring")
      ->required()
      ->check(CLI::ExistingFile);
  train_iter->add_option("--checkpoint", warm_ckpt, "encoder warm-start checkpoint")
      ->check(CLI::ExistingFile);
  train_iter->add_option("--iteration", iteration, "iteration index (seeds and filenames)");
  auto* ti_gate = train_iter->add_option("--gate-mode", gate_mode_flag,
                                         "none|fixed|dynamic|dynamic+lc");
  train_iter->callback([&] {
    if (*ti_gate) opts.overrides.push_back("gate_mode=" + gate_mode_flag);
    rc = run_train_iter(opts, corpus_path, manifest_path, emb_path, trials_path, warm_ckpt,
                        iteration);
  });

  auto* pipeline_cmd = app.add_subcommand("pipeline", "full two-stage pipeline");
  add_common(pipeline_cmd, opts, true);
  std::size_t iterations_flag = 0;
  std::string pl_gate_mode;
  auto* pl_iters =
      pipeline_cmd->add_option("--iterations", iterations_flag, "iteration count override");
  auto* pl_gate = pipeline_cmd->add_option("--gate-mode", pl_gate_mode,
                                           "none|fixed|dynamic|dynamic+lc");
  std::size_t pl_clusters = 0;
  auto* pl_clusters_opt =
      pipeline_cmd->add_option("--clusters", pl_clusters, "cluster count override");
  pipeline_cmd->callback([&] {
    if (*pl_iters) opts.overrides.push_back("iterations=" + std::to_string(iterations_flag));
    if (*pl_gate) opts.overrides.push_back("gate_mode=" + pl_gate_mode);
    if (*pl_clusters_opt)
      opts.overrides.push_back("clusters=" + std::to_string(pl_clusters));
    rc = run_full_pipeline(opts);
  });

  auto* eval_cmd = app.add_subcommand("eval", "score trials and print EER / minDCF");
  add_common(eval_cmd, opts, false);
  std::string scores_out;
  eval_cmd->add_option("--emb", emb_path, "embeddings EMB1 file")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--trials", trials_path, "trial list")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--scores-out", scores_out, "also write per-trial scores here");
  eval_cmd->callback([&] { rc = run_eval(opts, emb_path, trials_path, scores_out); });

  auto* hist_cmd =
      app.add_subcommand("export-hist", "histogram + fitted mixture from a loss ledger");
  add_common(hist_cmd, opts, true);
  std::string ledger_path;
  std::size_t bins = 80;
  std::optional<std::size_t> epoch;
  hist_cmd->add_option("--ledger", ledger_path, "ledger CSV (epoch,utterance_id,loss)")
      ->required()
      ->check(CLI::ExistingFile);
  hist_cmd->add_option("--bins", bins, "histogram bin count");
  hist_cmd->add_option("--epoch", epoch, "epoch to plot (default: last)");
  hist_cmd->callback([&] { rc = run_export_hist(opts, ledger_path, bins, epoch); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return rc;
}
