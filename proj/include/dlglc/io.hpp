#pragma once

// Binary containers and text exports.
//
// EMB1 embedding container: magic "EMB1", u32 LE count, u32 LE dim,
// count*dim little-endian IEEE float32 row-major, then count u64 LE
// utterance ids.
//
// DSV1 checkpoint: magic "DSV1", u32 LE kind, a shape block, then all
// parameter matrices as little-endian float64 in declared order.
//   kind 1 (distillation state): u64 step, u64 total_steps, u32 K,
//     student encoder MLP, student head trunk MLP, student final weight
//     matrix, the same three for the teacher, then the center vector.
//   kind 2 (encoder + classifier): u32 n_classes, encoder MLP, classifier
//     weight matrix.
//   An MLP is u32 n_layers then per layer u32 out, u32 in, out*in weights
//   row-major, out biases. A matrix is u32 rows, u32 cols, rows*cols data.
//
// All text files use '\n' line ends and %.17g doubles so outputs are
// byte-reproducible and round-trip exactly.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlglc/cluster.hpp"
#include "dlglc/datagen.hpp"
#include "dlglc/dino.hpp"
#include "dlglc/evalkit.hpp"
#include "dlglc/lossgate.hpp"
#include "dlglc/matrix.hpp"
#include "dlglc/objective.hpp"

namespace dlglc {

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return in;
}

template <typename T>
void write_le(std::ofstream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& what) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw std::runtime_error("truncated file while reading " + what);
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

inline void expect_magic(std::ifstream& in, const char* magic, const std::string& path) {
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0)
    throw std::runtime_error("bad magic in " + path + " (expected " + magic + ")");
}

}  // namespace detail

// ---- EMB1 ----

inline void write_emb1(const std::string& path, const std::vector<std::uint64_t>& ids,
                       const Matrix& vectors) {
  if (ids.size() != vectors.rows)
    throw std::invalid_argument("write_emb1: ids/vectors size mismatch");
  auto out = detail::open_out(path);
  out.write("EMB1", 4);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(vectors.rows));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(vectors.cols));
  for (double x : vectors.data) detail::write_le<float>(out, static_cast<float>(x));
  for (auto id : ids) detail::write_le<std::uint64_t>(out, id);
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline EmbeddingStore read_emb1(const std::string& path) {
  auto in = detail::open_in(path);
  detail::expect_magic(in, "EMB1", path);
  const auto count = detail::read_le<std::uint32_t>(in, "count");
  const auto dim = detail::read_le<std::uint32_t>(in, "dim");
  EmbeddingStore store;
  store.vectors = Matrix(count, dim);
  for (auto& x : store.vectors.data)
    x = static_cast<double>(detail::read_le<float>(in, "vector data"));
  store.ids.resize(count);
  for (auto& id : store.ids) id = detail::read_le<std::uint64_t>(in, "ids");
  check_finite(store.vectors, "read_emb1(" + path + ")");
  return store;
}

// ---- DSV1 checkpoints ----

namespace detail {

inline void write_matrix(std::ofstream& out, const Matrix& m) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols));
  for (double x : m.data) write_le<double>(out, x);
}

inline Matrix read_matrix(std::ifstream& in) {
  const auto rows = read_le<std::uint32_t>(in, "matrix rows");
  const auto cols = read_le<std::uint32_t>(in, "matrix cols");
  Matrix m(rows, cols);
  for (auto& x : m.data) x = read_le<double>(in, "matrix data");
  return m;
}

inline void write_mlp(std::ofstream& out, const Mlp& mlp) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(mlp.layers.size()));
  for (const auto& layer : mlp.layers) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layer.w.rows));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layer.w.cols));
    for (double x : layer.w.data) write_le<double>(out, x);
    for (double x : layer.b) write_le<double>(out, x);
  }
}

inline Mlp read_mlp(std::ifstream& in) {
  const auto n_layers = read_le<std::uint32_t>(in, "mlp layer count");
  Mlp mlp;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    Layer layer;
    const auto rows = read_le<std::uint32_t>(in, "layer rows");
    const auto cols = read_le<std::uint32_t>(in, "layer cols");
    layer.w = Matrix(rows, cols);
    for (auto& x : layer.w.data) x = read_le<double>(in, "layer weights");
    layer.b.resize(rows);
    for (auto& x : layer.b) x = read_le<double>(in, "layer biases");
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

}  // namespace detail

inline void write_dino_checkpoint(const std::string& path, const DinoState& state) {
  auto out = detail::open_out(path);
  out.write("DSV1", 4);
  detail::write_le<std::uint32_t>(out, 1);
  detail::write_le<std::uint64_t>(out, state.step);
  detail::write_le<std::uint64_t>(out, state.total_steps);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(state.center.size()));
  for (const auto* net : {&state.student, &state.teacher}) {
    detail::write_mlp(out, net->encoder);
    detail::write_mlp(out, net->head.trunk);
    detail::write_matrix(out, net->head.final_v);
  }
  for (double x : state.center) detail::write_le<double>(out, x);
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline DinoState read_dino_checkpoint(const std::string& path) {
  auto in = detail::open_in(path);
  detail::expect_magic(in, "DSV1", path);
  const auto kind = detail::read_le<std::uint32_t>(in, "kind");
  if (kind != 1)
    throw std::runtime_error(path + ": not a distillation checkpoint (kind " +
                             std::to_string(kind) + ")");
  DinoState state;
  state.step = detail::read_le<std::uint64_t>(in, "step");
  state.total_steps = detail::read_le<std::uint64_t>(in, "total_steps");
  const auto k = detail::read_le<std::uint32_t>(in, "K");
  for (auto* net : {&state.student, &state.teacher}) {
    net->encoder = detail::read_mlp(in);
    net->head.trunk = detail::read_mlp(in);
    net->head.final_v = detail::read_matrix(in);
  }
  state.center.resize(k);
  for (auto& x : state.center) x = detail::read_le<double>(in, "center");
  check_finite(state.center, "read_dino_checkpoint center");
  return state;
}

struct Stage2Checkpoint {
  Mlp encoder;
  ClassifierHead head;
};

inline void write_stage2_checkpoint(const std::string& path, const Stage2Checkpoint& ckpt) {
  auto out = detail::open_out(path);
  out.write("DSV1", 4);
  detail::write_le<std::uint32_t>(out, 2);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.head.v.rows));
  detail::write_mlp(out, ckpt.encoder);
  detail::write_matrix(out, ckpt.head.v);
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Stage2Checkpoint read_stage2_checkpoint(const std::string& path) {
  auto in = detail::open_in(path);
  detail::expect_magic(in, "DSV1", path);
  const auto kind = detail::read_le<std::uint32_t>(in, "kind");
  if (kind != 2)
    throw std::runtime_error(path + ": not an encoder+classifier checkpoint (kind " +
                             std::to_string(kind) + ")");
  Stage2Checkpoint ckpt;
  const auto n_classes = detail::read_le<std::uint32_t>(in, "n_classes");
  ckpt.encoder = detail::read_mlp(in);
  ckpt.head.v = detail::read_matrix(in);
  if (ckpt.head.v.rows != n_classes)
    throw std::runtime_error(path + ": classifier shape mismatch");
  return ckpt;
}

// Any encoder stored in a DSV1 file, regardless of kind; distillation
// checkpoints yield the teacher encoder unless use_teacher is false.
inline Mlp read_any_encoder(const std::string& path, bool use_teacher = true) {
  {
    auto in = detail::open_in(path);
    detail::expect_magic(in, "DSV1", path);
    const auto kind = detail::read_le<std::uint32_t>(in, "kind");
    if (kind == 2) {
      in.close();
      return read_stage2_checkpoint(path).encoder;
    }
  }
  auto state = read_dino_checkpoint(path);
  return use_teacher ? std::move(state.teacher.encoder) : std::move(state.student.encoder);
}

// ---- text formats ----

inline void write_manifest(const std::string& path, const Corpus& corpus) {
  auto out = detail::open_out(path);
  for (const auto& u : corpus.utterances)
    out << u.id << '\t' << u.true_speaker << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::map<std::uint64_t, std::uint32_t> read_manifest(const std::string& path) {
  auto in = detail::open_in(path);
  std::map<std::uint64_t, std::uint32_t> truth;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::uint64_t id;
    std::uint32_t speaker;
    if (!(ss >> id >> speaker)) throw std::runtime_error("bad manifest line: " + line);
    truth[id] = speaker;
  }
  return truth;
}

inline void write_trials(const std::string& path, const TrialSet& trials) {
  auto out = detail::open_out(path);
  for (const auto& t : trials)
    out << (t.same_speaker ? 1 : 0) << ' ' << t.id_a << ' ' << t.id_b << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline TrialSet read_trials(const std::string& path) {
  auto in = detail::open_in(path);
  TrialSet trials;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    int label;
    Trial t;
    if (!(ss >> label >> t.id_a >> t.id_b) || (label != 0 && label != 1))
      throw std::runtime_error("bad trial line: " + line);
    t.same_speaker = label == 1;
    trials.push_back(t);
  }
  if (trials.empty()) throw std::runtime_error("empty trial file: " + path);
  return trials;
}

inline void write_scores(const std::string& path, const TrialSet& trials,
                         std::span<const double> scores) {
  if (trials.size() != scores.size())
    throw std::invalid_argument("write_scores: size mismatch");
  auto out = detail::open_out(path);
  for (std::size_t i = 0; i < trials.size(); ++i)
    out << fmt_double(scores[i]) << ' ' << trials[i].id_a << ' ' << trials[i].id_b << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_dino_log(const std::string& path, const std::vector<DinoLogRow>& log) {
  auto out = detail::open_out(path);
  out << "epoch,step,loss_ce,loss_cos,loss_total,lambda\n";
  for (const auto& row : log)
    out << row.epoch << ',' << row.step << ',' << fmt_double(row.loss_ce) << ','
        << fmt_double(row.loss_cos) << ',' << fmt_double(row.loss_total) << ','
        << fmt_double(row.lambda) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_ledgers(const std::string& path, std::span<const LossLedger> ledgers) {
  auto out = detail::open_out(path);
  out << "epoch,utterance_id,loss\n";
  for (const auto& ledger : ledgers)
    for (const auto& [id, loss] : ledger.entries)
      out << ledger.epoch << ',' << id << ',' << fmt_double(loss) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

// epoch -> ledger, from the CSV written by write_ledgers
inline std::map<std::size_t, LossLedger> read_ledgers(const std::string& path) {
  auto in = detail::open_in(path);
  std::map<std::size_t, LossLedger> ledgers;
  std::string line;
  if (!std::getline(in, line) || line != "epoch,utterance_id,loss")
    throw std::runtime_error("bad ledger header in " + path);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t epoch;
    std::uint64_t id;
    double loss;
    if (std::sscanf(line.c_str(), "%zu,%lu,%lf", &epoch, &id, &loss) != 3)
      throw std::runtime_error("bad ledger line: " + line);
    auto& ledger = ledgers[epoch];
    ledger.epoch = epoch;
    ledger.record(id, loss);
  }
  if (ledgers.empty()) throw std::runtime_error("empty ledger file: " + path);
  return ledgers;
}

inline void write_gates(const std::string& path, std::span<const GateState> gates) {
  auto out = detail::open_out(path);
  out << "epoch,tau,tau_log,lambda1,mu1,sigma1,lambda2,mu2,sigma2,fallback_flag\n";
  for (const auto& g : gates)
    out << g.epoch << ',' << fmt_double(g.tau) << ',' << fmt_double(g.tau_log) << ','
        << fmt_double(g.gmm.weight1) << ',' << fmt_double(g.gmm.mean1) << ','
        << fmt_double(g.gmm.sigma1) << ',' << fmt_double(g.gmm.weight2) << ','
        << fmt_double(g.gmm.mean2) << ',' << fmt_double(g.gmm.sigma2) << ','
        << (g.fallback ? 1 : 0) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_assignment(const std::string& path, const ClusterAssignment& assignment) {
  auto out = detail::open_out(path);
  out << "utterance_id,pseudo_label\n";
  for (std::size_t i = 0; i < assignment.ids.size(); ++i)
    out << assignment.ids[i] << ',' << assignment.labels[i] << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

// Histogram of log losses with the fitted component curves evaluated at bin
// centers; density is count normalized to integrate to one.
inline void write_histogram(const std::string& path, const Histogram& hist,
                            const GmmParams& gmm, std::size_t n_values) {
  auto out = detail::open_out(path);
  out << "bin_center,count,density,component1,component2,mixture\n";
  const double width = hist.edges[1] - hist.edges[0];
  for (std::size_t b = 0; b < hist.counts.size(); ++b) {
    const double center = 0.5 * (hist.edges[b] + hist.edges[b + 1]);
    const double density =
        static_cast<double>(hist.counts[b]) / (static_cast<double>(n_values) * width);
    out << fmt_double(center) << ',' << hist.counts[b] << ',' << fmt_double(density) << ','
        << fmt_double(gmm.component1(center)) << ',' << fmt_double(gmm.component2(center))
        << ',' << fmt_double(gmm.mixture(center)) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace dlglc
