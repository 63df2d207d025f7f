#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ept/matrix.hpp"
#include "ept/meta_subspace.hpp"

namespace ept {

/// A desk-scale stand-in for one benchmark task.
///
/// Every sequence opens with a marker token equal to the task id (the
/// text-to-text task prefix); the rest is uniform over the non-marker
/// vocabulary. The label is the argmax over classes of a rank-`rank` linear
/// functional of the sequence's mean frozen embedding, plus bounded noise.
/// Tasks of one family share the functional up to `task_noise`.
struct SyntheticTaskSpec {
  std::size_t id = 0;
  std::size_t rank = 1;
  std::size_t classes = 2;
  std::size_t seq_len = 16;
  std::size_t train_size = 0;
  std::size_t eval_size = 0;
  std::size_t family = 0;
};

struct Example {
  std::vector<std::size_t> tokens;
  std::size_t label = 0;
  std::size_t task = 0;
};

struct TaskDataset {
  SyntheticTaskSpec spec;
  Matrix functional;  ///< classes x d_model labelling map U_t V_t
  std::vector<Example> train;
  std::vector<Example> eval;
};

struct TaskGenOptions {
  std::uint64_t seed = 0;
  double task_noise = 0.1;
  double label_noise = 0.05;
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Mean of the embedding rows of a token sequence.
inline std::vector<double> mean_embedding(const Matrix& embedding, const std::vector<std::size_t>& tokens) {
  std::vector<double> m(embedding.cols(), 0.0);
  for (std::size_t t : tokens)
    for (std::size_t c = 0; c < m.size(); ++c) m[c] += embedding(t, c);
  for (double& x : m) x /= static_cast<double>(tokens.size());
  return m;
}

inline std::vector<TaskDataset> make_tasks(const std::vector<SyntheticTaskSpec>& specs, const Matrix& embedding,
                                           const TaskGenOptions& opt) {
  if (specs.empty()) throw ParameterError("at least one task required");
  const std::size_t vocab = embedding.rows(), d = embedding.cols();
  if (vocab <= specs.size() + 1) throw ParameterError("vocabulary too small for task markers");
  for (const auto& s : specs) {
    if (s.classes < 2) throw ParameterError("task " + std::to_string(s.id) + " needs >= 2 classes");
    if (s.rank == 0) throw ParameterError("task " + std::to_string(s.id) + " needs rank >= 1");
    if (s.seq_len < 2) throw ParameterError("sequence length must be >= 2");
    if (s.id >= specs.size()) throw ParameterError("task ids must be 0..T-1");
  }

  std::vector<TaskDataset> out;
  for (const auto& spec : specs) {
    // Family transform first, so every member of a family draws the same base.
    auto fam_rng = detail::stream(opt.seed, 1, spec.family);
    Matrix u(spec.classes, spec.rank), v(spec.rank, d);
    fill_gaussian(u, 1.0, fam_rng);
    fill_gaussian(v, 1.0, fam_rng);
    if (opt.task_noise > 0.0) {
      auto task_rng = detail::stream(opt.seed, 2, spec.id);
      Matrix du(spec.classes, spec.rank), dv(spec.rank, d);
      fill_gaussian(du, opt.task_noise, task_rng);
      fill_gaussian(dv, opt.task_noise, task_rng);
      for (std::size_t i = 0; i < u.size(); ++i) u.data()[i] += du.data()[i];
      for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] += dv.data()[i];
    }
    TaskDataset ds{spec, matmul(u, v), {}, {}};

    auto sample_rng = detail::stream(opt.seed, 3, spec.id);
    std::uniform_int_distribution<std::size_t> tok(specs.size(), vocab - 1);
    std::uniform_real_distribution<double> noise(-1.0, 1.0);
    auto draw = [&](std::vector<Example>& into, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) {
        Example ex;
        ex.task = spec.id;
        ex.tokens.push_back(spec.id);
        for (std::size_t p = 1; p < spec.seq_len; ++p) ex.tokens.push_back(tok(sample_rng));
        const auto scores = matvec(ds.functional, mean_embedding(embedding, ex.tokens));
        std::size_t best = 0;
        double best_v = 0.0;
        for (std::size_t c = 0; c < scores.size(); ++c) {
          const double s = scores[c] + opt.label_noise * noise(sample_rng);
          if (c == 0 || s > best_v) {
            best = c;
            best_v = s;
          }
        }
        ex.label = best;
        into.push_back(std::move(ex));
      }
    };
    draw(ds.train, spec.train_size);
    draw(ds.eval, spec.eval_size);
    out.push_back(std::move(ds));
  }
  return out;
}

/// Draws (task, example index) pairs. Balanced mode picks each task with
/// probability 1/T regardless of dataset size and then an example uniformly
/// with replacement; round-robin cycles the tasks deterministically.
class BalancedSampler {
 public:
  explicit BalancedSampler(std::uint64_t seed = 0, bool round_robin = false)
      : rng_(detail::stream(seed, 4, 0)), round_robin_(round_robin) {}

  std::vector<std::pair<std::size_t, std::size_t>> draw(const std::vector<TaskDataset>& data, std::size_t n) {
    if (data.empty()) throw ContractError("no datasets to sample from");
    for (const auto& d : data)
      if (d.train.empty()) throw ContractError("task " + std::to_string(d.spec.id) + " has an empty dataset");
    std::vector<std::pair<std::size_t, std::size_t>> batch;
    batch.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t task;
      if (round_robin_) {
        task = static_cast<std::size_t>(counter_ % data.size());
      } else {
        task = std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng_);
      }
      ++counter_;
      const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, data[task].train.size() - 1)(rng_);
      batch.emplace_back(task, idx);
    }
    return batch;
  }

  std::string state() const {
    std::ostringstream os;
    os << rng_ << ' ' << counter_ << ' ' << round_robin_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> rng_ >> counter_ >> round_robin_;
    if (!is) throw IntegrityError("corrupt sampler state");
  }

 private:
  std::mt19937_64 rng_;
  std::uint64_t counter_ = 0;
  bool round_robin_ = false;
};

}  // namespace ept
