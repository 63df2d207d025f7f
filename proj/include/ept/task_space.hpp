#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ept/autodiff.hpp"
#include "ept/meta_subspace.hpp"
#include "ept/pca.hpp"

namespace ept {

/// Learnable task prototypes E (T x d_e) and the optional pooling map
/// (d_e x d_model) used when d_e differs from the backbone width.
struct TaskEmbeddingTable {
  Parameter embeddings;
  std::optional<Parameter> pool_proj;
  double tau = 0.05;

  std::size_t tasks() const { return embeddings.value.rows(); }
  std::size_t dim() const { return embeddings.value.cols(); }
};

struct PooledFeature {
  std::vector<double> f;
  std::size_t task = 0;
};

/// E ~ N(0, 1/d_e); a pooling map ~ N(0, 1/d_model) only when d_e != d_model.
inline TaskEmbeddingTable init_task_table(std::size_t tasks, std::size_t d_e, std::size_t d_model, double tau,
                                          std::uint64_t seed) {
  if (tasks == 0 || d_e == 0 || d_model == 0) throw ParameterError("task table dimensions must be >= 1");
  if (!(tau > 0.0)) throw ParameterError("contrastive temperature must be > 0");
  std::mt19937_64 rng(seed);
  TaskEmbeddingTable t{{"task_embeddings", Matrix(tasks, d_e)}, std::nullopt, tau};
  fill_gaussian(t.embeddings.value, 1.0 / std::sqrt(static_cast<double>(d_e)), rng);
  if (d_e != d_model) {
    t.pool_proj = Parameter{"pool_proj", Matrix(d_e, d_model)};
    fill_gaussian(t.pool_proj->value, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  }
  return t;
}

/// Mean over sequence positions, then the pooling map if the table has one.
inline std::vector<double> pool_features(const Matrix& hidden, const TaskEmbeddingTable* table = nullptr) {
  std::vector<double> mean(hidden.cols(), 0.0);
  for (std::size_t c = 0; c < hidden.cols(); ++c) {
    double acc = 0.0;
    for (std::size_t s = 0; s < hidden.rows(); ++s) acc += hidden(s, c);
    mean[c] = acc / static_cast<double>(hidden.rows());
  }
  if (table && table->pool_proj) return matvec(table->pool_proj->value, mean);
  return mean;
}

/// Tape version over a batch: (B*S) x d_model hidden rows -> B x d_e features.
inline Var pool_features(Var hidden, std::size_t seq_len, const TaskEmbeddingTable& table) {
  Var pooled = ad::mean_pool(hidden, seq_len);
  if (table.pool_proj) return ad::matmul_nt(pooled, hidden.tape().watch(*table.pool_proj));
  return pooled;
}

/// Cosine similarity.
inline double similarity(std::span<const double> f, std::span<const double> e) {
  if (f.size() != e.size()) throw ShapeError("similarity of vectors with different lengths");
  const double nf = norm(f), ne = norm(e);
  if (nf == 0.0 || ne == 0.0) throw DegenerateInputError("cosine similarity of a zero-norm vector");
  return dot(f, e) / (nf * ne);
}

/// Mean over samples of -log softmax_k(sim(f_i, e_k) / tau)[t_i].
inline double contrastive_loss(const std::vector<PooledFeature>& feats, const TaskEmbeddingTable& table) {
  if (feats.empty()) throw ContractError("contrastive loss over an empty batch");
  const Matrix& e = table.embeddings.value;
  const double inv_tau = 1.0 / table.tau;
  double total = 0.0;
  std::vector<double> s(e.rows());
  for (const auto& p : feats) {
    if (p.task >= e.rows()) throw ContractError("feature task id " + std::to_string(p.task) + " out of range");
    for (std::size_t k = 0; k < e.rows(); ++k) s[k] = similarity(p.f, e.row_span(k)) * inv_tau;
    total += cross_entropy(s, p.task);
  }
  return total / static_cast<double>(feats.size());
}

inline Var contrastive_loss(Var features, const std::vector<std::size_t>& tasks, const TaskEmbeddingTable& table) {
  Tape& tape = features.tape();
  Var sims = ad::cosine_similarity_matrix(features, tape.watch(table.embeddings));
  return ad::cross_entropy_mean(ad::scale(sims, 1.0 / table.tau), tasks);
}

struct EmbeddingExport {
  Matrix raw;                  ///< T x d_e
  std::optional<Matrix> pca;   ///< T x 2, present when T >= 3
  std::string notice;
};

inline EmbeddingExport embedding_export(const TaskEmbeddingTable& table) {
  EmbeddingExport out{table.embeddings.value, std::nullopt, ""};
  if (table.tasks() < 3) {
    out.notice = "PCA omitted: needs at least 3 tasks, have " + std::to_string(table.tasks());
  } else if (table.dim() < 2) {
    out.notice = "PCA omitted: embedding dimension is 1";
  } else {
    out.pca = pca2d(table.embeddings.value).coords;
  }
  return out;
}

inline std::string embeddings_csv(const Matrix& raw) {
  std::ostringstream os;
  os.precision(17);
  os << "task";
  for (std::size_t c = 0; c < raw.cols(); ++c) os << ",dim_" << c;
  os << '\n';
  for (std::size_t t = 0; t < raw.rows(); ++t) {
    os << t;
    for (std::size_t c = 0; c < raw.cols(); ++c) os << ',' << raw(t, c);
    os << '\n';
  }
  return os.str();
}

inline std::string pca_csv(const Matrix& coords) {
  std::ostringstream os;
  os.precision(17);
  os << "task,pc1,pc2\n";
  for (std::size_t t = 0; t < coords.rows(); ++t) os << t << ',' << coords(t, 0) << ',' << coords(t, 1) << '\n';
  return os.str();
}

}  // namespace ept
