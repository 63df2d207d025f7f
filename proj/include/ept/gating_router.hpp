#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ept/autodiff.hpp"

namespace ept {

enum class RoutingConditioning { token_only, token_plus_task };

/// Per-layer router. Logits are W_r * x, or W_r * (x + P_e * e_t) with task
/// conditioning enabled.
struct RouterState {
  Parameter weight;                      ///< N x d_in
  std::optional<Parameter> task_proj;    ///< d_in x d_e, task conditioning only
  std::size_t k = 2;
  double tau = 1.0;
  RoutingConditioning conditioning = RoutingConditioning::token_only;
  bool dense = false;                    ///< softmax over all N experts instead of the top-k

  std::size_t experts() const { return weight.value.rows(); }
  std::size_t selected_per_token() const { return dense ? experts() : k; }
};

inline RouterState init_router(std::size_t experts, std::size_t d_in, std::size_t k, double tau,
                               const std::string& prefix = "") {
  if (experts == 0) throw ParameterError("router needs at least one expert");
  if (k == 0 || k > experts) {
    throw ParameterError("top-k of " + std::to_string(k) + " invalid for " + std::to_string(experts) + " experts");
  }
  if (!(tau > 0.0)) throw ParameterError("gating temperature must be > 0");
  RouterState rs;
  rs.weight = {prefix + "router", Matrix(experts, d_in)};
  rs.k = k;
  rs.tau = tau;
  return rs;
}

inline std::vector<double> route_logits(const RouterState& rs, std::span<const double> x,
                                        std::optional<std::span<const double>> task_vec = std::nullopt) {
  if (x.size() != rs.weight.value.cols()) {
    throw ShapeError("router input of length " + std::to_string(x.size()) + " for weight " + rs.weight.value.shape());
  }
  if (rs.conditioning == RoutingConditioning::token_only) return matvec(rs.weight.value, x);
  if (!task_vec) throw ContractError("task-conditioned routing needs a task embedding");
  const auto shift = matvec(rs.task_proj->value, *task_vec);
  std::vector<double> xs(x.begin(), x.end());
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += shift[i];
  return matvec(rs.weight.value, xs);
}

/// Indices of the k largest logits, ties to the lowest index, ascending.
inline std::vector<std::size_t> select_topk(std::span<const double> r, std::size_t k) {
  if (k == 0 || k > r.size()) {
    throw ParameterError("top-k of " + std::to_string(k) + " invalid for " + std::to_string(r.size()) + " logits");
  }
  check_finite(r, "router logits");
  std::vector<std::size_t> idx(r.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return r[a] > r[b] || (r[a] == r[b] && a < b); });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Temperature softmax over the selected logits; exact zeros elsewhere.
inline std::vector<double> gate_scores(std::span<const double> r, const std::vector<std::size_t>& selected, double tau) {
  if (selected.empty()) throw ContractError("gate_scores needs a non-empty selection");
  std::vector<double> sub;
  sub.reserve(selected.size());
  for (std::size_t i : selected) sub.push_back(r[i]);
  const auto p = softmax_temp(sub, tau);
  std::vector<double> g(r.size(), 0.0);
  for (std::size_t j = 0; j < selected.size(); ++j) g[selected[j]] = p[j];
  return g;
}

inline std::vector<std::size_t> select_experts(const RouterState& rs, std::span<const double> r) {
  if (rs.dense) {
    std::vector<std::size_t> all(r.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  return select_topk(r, rs.k);
}

/// Selection counts and gate mass per (task, expert).
class RoutingStats {
 public:
  RoutingStats() = default;
  RoutingStats(std::size_t tasks, std::size_t experts, std::size_t per_token)
      : tasks_(tasks), experts_(experts), per_token_(per_token), counts_(tasks * experts, 0),
        mass_(tasks * experts, 0.0), tokens_(tasks, 0) {}

  void record(std::size_t task, const std::vector<std::size_t>& selected, std::span<const double> gates) {
    if (task >= tasks_) throw ContractError("unknown task id " + std::to_string(task));
    if (gates.size() != experts_) throw ShapeError("gate vector length does not match expert count");
    for (std::size_t i : selected) {
      ++counts_[task * experts_ + i];
      if (gates[i] == 0.0) ++zero_selected_;
    }
    for (std::size_t i = 0; i < experts_; ++i) mass_[task * experts_ + i] += gates[i];
    ++tokens_[task];
  }

  /// Adds another accumulator with the same shape (e.g. another layer).
  void merge(const RoutingStats& o) {
    if (o.tasks_ != tasks_ || o.experts_ != experts_ || o.per_token_ != per_token_) {
      throw ContractError("cannot merge routing stats of different shapes");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      counts_[i] += o.counts_[i];
      mass_[i] += o.mass_[i];
    }
    for (std::size_t t = 0; t < tasks_; ++t) tokens_[t] += o.tokens_[t];
    zero_selected_ += o.zero_selected_;
  }

  std::size_t tasks() const { return tasks_; }
  std::size_t experts() const { return experts_; }
  std::size_t per_token() const { return per_token_; }
  std::uint64_t count(std::size_t task, std::size_t expert) const { return counts_[task * experts_ + expert]; }
  double mass(std::size_t task, std::size_t expert) const { return mass_[task * experts_ + expert]; }
  std::uint64_t tokens(std::size_t task) const { return tokens_[task]; }
  /// Selected experts whose gate underflowed to exactly zero.
  std::uint64_t zero_selected_gates() const { return zero_selected_; }
  bool empty() const {
    return std::all_of(tokens_.begin(), tokens_.end(), [](std::uint64_t t) { return t == 0; });
  }

  /// Mean gate vector observed for a task.
  std::vector<double> mean_gates(std::size_t task) const {
    if (task >= tasks_ || tokens_[task] == 0) throw ContractError("no routing observed for task " + std::to_string(task));
    std::vector<double> g(experts_);
    for (std::size_t i = 0; i < experts_; ++i) g[i] = mass(task, i) / static_cast<double>(tokens_[task]);
    return g;
  }

  friend bool operator==(const RoutingStats&, const RoutingStats&) = default;

  // Raw access for persistence.
  const std::vector<std::uint64_t>& raw_counts() const { return counts_; }
  const std::vector<double>& raw_mass() const { return mass_; }
  const std::vector<std::uint64_t>& raw_tokens() const { return tokens_; }
  static RoutingStats from_raw(std::size_t tasks, std::size_t experts, std::size_t per_token,
                               std::vector<std::uint64_t> counts, std::vector<double> mass,
                               std::vector<std::uint64_t> tokens, std::uint64_t zero_selected = 0) {
    RoutingStats s(tasks, experts, per_token);
    if (counts.size() != s.counts_.size() || mass.size() != s.mass_.size() || tokens.size() != s.tokens_.size()) {
      throw ContractError("routing stats arrays do not match their declared shape");
    }
    s.counts_ = std::move(counts);
    s.mass_ = std::move(mass);
    s.tokens_ = std::move(tokens);
    s.zero_selected_ = zero_selected;
    return s;
  }

 private:
  std::size_t tasks_ = 0;
  std::size_t experts_ = 0;
  std::size_t per_token_ = 0;
  std::vector<std::uint64_t> counts_;
  std::vector<double> mass_;
  std::vector<std::uint64_t> tokens_;
  std::uint64_t zero_selected_ = 0;
};

struct RoutingRow {
  std::size_t task = 0;
  std::size_t expert = 0;
  std::uint64_t count = 0;
  double fraction = 0.0;
};

/// fraction = count / (tokens * selected-per-token), rows ordered by (task, expert).
/// Tasks that saw no tokens are skipped.
inline std::vector<RoutingRow> routing_report(const RoutingStats& stats) {
  std::vector<RoutingRow> rows;
  for (std::size_t t = 0; t < stats.tasks(); ++t) {
    if (stats.tokens(t) == 0) continue;
    const double denom = static_cast<double>(stats.tokens(t)) * static_cast<double>(stats.per_token());
    for (std::size_t i = 0; i < stats.experts(); ++i) {
      rows.push_back({t, i, stats.count(t, i), static_cast<double>(stats.count(t, i)) / denom});
    }
  }
  return rows;
}

inline std::string routing_csv(const std::vector<RoutingRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "task,expert,count,fraction\n";
  for (const auto& r : rows) os << r.task << ',' << r.expert << ',' << r.count << ',' << r.fraction << '\n';
  return os.str();
}

}  // namespace ept
