#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ept/gating_router.hpp"
#include "ept/pyramid_experts.hpp"

namespace ept {

enum class ScalingMode { slice_height_over_T, kernel_over_T, none };

struct EptLayerOptions {
  std::vector<std::size_t> scales{2, 2, 4, 4, 6, 6, 8, 8};
  std::size_t rank = 8;
  double gaussian_std = 0.02;
  bool ab_init = true;
  std::size_t top_k = 2;
  bool use_top_k = true;  ///< false: dense softmax over every expert
  double tau_gate = 1.0;
  bool pruner = true;     ///< false: every expert expands the full seed, crop only
  ScalingMode scaling = ScalingMode::slice_height_over_T;
  RoutingConditioning conditioning = RoutingConditioning::token_only;
  std::size_t task_dim = 0;  ///< d_e, needed for task-conditioned routing
  std::size_t tasks = 1;     ///< T in the d_t / T factor
};

/// The routing outcome for one token.
struct GatingDecision {
  std::vector<std::size_t> selected;
  std::vector<double> gates;    ///< length N, zero outside `selected`
  std::vector<double> scaling;  ///< per-expert d_t / T factor
};

/// Per-expert factor applied to the expert's output.
inline double scaling_factor(ScalingMode mode, const DeconvExpert& e, std::size_t d_out, std::size_t tasks) {
  if (tasks == 0) throw ParameterError("task count must be >= 1");
  switch (mode) {
    case ScalingMode::slice_height_over_T:
      return static_cast<double>(ceil_div(d_out, e.scale)) / static_cast<double>(tasks);
    case ScalingMode::kernel_over_T:
      return static_cast<double>(e.scale) / static_cast<double>(tasks);
    case ScalingMode::none:
      return 1.0;
  }
  return 1.0;
}

/// A frozen linear map W_0 with a pyramid-of-experts adapter.
class EptLayer {
 public:
  EptLayer(Matrix w0, const EptLayerOptions& opt, std::uint64_t seed, const std::string& prefix = "")
      : w0_(std::move(w0)), opt_(opt) {
    if (opt.tasks == 0) throw ParameterError("task count must be >= 1");
    const std::size_t s_min = *std::min_element(opt.scales.begin(), opt.scales.end());
    if (s_min == 0) throw ParameterError("expert scale must be >= 1");
    // The smallest kernel needs the largest seed.
    subspace_ = init_subspace(ceil_div(d_out(), s_min), ceil_div(d_in(), s_min), opt.rank, opt.gaussian_std, seed,
                              opt.ab_init, prefix);
    bank_ = init_bank(opt.scales, d_out(), d_in(), prefix);
    router_ = init_router(bank_.size(), d_in(), opt.top_k, opt.tau_gate, prefix);
    router_.dense = !opt.use_top_k;
    router_.conditioning = opt.conditioning;
    if (opt.conditioning == RoutingConditioning::token_plus_task) {
      if (opt.task_dim == 0) throw ParameterError("task-conditioned routing needs task_dim >= 1");
      router_.task_proj = Parameter{prefix + "task_proj", Matrix(d_in(), opt.task_dim)};
    }
  }

  const Matrix& base_weight() const { return w0_; }
  std::size_t d_out() const { return w0_.rows(); }
  std::size_t d_in() const { return w0_.cols(); }
  std::size_t tasks() const { return opt_.tasks; }
  const EptLayerOptions& options() const { return opt_; }

  MetaSubspace& subspace() { return subspace_; }
  const MetaSubspace& subspace() const { return subspace_; }
  ExpertBank& bank() { return bank_; }
  const ExpertBank& bank() const { return bank_; }
  RouterState& router() { return router_; }
  const RouterState& router() const { return router_; }

  double scaling_factor(std::size_t i) const {
    return ept::scaling_factor(opt_.scaling, bank_.experts.at(i), d_out(), opt_.tasks);
  }

  Matrix expert_weight(std::size_t i) const {
    return project_expert(subspace_, bank_.experts.at(i), d_out(), d_in(), opt_.pruner);
  }

  std::vector<Matrix> expert_weights() const {
    std::vector<Matrix> out;
    for (std::size_t i = 0; i < bank_.size(); ++i) out.push_back(expert_weight(i));
    return out;
  }

  GatingDecision decide(std::span<const double> x, std::optional<std::span<const double>> task_vec = std::nullopt) const {
    const auto r = route_logits(router_, x, task_vec);
    GatingDecision d;
    d.selected = select_experts(router_, r);
    d.gates = gate_scores(r, d.selected, router_.tau);
    for (std::size_t i = 0; i < bank_.size(); ++i) d.scaling.push_back(scaling_factor(i));
    return d;
  }

  /// Decision from an externally fixed gate vector; the support is its nonzero entries.
  GatingDecision fixed_decision(std::span<const double> gates) const {
    if (gates.size() != bank_.size()) throw ShapeError("fixed gate vector length does not match expert count");
    GatingDecision d;
    d.gates.assign(gates.begin(), gates.end());
    for (std::size_t i = 0; i < gates.size(); ++i)
      if (gates[i] != 0.0) d.selected.push_back(i);
    for (std::size_t i = 0; i < bank_.size(); ++i) d.scaling.push_back(scaling_factor(i));
    return d;
  }

  /// y = W_0 x + sum_{i in P} G_i * scale_i * (W_i x), experts applied one at a time.
  std::vector<double> apply(std::span<const double> x, const GatingDecision& d) const {
    if (x.size() != d_in()) throw ShapeError("layer input of length " + std::to_string(x.size()) + " for " + w0_.shape());
    std::vector<double> y = matvec(w0_, x);
    for (std::size_t i : d.selected) {
      const double f = d.gates[i] * d.scaling[i];
      const auto wx = matvec(expert_weight(i), x);
      for (std::size_t j = 0; j < y.size(); ++j) y[j] += wx[j] * f;
    }
    return y;
  }

  std::pair<std::vector<double>, GatingDecision> forward(
      std::span<const double> x, std::optional<std::span<const double>> task_vec = std::nullopt) const {
    GatingDecision d = decide(x, task_vec);
    auto y = apply(x, d);
    return {std::move(y), std::move(d)};
  }

  /// W = W_0 + sum_{i in P} G_i * scale_i * W_i, the re-parameterised dense weight.
  Matrix merged_weight(const GatingDecision& d) const {
    Matrix w = w0_;
    for (std::size_t i : d.selected) {
      const double f = d.gates[i] * d.scaling[i];
      const Matrix wi = expert_weight(i);
      for (std::size_t j = 0; j < w.size(); ++j) w.data()[j] += wi.data()[j] * f;
    }
    return w;
  }

  /// B, A, every kernel, the router weight and (if present) the task projection.
  std::vector<Parameter*> trainable_parameters() {
    std::vector<Parameter*> out{&subspace_.B, &subspace_.A};
    for (auto& e : bank_.experts) out.push_back(&e.kernel);
    out.push_back(&router_.weight);
    if (router_.task_proj) out.push_back(&*router_.task_proj);
    return out;
  }

  std::vector<const Parameter*> trainable_parameters() const {
    auto ps = const_cast<EptLayer*>(this)->trainable_parameters();
    return {ps.begin(), ps.end()};
  }

  /// Batched forward over the rows of x.
  ///
  /// token_tasks gives the task of every row. task_table (T x d_e) is required
  /// for task-conditioned routing. When fixed_gates is set, row r uses
  /// fixed_gates[token_tasks[r]] instead of the router. Routing outcomes are
  /// accumulated into stats when provided.
  Var forward(Tape& tape, Var x, const std::vector<std::size_t>& token_tasks, std::optional<Var> task_table = std::nullopt,
              RoutingStats* stats = nullptr, const std::vector<std::vector<double>>* fixed_gates = nullptr) const {
    const Matrix& xv = x.value();
    if (xv.cols() != d_in() || token_tasks.size() != xv.rows()) {
      throw ShapeError("layer input " + xv.shape() + " incompatible with weight " + w0_.shape());
    }
    const std::size_t n = xv.rows();
    const std::size_t experts = bank_.size();
    Var y = ad::matmul_nt(x, tape.constant(w0_));

    Var gates;
    std::vector<std::vector<std::size_t>> selected(n);
    if (fixed_gates) {
      Matrix g(n, experts);
      for (std::size_t r = 0; r < n; ++r) {
        const auto& row = fixed_gates->at(token_tasks[r]);
        if (row.size() != experts) throw ShapeError("fixed gate vector length does not match expert count");
        for (std::size_t i = 0; i < experts; ++i) {
          g(r, i) = row[i];
          if (row[i] != 0.0) selected[r].push_back(i);
        }
      }
      gates = tape.constant(std::move(g));
    } else {
      Var route_in = x;
      if (router_.conditioning == RoutingConditioning::token_plus_task) {
        if (!task_table) throw ContractError("task-conditioned routing needs the task embedding table");
        Var e = ad::gather_rows(*task_table, token_tasks);
        route_in = ad::add(x, ad::matmul_nt(e, tape.watch(*router_.task_proj)));
      }
      Var logits = ad::matmul_nt(route_in, tape.watch(router_.weight));
      for (std::size_t r = 0; r < n; ++r) selected[r] = select_experts(router_, logits.value().row_span(r));
      gates = ad::masked_softmax_rows(logits, selected, router_.tau);
    }

    if (stats) {
      for (std::size_t r = 0; r < n; ++r) stats->record(token_tasks[r], selected[r], gates.value().row_span(r));
    }

    for (std::size_t i = 0; i < experts; ++i) {
      bool used = false;
      for (std::size_t r = 0; r < n && !used; ++r) used = gates.value()(r, i) != 0.0;
      if (!used) continue;  // an all-zero gate column adds exact zeros
      Var wi = project_expert(tape, subspace_, bank_.experts[i], d_out(), d_in(), opt_.pruner);
      Var yi = ad::matmul_nt(x, wi);
      y = ad::add(y, ad::scale_rows_by_gate(yi, gates, i, scaling_factor(i)));
    }
    return y;
  }

 private:
  Matrix w0_;
  EptLayerOptions opt_;
  MetaSubspace subspace_;
  ExpertBank bank_;
  RouterState router_;
};

}  // namespace ept
