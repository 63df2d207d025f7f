#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "ept/autodiff.hpp"

namespace ept {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t entries = 0;
};

/// Evaluates a scalar loss at the current parameter values.
using LossValueFn = std::function<double()>;
/// Records a scalar loss on the given tape, watching the parameters it uses.
using LossGraphFn = std::function<Var(Tape&)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Compares analytic gradients with central differences, entry by entry.
/// Each probed entry is restored bitwise before moving on.
inline GradCheckReport finite_diff_check(const LossValueFn& eval, std::span<Parameter* const> params,
                                         const Gradients& analytic, double h = 1e-6) {
  if (!(h > 0.0)) throw ParameterError("finite difference step must be > 0");
  GradCheckReport report;
  for (Parameter* p : params) {
    auto it = analytic.find(p->name);
    if (it == analytic.end()) throw ContractError("no analytic gradient for '" + p->name + "'");
    if (!it->second.same_shape(p->value)) throw ShapeError("gradient shape mismatch for '" + p->name + "'");
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double& slot = p->value.data()[i];
      const double saved = slot;
      slot = saved + h;
      const double up = eval();
      slot = saved - h;
      const double down = eval();
      slot = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("non-finite loss while probing " + p->name + "[" + std::to_string(i) + "]");
      }
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(it->second.data()[i], numeric);
      ++report.entries;
      if (err > report.max_rel_err || report.worst_param.empty()) {
        if (err >= report.max_rel_err) {
          report.max_rel_err = err;
          report.worst_param = p->name;
          report.worst_index = i;
        }
      }
    }
  }
  return report;
}

inline Gradients analytic_gradients(const LossGraphFn& graph) {
  Tape tape;
  Var loss = graph(tape);
  tape.backward(loss);
  return tape.gradients();
}

inline double evaluate(const LossGraphFn& graph) {
  Tape tape;
  return graph(tape).value()(0, 0);
}

/// Convenience wrapper: analytic gradients from the tape, numeric ones from
/// re-evaluating the same graph.
inline GradCheckReport gradient_check(const LossGraphFn& graph, std::span<Parameter* const> params, double h = 1e-6) {
  const Gradients analytic = analytic_gradients(graph);
  return finite_diff_check([&] { return evaluate(graph); }, params, analytic, h);
}

}  // namespace ept
