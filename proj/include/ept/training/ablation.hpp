#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "ept/tooling/crc.hpp"
#include "ept/training/trainer.hpp"

namespace ept {

/// Which axes of the ablation grid to vary. Axes not listed stay at the
/// base config's value.
struct AblationAxes {
  bool ab_init = false;
  bool top_k = false;
  bool alp = false;
};

inline AblationAxes parse_ablation_axes(const std::vector<std::string>& names) {
  AblationAxes a;
  if (names.empty()) throw ParameterError("at least one ablation toggle required");
  for (const auto& n : names) {
    if (n == "ab_init") a.ab_init = true;
    else if (n == "top_k") a.top_k = true;
    else if (n == "alp") a.alp = true;
    else throw ParameterError("unknown ablation toggle '" + n + "' (expected ab_init, top_k, alp)");
  }
  return a;
}

struct AblationRow {
  bool ab_init = true;
  bool top_k = true;
  bool alp = true;
  std::vector<double> accuracy;
  double loss_start = 0.0;
  double loss_end = 0.0;
  bool subspace_zero_at_start = false;  ///< every Z_meta = B A exactly zero before step 0
  bool every_expert_gated = false;      ///< every token gave every expert a nonzero gate
  std::uint32_t log_crc32 = 0;
  std::string log;
};

inline std::vector<TrainConfig> ablation_grid(const TrainConfig& base, const AblationAxes& axes) {
  std::vector<TrainConfig> out;
  // Index bit set means "axis off"; 0 is the all-on row.
  const int n = (axes.ab_init ? 1 : 0) + (axes.top_k ? 1 : 0) + (axes.alp ? 1 : 0);
  for (int mask = 0; mask < (1 << n); ++mask) {
    TrainConfig c = base;
    int bit = 0;
    auto take = [&](bool enabled, bool& field) {
      if (!enabled) return;
      if (mask & (1 << bit)) field = false;
      ++bit;
    };
    take(axes.ab_init, c.ab_init);
    take(axes.top_k, c.use_top_k);
    take(axes.alp, c.alp);
    out.push_back(c);
  }
  return out;
}

inline bool subspaces_zero(const ToyBackbone& model) {
  for (const auto& [name, layer] : model.adapted_layers())
    if (!all_zero(full_seed(layer->subspace()))) return false;
  return true;
}

inline AblationRow run_ablation_cell(const TrainConfig& cfg, std::size_t smooth_window = 20) {
  TrainerState st(cfg);
  const auto data = build_datasets(cfg, st.model);
  AblationRow row;
  row.ab_init = cfg.ab_init;
  row.top_k = cfg.use_top_k;
  row.alp = cfg.alp;
  row.subspace_zero_at_start = subspaces_zero(st.model);
  train_loop(st, data);
  row.accuracy = evaluate(st, data).accuracy;
  row.loss_start = window_loss(st.log, smooth_window, false);
  row.loss_end = window_loss(st.log, smooth_window, true);
  const RoutingStats agg = aggregate_routing(collect_routing(st, data));
  row.every_expert_gated = agg.zero_selected_gates() == 0;
  for (std::size_t t = 0; t < agg.tasks(); ++t)
    for (std::size_t e = 0; e < agg.experts(); ++e)
      if (agg.count(t, e) != agg.tokens(t)) row.every_expert_gated = false;
  row.log = join_log(st.log);
  row.log_crc32 = crc32_of(row.log);
  return row;
}

/// One training run per toggle combination, the all-on row first.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const AblationAxes& axes) {
  std::vector<AblationRow> rows;
  for (const auto& cfg : ablation_grid(base, axes)) rows.push_back(run_ablation_cell(cfg));
  return rows;
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    double mean = 0.0;
    for (double a : r.accuracy) mean += a;
    if (!r.accuracy.empty()) mean /= static_cast<double>(r.accuracy.size());
    out.push_back({{"ab_init", r.ab_init},
                   {"top_k", r.top_k},
                   {"alp", r.alp},
                   {"accuracy", r.accuracy},
                   {"mean_accuracy", mean},
                   {"loss_start", r.loss_start},
                   {"loss_end", r.loss_end},
                   {"subspace_zero_at_start", r.subspace_zero_at_start},
                   {"every_expert_gated", r.every_expert_gated},
                   {"log_crc32", r.log_crc32}});
  }
  return out;
}

}  // namespace ept
