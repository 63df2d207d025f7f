#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ept/tooling/checkpoint.hpp"

namespace ept {

enum class MergePolicy { per_task_mean, fixed };

inline MergePolicy merge_policy_from_string(const std::string& s) {
  if (s == "per_task_mean") return MergePolicy::per_task_mean;
  if (s == "fixed") return MergePolicy::fixed;
  throw ParameterError("unknown merge policy '" + s + "' (expected per_task_mean or fixed)");
}

/// Name of a merged dense weight: the layer name, suffixed "@task<t>" when
/// the policy produces one weight per task.
inline std::string merged_name(const std::string& layer, std::optional<std::size_t> task) {
  return task ? layer + "@task" + std::to_string(*task) : layer;
}

/// Folds every adapter into its base weight. per_task_mean uses the mean gate
/// vector each task saw in each layer (routing stats required); fixed applies
/// one gate vector everywhere. The result holds dense weights only: the
/// backbone's frozen tensors plus the merged sub-layers.
inline CheckpointData export_merged(const TrainerState& st, const std::map<std::string, RoutingStats>& routing,
                                    MergePolicy policy, const std::vector<double>& fixed_gates = {}) {
  CheckpointData out;
  nlohmann::json gate_log = nlohmann::json::object();
  for (const auto& [name, m] : st.model.frozen_weights()) out.tensors.emplace(name, m);
  if (st.config.head_trainable) out.tensors.emplace("head", st.model.head().value);
  for (const auto& [name, layer] : st.model.adapted_layers()) {
    out.tensors.erase(name);
    if (policy == MergePolicy::fixed) {
      for (double g : fixed_gates)
        if (!std::isfinite(g)) throw ParameterError("fixed gates must be finite");
      out.tensors.emplace(merged_name(name, std::nullopt), layer->merged_weight(layer->fixed_decision(fixed_gates)));
      gate_log[name] = fixed_gates;
      continue;
    }
    auto it = routing.find(name);
    if (it == routing.end() || it->second.empty()) throw ContractError("no routing statistics for layer " + name);
    for (std::size_t t = 0; t < st.config.num_tasks(); ++t) {
      const auto g = it->second.mean_gates(t);
      out.tensors.emplace(merged_name(name, t), layer->merged_weight(layer->fixed_decision(g)));
      gate_log[name].push_back(g);
    }
  }
  out.meta = {{"kind", "merged"},
              {"policy", policy == MergePolicy::fixed ? "fixed" : "per_task_mean"},
              {"config", to_json(st.config)},
              {"source_step", st.step},
              {"gates", gate_log}};
  return out;
}

/// Per-layer gate vectors the adapter path needs to reproduce a merged
/// checkpoint: layer -> one vector per task.
inline std::map<std::string, std::vector<std::vector<double>>> merged_gates(const CheckpointData& merged) {
  std::map<std::string, std::vector<std::vector<double>>> out;
  const std::size_t tasks = config_from_json(merged.meta.at("config")).num_tasks();
  for (const auto& [layer, g] : merged.meta.at("gates").items()) {
    if (merged.meta.at("policy") == "fixed") {
      out[layer] = std::vector<std::vector<double>>(tasks, g.get<std::vector<double>>());
    } else {
      out[layer] = g.get<std::vector<std::vector<double>>>();
    }
  }
  return out;
}

/// Dense weights a backbone forward should use for `task`.
inline std::map<std::string, Matrix> dense_weights_for_task(const CheckpointData& merged, const ToyBackbone& model,
                                                            std::size_t task) {
  const bool per_task = merged.meta.at("policy") == "per_task_mean";
  std::map<std::string, Matrix> out;
  for (const auto& [name, layer] : model.adapted_layers()) {
    const auto key = merged_name(name, per_task ? std::optional<std::size_t>(task) : std::nullopt);
    auto it = merged.tensors.find(key);
    if (it == merged.tensors.end()) throw ManifestError("merged checkpoint is missing tensor '" + key + "'");
    out.emplace(name, it->second);
  }
  return out;
}

/// Rebuilds the backbone from the stored config and checks that the stored
/// frozen tensors match it bitwise.
inline std::unique_ptr<TrainerState> state_for_merged(const CheckpointData& merged) {
  if (merged.meta.value("kind", "") != "merged") throw ManifestError("not a merged checkpoint");
  auto st = std::make_unique<TrainerState>(config_from_json(merged.meta.at("config")));
  if (st->config.head_trainable) {
    auto it = merged.tensors.find("head");
    if (it == merged.tensors.end()) throw ManifestError("merged checkpoint is missing tensor 'head'");
    if (!it->second.same_shape(st->model.head().value)) throw ManifestError("tensor 'head' has the wrong shape");
    st->model.head().value = it->second;
  }
  for (const auto& [name, m] : st->model.frozen_weights()) {
    bool adapted = false;
    for (const auto& [lname, layer] : st->model.adapted_layers()) adapted = adapted || lname == name;
    if (adapted) continue;
    auto it = merged.tensors.find(name);
    if (it == merged.tensors.end()) throw ManifestError("merged checkpoint is missing tensor '" + name + "'");
    if (!(it->second == m)) throw IntegrityError("frozen tensor '" + name + "' does not match the rebuilt backbone");
  }
  return st;
}

/// Per-task accuracy using only the merged dense weights.
inline EvalResult evaluate_merged(const CheckpointData& merged, const std::vector<TaskDataset>& data) {
  const auto st = state_for_merged(merged);
  EvalResult r;
  for (std::size_t t = 0; t < data.size(); ++t) {
    const auto dense = dense_weights_for_task(merged, st->model, t);
    ToyBackbone::ForwardOptions opt;
    opt.dense_weights = &dense;
    r.accuracy.push_back(evaluate_task(*st, data, t, opt));
  }
  return r;
}

}  // namespace ept
