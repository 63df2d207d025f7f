#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "ept/ept_layer.hpp"

namespace ept {

struct TaskSpecConfig {
  std::size_t family = 0;
  std::size_t rank = 1;  ///< rank of the labelling functional (shared within a family)
  std::size_t train_size = 512;
  std::size_t eval_size = 128;
};

/// One self-describing run configuration. Hyperparameter names follow the
/// usual adapter fine-tuning vocabulary; defaults are the published settings,
/// while the toy backbone dimensions are desk-scale.
struct TrainConfig {
  std::uint64_t seed = 0;

  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  std::size_t max_seq_len = 16;
  std::size_t warmup_steps = 500;
  std::size_t lora_rank = 8;
  double lora_alpha = 32.0;  // recorded only; no role in the adapter equations
  std::vector<std::string> target_modules{"q", "k", "v", "o", "up", "down"};
  std::size_t top_k = 2;
  std::vector<std::size_t> expert_kernel_sizes{2, 2, 4, 4, 6, 6, 8, 8};
  double lambda_con = 0.1;
  double tau_con = 0.05;
  double tau_gate = 1.0;
  ScalingMode scaling_mode = ScalingMode::slice_height_over_T;

  std::size_t max_steps = 0;  ///< 0: epochs * steps_per_epoch
  double gaussian_std = 0.02;
  bool ab_init = true;
  bool use_top_k = true;
  bool alp = true;
  RoutingConditioning routing_conditioning = RoutingConditioning::token_only;
  std::string contrastive_source = "adapted";  ///< or "frozen": pool pre-adapter states
  std::string sampling = "balanced";           ///< or "round_robin"
  std::size_t checkpoint_every = 0;

  std::size_t vocab_size = 64;
  std::size_t d_model = 32;
  std::size_t n_blocks = 2;
  std::size_t ffn_dim = 64;
  std::size_t num_classes = 4;
  std::size_t task_dim = 0;  ///< d_e; 0 means d_model with an identity pooling map
  bool head_trainable = false;
  std::vector<TaskSpecConfig> tasks{{0, 1, 512, 128}, {0, 1, 512, 128}, {1, 4, 512, 128}, {1, 4, 512, 128}};
  double task_noise = 0.1;
  double label_noise = 0.05;

  std::size_t num_tasks() const { return tasks.size(); }
  std::size_t embedding_dim() const { return task_dim == 0 ? d_model : task_dim; }

  std::size_t steps_per_epoch() const {
    std::size_t total = 0;
    for (const auto& t : tasks) total += t.train_size;
    return std::max<std::size_t>(1, (total + batch_size - 1) / batch_size);
  }

  std::size_t total_steps() const { return max_steps > 0 ? max_steps : epochs * steps_per_epoch(); }

  EptLayerOptions layer_options() const {
    EptLayerOptions o;
    o.scales = expert_kernel_sizes;
    o.rank = lora_rank;
    o.gaussian_std = gaussian_std;
    o.ab_init = ab_init;
    o.top_k = top_k;
    o.use_top_k = use_top_k;
    o.tau_gate = tau_gate;
    o.pruner = alp;
    o.scaling = alp ? scaling_mode : ScalingMode::none;
    o.conditioning = routing_conditioning;
    o.task_dim = embedding_dim();
    o.tasks = num_tasks();
    return o;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ParameterError("invalid config: " + m); };
    if (tasks.empty()) fail("at least one task required");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (max_seq_len < 2) fail("max_seq_len must be >= 2 (task marker plus content)");
    if (vocab_size <= tasks.size() + 1) fail("vocab_size must exceed the number of task marker tokens + 1");
    if (d_model == 0 || ffn_dim == 0 || n_blocks == 0) fail("backbone dimensions must be >= 1");
    if (expert_kernel_sizes.empty()) fail("expert_kernel_sizes is empty");
    for (auto s : expert_kernel_sizes)
      if (s == 0) fail("expert kernel sizes must be >= 1");
    if (top_k == 0 || top_k > expert_kernel_sizes.size()) fail("top_k must be in [1, number of experts]");
    if (lora_rank == 0) fail("lora_rank must be >= 1");
    if (!(learning_rate >= 0.0)) fail("learning_rate must be >= 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(lambda_con >= 0.0)) fail("lambda_con must be >= 0");
    if (!(tau_con > 0.0) || !(tau_gate > 0.0)) fail("temperatures must be > 0");
    if (!(gaussian_std > 0.0)) fail("gaussian_std must be > 0");
    if (contrastive_source != "adapted" && contrastive_source != "frozen") fail("contrastive_source must be adapted|frozen");
    if (sampling != "balanced" && sampling != "round_robin") fail("sampling must be balanced|round_robin");
    static const std::set<std::string> known{"q", "k", "v", "o", "up", "down"};
    for (const auto& m : target_modules)
      if (!known.count(m)) fail("unknown target module '" + m + "'");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].rank == 0) fail("task rank must be >= 1");
      if (tasks[i].train_size == 0 || tasks[i].eval_size == 0) fail("task datasets must be non-empty");
      for (std::size_t j = 0; j < i; ++j)
        if (tasks[j].family == tasks[i].family && tasks[j].rank != tasks[i].rank) fail("tasks of one family must share a rank");
    }
  }

  /// Desk-scale defaults used by the smoke run and the acceptance suite.
  static TrainConfig toy() {
    TrainConfig c;
    c.expert_kernel_sizes = {1, 2, 4, 8};
    c.learning_rate = 1e-2;
    c.warmup_steps = 30;
    c.max_steps = 300;
    return c;
  }

  /// Smallest end-to-end configuration, used for gradient checking.
  static TrainConfig miniature() {
    TrainConfig c;
    c.vocab_size = 8;
    c.max_seq_len = 3;
    c.d_model = 4;
    c.ffn_dim = 4;
    c.n_blocks = 1;
    c.num_classes = 2;
    c.lora_rank = 2;
    c.expert_kernel_sizes = {1, 2};
    c.top_k = 2;
    c.batch_size = 2;
    c.tasks = {{0, 1, 4, 4}, {1, 2, 4, 4}};
    c.learning_rate = 1e-2;
    c.warmup_steps = 1;
    c.max_steps = 4;
    return c;
  }
};

inline std::string to_string(ScalingMode m) {
  switch (m) {
    case ScalingMode::slice_height_over_T: return "slice_height_over_T";
    case ScalingMode::kernel_over_T: return "kernel_over_T";
    case ScalingMode::none: return "none";
  }
  return "none";
}

inline ScalingMode scaling_mode_from_string(const std::string& s) {
  if (s == "slice_height_over_T") return ScalingMode::slice_height_over_T;
  if (s == "kernel_over_T") return ScalingMode::kernel_over_T;
  if (s == "none") return ScalingMode::none;
  throw ParameterError("unknown scaling_mode '" + s + "'");
}

inline std::string to_string(RoutingConditioning c) {
  return c == RoutingConditioning::token_only ? "token_only" : "token_plus_task";
}

inline RoutingConditioning conditioning_from_string(const std::string& s) {
  if (s == "token_only") return RoutingConditioning::token_only;
  if (s == "token_plus_task") return RoutingConditioning::token_plus_task;
  throw ParameterError("unknown routing_conditioning '" + s + "'");
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : c.tasks) {
    tasks.push_back({{"family", t.family}, {"rank", t.rank}, {"train_size", t.train_size}, {"eval_size", t.eval_size}});
  }
  return {
      {"seed", c.seed},
      {"learning_rate", c.learning_rate},
      {"weight_decay", c.weight_decay},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"max_seq_len", c.max_seq_len},
      {"warmup_steps", c.warmup_steps},
      {"lora_rank", c.lora_rank},
      {"lora_alpha", c.lora_alpha},
      {"target_modules", c.target_modules},
      {"top_k", c.top_k},
      {"expert_kernel_sizes", c.expert_kernel_sizes},
      {"lambda_con", c.lambda_con},
      {"tau_con", c.tau_con},
      {"tau_gate", c.tau_gate},
      {"scaling_mode", to_string(c.scaling_mode)},
      {"max_steps", c.max_steps},
      {"gaussian_std", c.gaussian_std},
      {"ab_init", c.ab_init},
      {"use_top_k", c.use_top_k},
      {"alp", c.alp},
      {"routing_conditioning", to_string(c.routing_conditioning)},
      {"contrastive_source", c.contrastive_source},
      {"sampling", c.sampling},
      {"checkpoint_every", c.checkpoint_every},
      {"vocab_size", c.vocab_size},
      {"d_model", c.d_model},
      {"n_blocks", c.n_blocks},
      {"ffn_dim", c.ffn_dim},
      {"num_classes", c.num_classes},
      {"task_dim", c.task_dim},
      {"head_trainable", c.head_trainable},
      {"tasks", tasks},
      {"task_noise", c.task_noise},
      {"label_noise", c.label_noise},
  };
}

/// Missing keys keep the defaults of `base`; unknown keys are rejected.
inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  if (!j.is_object()) throw ParameterError("config must be a JSON object");
  const auto known = to_json(base);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key) && key != "preset") throw ParameterError("unknown config key '" + key + "'");
  }
  if (j.contains("preset")) {
    const std::string p = j.at("preset").get<std::string>();
    if (p == "toy") base = TrainConfig::toy();
    else if (p == "miniature") base = TrainConfig::miniature();
    else if (p != "default") throw ParameterError("unknown preset '" + p + "'");
  }
  TrainConfig c = base;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("seed", c.seed);
    get("learning_rate", c.learning_rate);
    get("weight_decay", c.weight_decay);
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("max_seq_len", c.max_seq_len);
    get("warmup_steps", c.warmup_steps);
    get("lora_rank", c.lora_rank);
    get("lora_alpha", c.lora_alpha);
    get("target_modules", c.target_modules);
    get("top_k", c.top_k);
    get("expert_kernel_sizes", c.expert_kernel_sizes);
    get("lambda_con", c.lambda_con);
    get("tau_con", c.tau_con);
    get("tau_gate", c.tau_gate);
    if (j.contains("scaling_mode")) c.scaling_mode = scaling_mode_from_string(j.at("scaling_mode").get<std::string>());
    get("max_steps", c.max_steps);
    get("gaussian_std", c.gaussian_std);
    get("ab_init", c.ab_init);
    get("use_top_k", c.use_top_k);
    get("alp", c.alp);
    if (j.contains("routing_conditioning")) {
      c.routing_conditioning = conditioning_from_string(j.at("routing_conditioning").get<std::string>());
    }
    get("contrastive_source", c.contrastive_source);
    get("sampling", c.sampling);
    get("checkpoint_every", c.checkpoint_every);
    get("vocab_size", c.vocab_size);
    get("d_model", c.d_model);
    get("n_blocks", c.n_blocks);
    get("ffn_dim", c.ffn_dim);
    get("num_classes", c.num_classes);
    get("task_dim", c.task_dim);
    get("head_trainable", c.head_trainable);
    get("task_noise", c.task_noise);
    get("label_noise", c.label_noise);
    if (j.contains("tasks")) {
      c.tasks.clear();
      for (const auto& t : j.at("tasks")) {
        TaskSpecConfig s;
        s.family = t.value("family", s.family);
        s.rank = t.value("rank", s.rank);
        s.train_size = t.value("train_size", s.train_size);
        s.eval_size = t.value("eval_size", s.eval_size);
        c.tasks.push_back(s);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("invalid config value: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace ept
