#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ept/task_space.hpp"
#include "ept/training/backbone.hpp"
#include "ept/training/optimizer.hpp"

namespace ept {

/// Everything a run needs to continue exactly where it stopped.
struct TrainerState {
  TrainConfig config;
  ToyBackbone model;
  TaskEmbeddingTable table;
  AdamW optimizer;
  BalancedSampler sampler;
  std::size_t step = 0;
  std::vector<std::string> log;  ///< metrics, one JSON document per line

  explicit TrainerState(const TrainConfig& cfg)
      : config(cfg),
        model(cfg),
        table(init_task_table(cfg.num_tasks(), cfg.embedding_dim(), cfg.d_model, cfg.tau_con,
                              detail::stream(cfg.seed, 20, 0)())),
        sampler(cfg.seed, cfg.sampling == "round_robin") {
    optimizer.weight_decay = cfg.weight_decay;
  }

  /// Adapter tensors, task prototypes, and the pooling map if present.
  std::vector<Parameter*> trainable_parameters() {
    auto out = model.trainable_parameters();
    out.push_back(&table.embeddings);
    if (table.pool_proj) out.push_back(&*table.pool_proj);
    return out;
  }

  std::vector<const Parameter*> trainable_parameters() const {
    auto out = model.trainable_parameters();
    out.push_back(&table.embeddings);
    if (table.pool_proj) out.push_back(&*table.pool_proj);
    return out;
  }

  LrSchedule schedule() const { return {config.learning_rate, config.warmup_steps, config.total_steps()}; }
};

inline std::vector<TaskDataset> build_datasets(const TrainConfig& cfg, const ToyBackbone& model) {
  std::vector<SyntheticTaskSpec> specs;
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    const auto& t = cfg.tasks[i];
    specs.push_back({i, t.rank, cfg.num_classes, cfg.max_seq_len, t.train_size, t.eval_size, t.family});
  }
  return make_tasks(specs, model.embedding(), {cfg.seed, cfg.task_noise, cfg.label_noise});
}

inline double total_loss(double l_gen, double l_con, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("contrastive weight must be >= 0");
  return l_gen + lambda * l_con;
}

/// Mean per-sample cross-entropy of class logits (single-token generation).
inline double generation_loss(const Matrix& logits, const std::vector<std::size_t>& targets) {
  if (targets.size() != logits.rows()) throw ShapeError("one target per logits row required");
  double acc = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) acc += cross_entropy(logits.row_span(r), targets[r]);
  return acc / static_cast<double>(logits.rows());
}

struct BatchLoss {
  Var gen;
  Var con;
  Var total;
};

struct Batch {
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<std::size_t> tasks;
  std::vector<std::size_t> labels;
};

inline Batch gather_batch(const std::vector<TaskDataset>& data,
                          const std::vector<std::pair<std::size_t, std::size_t>>& picks, bool eval = false) {
  Batch b;
  for (auto [task, idx] : picks) {
    const Example& ex = eval ? data[task].eval[idx] : data[task].train[idx];
    b.tokens.push_back(ex.tokens);
    b.tasks.push_back(ex.task);
    b.labels.push_back(ex.label);
  }
  return b;
}

/// Records L_total = L_gen + lambda * L_con for one batch. All trainable
/// tensors are watched up front so each has exactly one node and a gradient.
inline BatchLoss batch_loss(Tape& tape, TrainerState& st, const Batch& batch,
                            std::map<std::string, RoutingStats>* stats = nullptr) {
  for (Parameter* p : st.trainable_parameters()) tape.watch(*p);
  ToyBackbone::ForwardOptions opt;
  opt.stats = stats;
  if (st.config.routing_conditioning == RoutingConditioning::token_plus_task) {
    opt.task_table = tape.watch(st.table.embeddings);
  }
  auto fwd = st.model.forward(tape, batch.tokens, batch.tasks, opt);
  Var hidden = fwd.hidden;
  if (st.config.contrastive_source == "frozen") {
    ToyBackbone::ForwardOptions frozen;
    frozen.adapters = false;
    hidden = st.model.forward(tape, batch.tokens, batch.tasks, frozen).hidden;
  }
  Var features = pool_features(hidden, st.config.max_seq_len, st.table);
  BatchLoss out;
  out.con = contrastive_loss(features, batch.tasks, st.table);
  out.gen = ad::cross_entropy_mean(fwd.logits, batch.labels);
  out.total = ad::add(out.gen, ad::scale(out.con, st.config.lambda_con));
  return out;
}

inline std::string format_json_line(const nlohmann::json& j) { return j.dump(); }

struct EvalResult {
  std::vector<double> accuracy;  ///< per task
  double mean() const {
    double s = 0.0;
    for (double a : accuracy) s += a;
    return accuracy.empty() ? 0.0 : s / static_cast<double>(accuracy.size());
  }
};

inline std::size_t argmax_row(const Matrix& m, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = c;
  return best;
}

/// Accuracy of one task on its evaluation split. The forward overrides
/// allow scoring merged dense weights or fixed gates.
inline double evaluate_task(const TrainerState& st, const std::vector<TaskDataset>& data, std::size_t t,
                            const ToyBackbone::ForwardOptions& base_opt) {
  if (t >= data.size()) throw IndexError("task id " + std::to_string(t) + " out of range");
  std::size_t correct = 0;
  const auto& ev = data[t].eval;
  const std::size_t chunk = st.config.batch_size;
  for (std::size_t start = 0; start < ev.size(); start += chunk) {
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (std::size_t i = start; i < std::min(ev.size(), start + chunk); ++i) picks.emplace_back(t, i);
    const Batch b = gather_batch(data, picks, true);
    Tape tape;
    ToyBackbone::ForwardOptions opt = base_opt;
    if (st.config.routing_conditioning == RoutingConditioning::token_plus_task) {
      opt.task_table = tape.constant(st.table.embeddings.value);
    }
    auto fwd = st.model.forward(tape, b.tokens, b.tasks, opt);
    for (std::size_t i = 0; i < b.labels.size(); ++i) correct += argmax_row(fwd.logits.value(), i) == b.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(ev.size());
}

inline EvalResult evaluate(const TrainerState& st, const std::vector<TaskDataset>& data,
                           const ToyBackbone::ForwardOptions& base_opt) {
  EvalResult r;
  for (std::size_t t = 0; t < data.size(); ++t) r.accuracy.push_back(evaluate_task(st, data, t, base_opt));
  return r;
}

inline EvalResult evaluate(const TrainerState& st, const std::vector<TaskDataset>& data) {
  return evaluate(st, data, ToyBackbone::ForwardOptions{});
}

/// Routing statistics per adapted layer over the evaluation split.
inline std::map<std::string, RoutingStats> collect_routing(const TrainerState& st, const std::vector<TaskDataset>& data) {
  std::map<std::string, RoutingStats> stats;
  ToyBackbone::ForwardOptions opt;
  opt.stats = &stats;
  evaluate(st, data, opt);
  return stats;
}

inline RoutingStats aggregate_routing(const std::map<std::string, RoutingStats>& per_layer) {
  if (per_layer.empty()) return {};
  RoutingStats total = per_layer.begin()->second;
  for (auto it = std::next(per_layer.begin()); it != per_layer.end(); ++it) total.merge(it->second);
  return total;
}

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double l_gen = 0.0;
  double l_con = 0.0;
  double l_total = 0.0;
};

inline std::string parameter_norms(TrainerState& st) {
  std::ostringstream os;
  for (Parameter* p : st.trainable_parameters()) os << ' ' << p->name << '=' << norm(p->value.data());
  return os.str();
}

/// One optimisation step: balanced batch, forward with freshly generated
/// expert weights, joint loss, backward, AdamW.
inline StepRecord train_step(TrainerState& st, const std::vector<TaskDataset>& data) {
  StepRecord rec;
  rec.step = st.step;
  rec.lr = lr_at(st.step, st.schedule());
  const Batch batch = gather_batch(data, st.sampler.draw(data, st.config.batch_size));
  Tape tape;
  BatchLoss loss;
  try {
    loss = batch_loss(tape, st, batch);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at step " + std::to_string(st.step) +
                       "; parameter norms:" + parameter_norms(st));
  }
  rec.l_gen = loss.gen.value()(0, 0);
  rec.l_con = loss.con.value()(0, 0);
  rec.l_total = loss.total.value()(0, 0);
  if (!std::isfinite(rec.l_total)) {
    throw NumericError("non-finite loss at step " + std::to_string(st.step) + "; parameter norms:" + parameter_norms(st));
  }
  tape.backward(loss.total);
  const Gradients grads = tape.gradients();
  const auto params = st.trainable_parameters();
  st.optimizer.update(params, grads, rec.lr);
  ++st.step;
  return rec;
}

/// Runs until `stop_step` (or the configured total). on_step fires after each
/// completed step, e.g. for periodic checkpoints.
inline void train_loop(TrainerState& st, const std::vector<TaskDataset>& data, std::size_t stop_step,
                       const std::function<void(TrainerState&)>& on_step = {}) {
  const std::size_t total = st.config.total_steps();
  stop_step = std::min(stop_step, total);
  const std::size_t per_epoch = st.config.steps_per_epoch();
  while (st.step < stop_step) {
    const StepRecord rec = train_step(st, data);
    st.log.push_back(format_json_line(
        {{"step", rec.step}, {"lr", rec.lr}, {"l_gen", rec.l_gen}, {"l_con", rec.l_con}, {"l_total", rec.l_total}}));
    if (st.step % per_epoch == 0 || st.step == total) {
      const EvalResult ev = evaluate(st, data);
      const std::size_t epoch = (st.step + per_epoch - 1) / per_epoch;
      for (std::size_t t = 0; t < ev.accuracy.size(); ++t) {
        st.log.push_back(format_json_line(
            {{"step", st.step - 1}, {"epoch", epoch}, {"task", t}, {"accuracy", ev.accuracy[t]}}));
      }
    }
    if (on_step) on_step(st);
  }
}

inline void train_loop(TrainerState& st, const std::vector<TaskDataset>& data) {
  train_loop(st, data, st.config.total_steps());
}

/// Mean l_total over a window of step records at the start or end of a log.
inline double window_loss(const std::vector<std::string>& log, std::size_t window, bool at_end) {
  std::vector<double> losses;
  for (const auto& line : log) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("l_total")) losses.push_back(j.at("l_total").get<double>());
  }
  if (losses.empty()) throw ContractError("log has no step records");
  window = std::min(window, losses.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < window; ++i) acc += at_end ? losses[losses.size() - 1 - i] : losses[i];
  return acc / static_cast<double>(window);
}

inline std::string join_log(const std::vector<std::string>& log) {
  std::string out;
  for (const auto& l : log) out += l + "\n";
  return out;
}

}  // namespace ept
