#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ept/ept.hpp"

namespace fs = std::filesystem;
using namespace ept;

namespace {

TrainConfig load_config(const std::string& path, const TrainConfig& base) {
  if (path.empty()) return base;
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot read config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, base);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v;
    if (!(is >> v) || !(is >> std::ws).eof()) throw ParameterError(std::string("bad ") + what + " entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ParameterError(std::string("empty ") + what + " list");
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

void save_with_routing(const TrainerState& st, const std::vector<TaskDataset>& data, const fs::path& dir) {
  const auto routing = collect_routing(st, data);
  save_state(st, dir, &routing);
}

int cmd_params(std::uint64_t d, std::uint64_t r, std::uint64_t n, const std::string& scales, std::uint64_t dsub,
               std::uint64_t tasks, std::uint64_t task_dim, bool json) {
  LayerSizing c{d, r, n, parse_list<std::uint64_t>(scales, "scale"), dsub, tasks, task_dim};
  const auto p = count_params(c);
  if (json) {
    std::cout << to_json(p).dump(2) << "\n";
  } else {
    std::cout << format_table(p);
  }
  return 0;
}

int cmd_gradcheck(const std::string& config, double tolerance) {
  const TrainConfig cfg = load_config(config, TrainConfig::miniature());
  const auto rep = end_to_end_gradcheck(cfg);
  std::printf("max_rel_err %.3e worst %s[%zu] entries %zu\n", rep.max_rel_err, rep.worst_param.c_str(),
              rep.worst_index, rep.entries);
  return rep.max_rel_err < tolerance ? 0 : 1;
}

void run_training(TrainerState& st, const std::vector<TaskDataset>& data, const fs::path& out) {
  fs::create_directories(out);
  const std::size_t every = st.config.checkpoint_every;
  train_loop(st, data, st.config.total_steps(), [&](TrainerState& s) {
    if (every > 0 && s.step % every == 0 && s.step < s.config.total_steps()) {
      save_with_routing(s, data, out / ("checkpoint-" + std::to_string(s.step)));
    }
  });
  save_with_routing(st, data, out / "checkpoint");
  write_text(out / "metrics.jsonl", join_log(st.log));
  write_text(out / "routing.csv", routing_csv(routing_report(aggregate_routing(collect_routing(st, data)))));
  const auto ev = evaluate(st, data);
  std::printf("trained %zu steps; mean eval accuracy %.4f; wrote %s\n", st.step, ev.mean(), out.string().c_str());
}

int cmd_train(const std::string& config, const std::string& out, const std::optional<std::uint64_t>& seed,
              const std::string& resume) {
  if (!resume.empty()) {
    if (!config.empty() || seed) throw ParameterError("--resume takes its config from the checkpoint");
    auto loaded = load_state(resume);
    TrainerState& st = *loaded.state;
    const auto data = build_datasets(st.config, st.model);
    run_training(st, data, out);
    return 0;
  }
  if (config.empty()) throw ParameterError("--config is required");
  TrainConfig cfg = load_config(config, TrainConfig::toy());
  if (seed) cfg.seed = *seed;
  cfg.validate();
  TrainerState st(cfg);
  const auto data = build_datasets(cfg, st.model);
  run_training(st, data, out);
  return 0;
}

int cmd_eval(const std::string& ckpt) {
  const CheckpointData raw = read_checkpoint(ckpt);
  EvalResult ev;
  std::string kind = raw.meta.value("kind", "");
  if (kind == "merged") {
    const auto st = state_for_merged(raw);
    ev = evaluate_merged(raw, build_datasets(st->config, st->model));
  } else {
    auto loaded = load_state(ckpt);
    ev = evaluate(*loaded.state, build_datasets(loaded.state->config, loaded.state->model));
  }
  std::printf("task  accuracy\n");
  for (std::size_t t = 0; t < ev.accuracy.size(); ++t) std::printf("%-5zu %.4f\n", t, ev.accuracy[t]);
  std::printf("mean  %.4f\n", ev.mean());
  return 0;
}

int cmd_analyze_routing(const std::string& ckpt, const std::string& layer) {
  auto loaded = load_state(ckpt);
  auto routing = loaded.routing;
  if (routing.empty()) routing = collect_routing(*loaded.state, build_datasets(loaded.state->config, loaded.state->model));
  RoutingStats stats;
  if (layer.empty()) {
    stats = aggregate_routing(routing);
  } else {
    auto it = routing.find(layer);
    if (it == routing.end()) throw ParameterError("no adapted layer named '" + layer + "'");
    stats = it->second;
  }
  std::cout << routing_csv(routing_report(stats));
  return 0;
}

int cmd_analyze_embeddings(const std::string& ckpt, const std::string& out) {
  auto loaded = load_state(ckpt);
  const auto ex = embedding_export(loaded.state->table);
  if (!ex.notice.empty()) std::cerr << ex.notice << "\n";
  const std::string emb = embeddings_csv(ex.raw);
  const std::string pca = ex.pca ? pca_csv(*ex.pca) : std::string();
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(fs::path(out) / "embeddings.csv", emb);
    if (ex.pca) write_text(fs::path(out) / "pca.csv", pca);
    return 0;
  }
  std::cout << emb;
  if (ex.pca) std::cout << "\n" << pca;
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& toggles, const std::string& out) {
  const TrainConfig cfg = load_config(config, TrainConfig::toy());
  const auto axes = parse_ablation_axes(split(toggles));
  const auto table = ablation_json(run_ablation(cfg, axes)).dump(2) + "\n";
  if (!out.empty()) write_text(out, table);
  std::cout << table;
  return 0;
}

int cmd_merge(const std::string& ckpt, const std::string& policy_name, const std::string& gates, std::string out) {
  const MergePolicy policy = merge_policy_from_string(policy_name);
  std::vector<double> fixed;
  if (policy == MergePolicy::fixed) {
    if (gates.empty()) throw ParameterError("--policy fixed needs --gates");
    fixed = parse_list<double>(gates, "gate");
  } else if (!gates.empty()) {
    throw ParameterError("--gates only applies to --policy fixed");
  }
  auto loaded = load_state(ckpt);
  if (policy == MergePolicy::per_task_mean && loaded.routing.empty()) {
    throw ContractError("checkpoint has no routing statistics; per_task_mean needs them");
  }
  const CheckpointData merged = export_merged(*loaded.state, loaded.routing, policy, fixed);
  if (out.empty()) out = resolve_checkpoint_dir(ckpt).string() + "-merged";
  write_checkpoint(out, merged);
  std::printf("wrote %s (%zu dense tensors)\n", out.c_str(), merged.tensors.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expert pyramid adapters on a toy transformer: training, analysis and tooling"};
  app.require_subcommand(1);

  std::uint64_t d = 768, r = 8, n = 8, dsub = 0, tasks = 0, task_dim = 0;
  std::string scales = "2,2,4,4,6,6,8,8";
  bool json = false;
  auto* params = app.add_subcommand("params", "parameter accounting for one adapted layer");
  params->add_option("--d", d, "layer width")->capture_default_str();
  params->add_option("--r", r, "subspace rank")->capture_default_str();
  params->add_option("--experts", n, "expert count")->capture_default_str();
  params->add_option("--scales", scales, "kernel sizes, comma separated")->capture_default_str();
  params->add_option("--dsub", dsub, "subspace width (0: d / smallest scale)")->capture_default_str();
  params->add_option("--tasks", tasks, "task count for the embedding addendum");
  params->add_option("--task-dim", task_dim, "task embedding width (0: d)");
  params->add_flag("--json", json, "JSON output");

  std::string config, out, ckpt, resume, toggles, policy, gates, layer;
  std::optional<std::uint64_t> seed;
  double tolerance = 1e-4;

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full loss on the miniature config");
  gradcheck->add_option("--config", config, "JSON config (defaults to the miniature preset)");
  gradcheck->add_option("--tolerance", tolerance, "fail at or above this relative error")->capture_default_str();

  auto* train = app.add_subcommand("train", "train and write checkpoints, metrics.jsonl, routing.csv");
  train->add_option("--config", config, "JSON config (missing keys take the toy preset)");
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--resume", resume, "continue from a training checkpoint");

  auto* eval = app.add_subcommand("eval", "per-task accuracy of a training or merged checkpoint");
  eval->add_option("--checkpoint", ckpt, "checkpoint or run directory")->required();

  auto* analyze = app.add_subcommand("analyze", "routing and embedding analysis");
  analyze->require_subcommand(1);
  auto* routing = analyze->add_subcommand("routing", "task x expert selection table (CSV)");
  routing->add_option("--checkpoint", ckpt, "checkpoint or run directory")->required();
  routing->add_option("--layer", layer, "one adapted layer instead of the sum over layers");
  auto* embeddings = analyze->add_subcommand("embeddings", "task prototypes and their PCA projection (CSV)");
  embeddings->add_option("--checkpoint", ckpt, "checkpoint or run directory")->required();
  embeddings->add_option("--out", out, "write embeddings.csv and pca.csv here instead of stdout");

  auto* ablate = app.add_subcommand("ablate", "train every on/off combination of the given toggles");
  ablate->add_option("--config", config, "JSON config (missing keys take the toy preset)");
  ablate->add_option("--toggles", toggles, "comma separated subset of ab_init,top_k,alp")->required();
  ablate->add_option("--out", out, "also write the JSON table to this file");

  auto* merge = app.add_subcommand("merge", "fold adapters into dense weights");
  merge->add_option("--checkpoint", ckpt, "training checkpoint or run directory")->required();
  merge->add_option("--policy", policy, "per_task_mean or fixed")->required();
  merge->add_option("--gates", gates, "gate vector for --policy fixed, comma separated");
  merge->add_option("--out", out, "output directory (default: <checkpoint>-merged)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*params) return cmd_params(d, r, n, scales, dsub, tasks, task_dim, json);
    if (*gradcheck) return cmd_gradcheck(config, tolerance);
    if (*train) return cmd_train(config, out, seed, resume);
    if (*eval) return cmd_eval(ckpt);
    if (*routing) return cmd_analyze_routing(ckpt, layer);
    if (*embeddings) return cmd_analyze_embeddings(ckpt, out);
    if (*ablate) return cmd_ablate(config, toggles, out);
    if (*merge) return cmd_merge(ckpt, policy, gates, out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
