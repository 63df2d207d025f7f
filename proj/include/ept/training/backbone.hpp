#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ept/ept_layer.hpp"
#include "ept/training/config.hpp"
#include "ept/training/data.hpp"

namespace ept {

/// Small pre-norm transformer encoder with frozen random weights standing in
/// for a pretrained backbone. Each block has single-head self-attention
/// (q, k, v, o) and a GELU feed-forward (up, down); the sub-layers named in
/// target_modules carry an EptLayer adapter. Classification is a linear head
/// over the mean-pooled final hidden states.
class ToyBackbone {
 public:
  static constexpr const char* kModules[6] = {"q", "k", "v", "o", "up", "down"};

  struct Linear {
    std::string name;
    Matrix frozen;                  ///< used when not adapted
    std::unique_ptr<EptLayer> ept;  ///< owns W_0 when adapted

    const Matrix& base() const { return ept ? ept->base_weight() : frozen; }
  };

  struct ForwardOptions {
    bool adapters = true;
    std::optional<Var> task_table;
    std::map<std::string, RoutingStats>* stats = nullptr;
    /// layer name -> per-task gate vectors overriding the router
    const std::map<std::string, std::vector<std::vector<double>>>* fixed_gates = nullptr;
    /// layer name -> dense weight replacing the whole adapted sub-layer
    const std::map<std::string, Matrix>* dense_weights = nullptr;
  };

  struct ForwardResult {
    Var logits;  ///< B x C
    Var hidden;  ///< (B*S) x d_model final normalised hidden states
  };

  explicit ToyBackbone(const TrainConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(detail::stream(cfg.seed, 10, 0));
    embedding_ = Matrix(cfg.vocab_size, cfg.d_model);
    fill_gaussian(embedding_, 1.0, rng);
    position_ = Matrix(cfg.max_seq_len, cfg.d_model);
    fill_gaussian(position_, 0.1, rng);
    head_ = Parameter{"head", Matrix(cfg.num_classes, cfg.d_model)};
    fill_gaussian(head_.value, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)), rng);

    const EptLayerOptions opts = cfg.layer_options();
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
      std::vector<Linear> block;
      for (std::size_t m = 0; m < 6; ++m) {
        const std::string mod = kModules[m];
        const std::size_t d_out = mod == "up" ? cfg.ffn_dim : cfg.d_model;
        const std::size_t d_in = mod == "down" ? cfg.ffn_dim : cfg.d_model;
        Matrix w(d_out, d_in);
        fill_gaussian(w, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
        Linear lin{"blocks." + std::to_string(b) + "." + mod, Matrix(), nullptr};
        const bool adapted =
            std::find(cfg.target_modules.begin(), cfg.target_modules.end(), mod) != cfg.target_modules.end();
        if (adapted) {
          lin.ept = std::make_unique<EptLayer>(std::move(w), opts, cfg.seed * 1000003ULL + b * 16 + m + 1, lin.name + ".");
        } else {
          lin.frozen = std::move(w);
        }
        block.push_back(std::move(lin));
      }
      blocks_.push_back(std::move(block));
    }
  }

  const TrainConfig& config() const { return cfg_; }
  const Matrix& embedding() const { return embedding_; }
  const Matrix& position() const { return position_; }
  Parameter& head() { return head_; }
  const Parameter& head() const { return head_; }
  const std::vector<std::vector<Linear>>& blocks() const { return blocks_; }

  std::vector<std::pair<std::string, EptLayer*>> adapted_layers() {
    std::vector<std::pair<std::string, EptLayer*>> out;
    for (auto& block : blocks_)
      for (auto& lin : block)
        if (lin.ept) out.emplace_back(lin.name, lin.ept.get());
    return out;
  }

  std::vector<std::pair<std::string, const EptLayer*>> adapted_layers() const {
    std::vector<std::pair<std::string, const EptLayer*>> out;
    for (const auto& block : blocks_)
      for (const auto& lin : block)
        if (lin.ept) out.emplace_back(lin.name, lin.ept.get());
    return out;
  }

  /// Every adapter tensor (and the head when configured trainable).
  std::vector<Parameter*> trainable_parameters() {
    std::vector<Parameter*> out;
    for (auto& [name, layer] : adapted_layers()) {
      auto ps = layer->trainable_parameters();
      out.insert(out.end(), ps.begin(), ps.end());
    }
    if (cfg_.head_trainable) out.push_back(&head_);
    return out;
  }

  std::vector<const Parameter*> trainable_parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& [name, layer] : adapted_layers()) {
      auto ps = layer->trainable_parameters();
      out.insert(out.end(), ps.begin(), ps.end());
    }
    if (cfg_.head_trainable) out.push_back(&head_);
    return out;
  }

  /// Dense frozen weights by name: embedding, position, every W_0, head.
  std::map<std::string, Matrix> frozen_weights() const {
    std::map<std::string, Matrix> out{{"embedding", embedding_}, {"position", position_}};
    for (const auto& block : blocks_)
      for (const auto& lin : block) out.emplace(lin.name, lin.base());
    if (!cfg_.head_trainable) out.emplace("head", head_.value);
    return out;
  }

  ForwardResult forward(Tape& tape, const std::vector<std::vector<std::size_t>>& tokens,
                        const std::vector<std::size_t>& tasks) const {
    return forward(tape, tokens, tasks, ForwardOptions{});
  }

  ForwardResult forward(Tape& tape, const std::vector<std::vector<std::size_t>>& tokens,
                        const std::vector<std::size_t>& tasks, const ForwardOptions& opt) const {
    const std::size_t S = cfg_.max_seq_len, d = cfg_.d_model;
    if (tokens.empty() || tokens.size() != tasks.size()) throw ShapeError("one task id per sequence required");
    Matrix h0(tokens.size() * S, d);
    std::vector<std::size_t> row_tasks(tokens.size() * S);
    for (std::size_t b = 0; b < tokens.size(); ++b) {
      if (tokens[b].size() != S) throw ShapeError("sequence length " + std::to_string(tokens[b].size()) + " != " + std::to_string(S));
      for (std::size_t p = 0; p < S; ++p) {
        const std::size_t tok = tokens[b][p];
        if (tok >= cfg_.vocab_size) throw IndexError("token id " + std::to_string(tok) + " out of vocabulary");
        for (std::size_t c = 0; c < d; ++c) h0(b * S + p, c) = embedding_(tok, c) + position_(p, c);
        row_tasks[b * S + p] = tasks[b];
      }
    }

    Var h = tape.constant(std::move(h0));
    for (const auto& block : blocks_) {
      Var xn = ad::layer_norm_rows(h);
      Var q = linear(tape, block[0], xn, row_tasks, opt);
      Var k = linear(tape, block[1], xn, row_tasks, opt);
      Var v = linear(tape, block[2], xn, row_tasks, opt);
      Var att = ad::attention(q, k, v, S);
      h = ad::add(h, linear(tape, block[3], att, row_tasks, opt));
      Var xn2 = ad::layer_norm_rows(h);
      Var up = ad::gelu(linear(tape, block[4], xn2, row_tasks, opt));
      h = ad::add(h, linear(tape, block[5], up, row_tasks, opt));
    }
    Var hidden = ad::layer_norm_rows(h);
    Var pooled = ad::mean_pool(hidden, S);
    Var head = cfg_.head_trainable ? tape.watch(head_) : tape.constant(head_.value);
    return {ad::matmul_nt(pooled, head), hidden};
  }

 private:
  Var linear(Tape& tape, const Linear& lin, Var x, const std::vector<std::size_t>& row_tasks,
             const ForwardOptions& opt) const {
    if (lin.ept && opt.dense_weights) {
      auto it = opt.dense_weights->find(lin.name);
      if (it == opt.dense_weights->end()) throw ContractError("no dense weight for " + lin.name);
      return ad::matmul_nt(x, tape.constant(it->second));
    }
    if (!lin.ept || !opt.adapters) return ad::matmul_nt(x, tape.constant(lin.base()));
    RoutingStats* stats = nullptr;
    if (opt.stats) {
      auto [it, inserted] = opt.stats->try_emplace(
          lin.name, cfg_.num_tasks(), lin.ept->bank().size(), lin.ept->router().selected_per_token());
      stats = &it->second;
    }
    const std::vector<std::vector<double>>* fixed = nullptr;
    if (opt.fixed_gates) {
      auto it = opt.fixed_gates->find(lin.name);
      if (it == opt.fixed_gates->end()) throw ContractError("no fixed gates for " + lin.name);
      fixed = &it->second;
    }
    return lin.ept->forward(tape, x, row_tasks, opt.task_table, stats, fixed);
  }

  TrainConfig cfg_;
  Matrix embedding_;
  Matrix position_;
  Parameter head_;
  std::vector<std::vector<Linear>> blocks_;
};

}  // namespace ept
