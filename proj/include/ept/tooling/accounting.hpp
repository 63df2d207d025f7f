#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ept/errors.hpp"

namespace ept {

struct LayerSizing {
  std::uint64_t d = 768;          ///< hidden width of the adapted layer
  std::uint64_t rank = 8;
  std::uint64_t experts = 8;
  std::vector<std::uint64_t> scales{2, 2, 4, 4, 6, 6, 8, 8};
  std::uint64_t d_sub = 0;        ///< 0: ceil(d / smallest scale)
  std::uint64_t tasks = 0;        ///< task-embedding addendum, 0 to omit
  std::uint64_t task_dim = 0;     ///< 0: d
};

/// Counts for one adapted layer. The EPT headline total is subspace plus
/// kernels; router and task embeddings are listed separately, as are the
/// two LoRA baselines.
struct ParamBreakdown {
  std::uint64_t subspace = 0;
  std::uint64_t kernels = 0;
  std::uint64_t total = 0;
  std::uint64_t router = 0;
  std::uint64_t task_embeddings = 0;
  std::uint64_t moe_lora = 0;
  std::uint64_t shared_lora = 0;
  std::vector<std::uint64_t> expanded_scales;  ///< one scale per expert
};

/// A scale list shorter than the expert count is expanded by repeating each
/// entry N / len times in place ([2,4] with N=4 -> [2,2,4,4]).
inline std::vector<std::uint64_t> expand_scales(const std::vector<std::uint64_t>& scales, std::uint64_t experts) {
  if (scales.empty()) throw ParameterError("at least one scale required");
  if (experts == 0) throw ParameterError("expert count must be >= 1");
  for (auto s : scales)
    if (s == 0) throw ParameterError("scales must be >= 1");
  if (scales.size() == experts) return scales;
  if (scales.size() > experts || experts % scales.size() != 0) {
    throw ParameterError(std::to_string(scales.size()) + " scales cannot be spread over " + std::to_string(experts) +
                         " experts");
  }
  std::vector<std::uint64_t> out;
  for (auto s : scales) out.insert(out.end(), experts / scales.size(), s);
  return out;
}

inline ParamBreakdown count_params(const LayerSizing& c) {
  if (c.d == 0 || c.rank == 0) throw ParameterError("d and r must be >= 1");
  ParamBreakdown p;
  p.expanded_scales = expand_scales(c.scales, c.experts);
  const std::uint64_t s_min = *std::min_element(p.expanded_scales.begin(), p.expanded_scales.end());
  const std::uint64_t d_sub = c.d_sub ? c.d_sub : (c.d + s_min - 1) / s_min;
  p.subspace = 2 * d_sub * c.rank;
  for (auto s : p.expanded_scales) p.kernels += s * s;
  p.total = p.subspace + p.kernels;
  p.router = c.experts * c.d;
  p.task_embeddings = c.tasks * (c.task_dim ? c.task_dim : c.d);
  p.moe_lora = c.experts * 2 * c.d * c.rank;
  p.shared_lora = 2 * c.d * c.rank;
  return p;
}

inline nlohmann::json to_json(const ParamBreakdown& p) {
  return {{"subspace", p.subspace},
          {"kernels", p.kernels},
          {"total", p.total},
          {"addenda", {{"router", p.router}, {"task_embeddings", p.task_embeddings}}},
          {"baselines", {{"moe_lora", p.moe_lora}, {"shared_lora", p.shared_lora}}},
          {"scales", p.expanded_scales}};
}

inline std::string format_table(const ParamBreakdown& p) {
  std::ostringstream os;
  auto row = [&](const std::string& k, std::uint64_t v) {
    os << k << std::string(k.size() < 24 ? 24 - k.size() : 1, ' ') << v << '\n';
  };
  row("subspace", p.subspace);
  row("kernels", p.kernels);
  row("ept_total", p.total);
  row("router (addendum)", p.router);
  row("task_emb (addendum)", p.task_embeddings);
  row("moe_lora", p.moe_lora);
  row("shared_lora", p.shared_lora);
  return os.str();
}

}  // namespace ept
