#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "ept/meta_subspace.hpp"

namespace ept {

/// One deconvolutional expert: a square kernel whose side is also its stride.
struct DeconvExpert {
  Parameter kernel;
  std::size_t scale = 1;
  std::size_t index = 0;
};

struct ExpertBank {
  std::vector<DeconvExpert> experts;
  std::size_t d_out = 0;
  std::size_t d_in = 0;

  std::size_t size() const { return experts.size(); }
};

struct SliceDims {
  std::size_t h = 0;
  std::size_t w = 0;
  friend bool operator==(const SliceDims&, const SliceDims&) = default;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Seed size that a scale-s expert expands to cover a d_out x d_in weight.
inline SliceDims target_slice_dims(std::size_t d_out, std::size_t d_in, std::size_t s) {
  if (s == 0) throw ParameterError("expert scale must be >= 1");
  return {ceil_div(d_out, s), ceil_div(d_in, s)};
}

/// Zero-initialised kernels, one per scale, in list order.
inline ExpertBank init_bank(const std::vector<std::size_t>& scales, std::size_t d_out, std::size_t d_in,
                            const std::string& prefix = "") {
  if (scales.empty()) throw ParameterError("expert scale list is empty");
  ExpertBank bank;
  bank.d_out = d_out;
  bank.d_in = d_in;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (scales[i] == 0) throw ParameterError("expert scale must be >= 1");
    bank.experts.push_back({{prefix + "K" + std::to_string(i), Matrix(scales[i], scales[i])}, scales[i], i});
  }
  return bank;
}

inline std::size_t expert_param_count(const std::vector<std::size_t>& scales) {
  return std::accumulate(scales.begin(), scales.end(), std::size_t{0},
                         [](std::size_t acc, std::size_t s) { return acc + s * s; });
}

/// Seed dimensions an expert actually uses. With the pruner disabled every
/// expert consumes the full H_max x W_max seed.
inline SliceDims expert_seed_dims(const MetaSubspace& ms, const DeconvExpert& e, std::size_t d_out, std::size_t d_in,
                                  bool pruner = true) {
  if (!pruner) return {ms.h_max, ms.w_max};
  return target_slice_dims(d_out, d_in, e.scale);
}

/// W_i = crop(Deconv(slice(Z_meta); K_i), d_out, d_in).
inline Matrix project_expert(const MetaSubspace& ms, const DeconvExpert& e, std::size_t d_out, std::size_t d_in,
                             bool pruner = true) {
  const SliceDims dims = expert_seed_dims(ms, e, d_out, d_in, pruner);
  const Matrix seed = slice_seed(ms, dims.h, dims.w);
  return crop(transposed_conv2d(seed, e.kernel.value, e.scale), d_out, d_in);
}

inline Var project_expert(Tape& tape, const MetaSubspace& ms, const DeconvExpert& e, std::size_t d_out,
                          std::size_t d_in, bool pruner = true) {
  const SliceDims dims = expert_seed_dims(ms, e, d_out, d_in, pruner);
  Var seed = slice_seed(tape, ms, dims.h, dims.w);
  return ad::crop(ad::transposed_conv2d(seed, tape.watch(e.kernel), e.scale), d_out, d_in);
}

}  // namespace ept
