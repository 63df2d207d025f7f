#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "ept/autodiff.hpp"

namespace ept {

/// Shared low-rank factors whose product seeds every expert of a layer.
/// B is h_max x rank, A is rank x w_max.
struct MetaSubspace {
  Parameter B;
  Parameter A;
  std::size_t h_max = 0;
  std::size_t w_max = 0;
  std::size_t rank = 0;
};

inline void fill_gaussian(Matrix& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : m.data()) x = dist(rng);
}

/// Gaussian init of both factors. With ab_init off, A starts at zero so the
/// seed product is exactly zero (the conventional LoRA-style start).
inline MetaSubspace init_subspace(std::size_t h_max, std::size_t w_max, std::size_t rank, double gaussian_std,
                                  std::uint64_t seed, bool ab_init = true, const std::string& prefix = "") {
  if (h_max == 0 || w_max == 0 || rank == 0) {
    throw ParameterError("subspace dimensions must be >= 1 (h_max=" + std::to_string(h_max) +
                         ", w_max=" + std::to_string(w_max) + ", rank=" + std::to_string(rank) + ")");
  }
  if (!(gaussian_std > 0.0)) throw ParameterError("subspace init std must be > 0");
  std::mt19937_64 rng(seed);
  MetaSubspace ms{{prefix + "B", Matrix(h_max, rank)}, {prefix + "A", Matrix(rank, w_max)}, h_max, w_max, rank};
  fill_gaussian(ms.B.value, gaussian_std, rng);
  if (ab_init) fill_gaussian(ms.A.value, gaussian_std, rng);
  return ms;
}

inline Matrix full_seed(const MetaSubspace& ms) { return matmul(ms.B.value, ms.A.value); }

inline void check_slice(const MetaSubspace& ms, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ParameterError("slice dimensions must be >= 1");
  if (h > ms.h_max) {
    throw CapacityError("slice height " + std::to_string(h) + " exceeds H_max " + std::to_string(ms.h_max));
  }
  if (w > ms.w_max) {
    throw CapacityError("slice width " + std::to_string(w) + " exceeds W_max " + std::to_string(ms.w_max));
  }
}

/// B[0:h, :] * A[:, 0:w]; equal to the top-left block of full_seed.
inline Matrix slice_seed(const MetaSubspace& ms, std::size_t h, std::size_t w) {
  check_slice(ms, h, w);
  return matmul(crop(ms.B.value, h, ms.rank), crop(ms.A.value, ms.rank, w));
}

inline Var slice_seed(Tape& tape, const MetaSubspace& ms, std::size_t h, std::size_t w) {
  check_slice(ms, h, w);
  Var b = ad::crop(tape.watch(ms.B), h, ms.rank);
  Var a = ad::crop(tape.watch(ms.A), ms.rank, w);
  return ad::matmul(b, a);
}

}  // namespace ept
