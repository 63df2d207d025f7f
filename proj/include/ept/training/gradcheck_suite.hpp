#pragma once

#include <random>

#include "ept/gradcheck.hpp"
#include "ept/training/trainer.hpp"

namespace ept {

/// Central-difference check of d L_total / d theta for every trainable tensor
/// of a (small) config. Trainables are first redrawn from N(0, spread^2) so
/// that kernels, router and prototypes all carry non-trivial gradients.
inline GradCheckReport end_to_end_gradcheck(const TrainConfig& cfg, std::uint64_t perturb_seed = 7,
                                            double spread = 0.5, double h = 1e-6) {
  TrainerState st(cfg);
  const auto data = build_datasets(cfg, st.model);
  std::mt19937_64 rng(perturb_seed);
  for (Parameter* p : st.trainable_parameters()) fill_gaussian(p->value, spread, rng);
  const Batch batch = gather_batch(data, st.sampler.draw(data, cfg.batch_size));
  const auto params = st.trainable_parameters();
  return gradient_check([&](Tape& tape) { return batch_loss(tape, st, batch).total; }, params, h);
}

}  // namespace ept
