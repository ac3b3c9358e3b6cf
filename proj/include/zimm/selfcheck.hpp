#pragma once

// Reduced model and random patients for end-to-end gradient checks.

#include <cstdint>
#include <vector>

#include "zimm/cohort.hpp"
#include "zimm/config.hpp"
#include "zimm/gradcheck.hpp"

namespace zimm {

/// d_E = 4, K = 2, 2 units in every recurrent cell, B = 3, 6 tokens per code
/// vocabulary, 2-dim time and age embeddings.
ModelConfig tiny_config();

/// Patients with random day bags (some code types empty), strictly
/// decreasing horizons and random labels with n <= B. Patient 0 always has
/// n > 0.
std::vector<CohortEntry> random_entries(const ModelConfig& config, std::size_t count, std::size_t max_days,
                                        std::uint64_t seed);

/// backward() of the eval-mode batch loss (L2 included) against central
/// differences over every parameter.
GradCheckResult end_to_end_gradcheck(const ModelConfig& config, const std::vector<CohortEntry>& entries,
                                     std::uint64_t seed, double step = 1e-6);

}  // namespace zimm
