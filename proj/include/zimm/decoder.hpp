#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zimm/autodiff.hpp"
#include "zimm/config.hpp"
#include "zimm/param_store.hpp"
#include "zimm/rng.hpp"
#include "zimm/zimm_dist.hpp"

namespace zimm {

/// Decoder heads on the tape. log_rows[b-1] holds log p_{b,.}; rows that were
/// not requested are left invalid.
struct DecoderOutput {
  ad::Var log_pi;
  std::vector<ad::Var> log_rows;
};

/// Maps the pathway embedding x to ZiMM parameters: a dense softmax head for
/// pi, a shared recurrent cell unrolled B steps on x, and one recurrent cell
/// per mixture component whose projected states are softmaxed over steps.
class Decoder {
 public:
  Decoder(const ModelConfig& config, std::size_t input_dim);

  void init(ParamStore& store, std::uint64_t seed) const;
  std::size_t parameter_count() const;
  std::size_t buckets() const { return buckets_; }
  std::size_t input_dim() const { return input_dim_; }

  /// log softmax(W x + c), length B+1.
  ad::Var mixture_head(ad::Tape& tape, const ParamStore& store, ad::Var x) const;

  /// h_t = RNN(h_{t-1}, x) for t = 1..B with h_0 = 0.
  std::vector<ad::Var> shared_states(ad::Tape& tape, const ParamStore& store, ad::Var x,
                                     bool training, RngStream& rng) const;

  /// log p_{b,.}: parallel cell b over the shared states, each state projected
  /// to a scalar, log-softmax over t.
  ad::Var multinomial_row(ad::Tape& tape, const ParamStore& store, const std::vector<ad::Var>& states,
                          std::size_t b, bool training, RngStream& rng) const;

  /// All heads, or only row `only_row` (1-based; 0 means no row) when given.
  DecoderOutput decode(ad::Tape& tape, const ParamStore& store, ad::Var x, bool training,
                       RngStream& rng, std::optional<std::size_t> only_row = std::nullopt) const;

  static std::string parallel_prefix(std::size_t b);

 private:
  ModelConfig config_;
  std::size_t input_dim_;
  std::size_t buckets_;
};

/// Probabilities from a decode() that produced every row.
ZimmParams to_zimm_params(const DecoderOutput& out);

}  // namespace zimm
