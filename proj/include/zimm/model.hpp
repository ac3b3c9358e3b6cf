#pragma once

#include <cstdint>

#include "zimm/config.hpp"
#include "zimm/decoder.hpp"
#include "zimm/encoder.hpp"
#include "zimm/zimm_dist.hpp"

namespace zimm {

/// Encoder and decoder wired together.
class ZimmModel {
 public:
  explicit ZimmModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }

  ParamStore init_params(std::uint64_t seed) const;
  /// Closed-form trainable-parameter count for the configuration.
  std::size_t parameter_count() const;

  /// -log p(y | x(seq)). Only the multinomial row selected by n is built,
  /// since the likelihood never touches the others.
  ad::Var patient_nll(ad::Tape& tape, const ParamStore& store, const PatientSequence& seq,
                      const LabelVector& y, bool training, RngStream& rng) const;

  /// Eval-mode ZiMM parameters for one patient.
  ZimmParams predict(const ParamStore& store, const PatientSequence& seq) const;

 private:
  ModelConfig config_;
  Encoder encoder_;
  Decoder decoder_;
};

}  // namespace zimm
