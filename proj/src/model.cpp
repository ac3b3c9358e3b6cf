#include "zimm/model.hpp"

namespace zimm {

ZimmModel::ZimmModel(const ModelConfig& config)
    : config_(config), encoder_(config), decoder_(config, encoder_.output_dim()) {}

ParamStore ZimmModel::init_params(std::uint64_t seed) const {
  ParamStore store;
  encoder_.init(store, seed);
  decoder_.init(store, seed);
  return store;
}

std::size_t ZimmModel::parameter_count() const {
  return encoder_.parameter_count() + decoder_.parameter_count();
}

ad::Var ZimmModel::patient_nll(ad::Tape& tape, const ParamStore& store, const PatientSequence& seq,
                               const LabelVector& y, bool training, RngStream& rng) const {
  RngStream enc_rng = rng.split("encoder");
  RngStream dec_rng = rng.split("decoder");
  ad::Var x = encoder_.encode_patient(tape, store, seq, training, enc_rng);
  DecoderOutput out = decoder_.decode(tape, store, x, training, dec_rng, std::size_t{y.n()});
  const std::uint32_t n = y.n();
  return zimm_nll(out.log_pi, n > 0 ? out.log_rows[n - 1] : ad::Var(), y);
}

ZimmParams ZimmModel::predict(const ParamStore& store, const PatientSequence& seq) const {
  ad::Tape tape(false);
  RngStream rng(0);
  ad::Var x = encoder_.encode_patient(tape, store, seq, false, rng);
  return to_zimm_params(decoder_.decode(tape, store, x, false, rng));
}

}  // namespace zimm
