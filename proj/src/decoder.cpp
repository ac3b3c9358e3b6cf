#include "zimm/decoder.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "zimm/recurrent.hpp"

namespace zimm {

namespace {

Tensor recurrent_mask(std::size_t units, double rate, RngStream& rng) {
  Tensor mask(Shape{units});
  const double keep = 1.0 - rate;
  for (double& m : mask.data()) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return mask;
}

}  // namespace

Decoder::Decoder(const ModelConfig& config, std::size_t input_dim)
    : config_(config), input_dim_(input_dim), buckets_(config.preprocessing.buckets) {
  config_.validate();
}

std::string Decoder::parallel_prefix(std::size_t b) {
  std::string digits = std::to_string(b);
  if (digits.size() < 2) digits.insert(0, 2 - digits.size(), '0');
  return "decoder.parallel" + digits;
}

void Decoder::init(ParamStore& store, std::uint64_t seed) const {
  const auto& dec = config_.decoder;
  const CellType cell = parse_cell_type(dec.cell);
  init_glorot(store, "decoder.mixture.w", {buckets_ + 1, input_dim_}, seed);
  init_constant(store, "decoder.mixture.b", {buckets_ + 1}, 0.0);
  for (std::size_t l = 0; l < dec.common_layers; ++l) {
    RecurrentLayer("decoder.shared" + std::to_string(l), cell, l == 0 ? input_dim_ : dec.units, dec.units)
        .init(store, seed);
  }
  for (std::size_t b = 1; b <= buckets_; ++b) {
    const std::string p = parallel_prefix(b);
    for (std::size_t l = 0; l < dec.parallel_layers; ++l) {
      RecurrentLayer(p + ".rnn" + std::to_string(l), cell, dec.units, dec.units).init(store, seed);
    }
    init_glorot(store, p + ".projection", {dec.units}, seed);
  }
}

std::size_t Decoder::parameter_count() const {
  const auto& dec = config_.decoder;
  const CellType cell = parse_cell_type(dec.cell);
  std::size_t n = (buckets_ + 1) * input_dim_ + (buckets_ + 1);
  for (std::size_t l = 0; l < dec.common_layers; ++l) {
    n += RecurrentLayer("", cell, l == 0 ? input_dim_ : dec.units, dec.units).parameter_count();
  }
  const std::size_t per_cell =
      dec.parallel_layers * RecurrentLayer("", cell, dec.units, dec.units).parameter_count() + dec.units;
  return n + buckets_ * per_cell;
}

ad::Var Decoder::mixture_head(ad::Tape& tape, const ParamStore& store, ad::Var x) const {
  if (x.value().size() != input_dim_) {
    throw ShapeError("mixture_head: x has " + std::to_string(x.value().size()) + " entries, expected " +
                     std::to_string(input_dim_));
  }
  ad::Var logits = ad::add(ad::matmul(tape.parameter(store, "decoder.mixture.w"), x),
                           tape.parameter(store, "decoder.mixture.b"));
  return ad::log_softmax(logits, 0);
}

std::vector<ad::Var> Decoder::shared_states(ad::Tape& tape, const ParamStore& store, ad::Var x,
                                            bool training, RngStream& rng) const {
  const auto& dec = config_.decoder;
  const CellType cell = parse_cell_type(dec.cell);
  std::vector<ad::Var> seq(buckets_, x);
  for (std::size_t l = 0; l < dec.common_layers; ++l) {
    RecurrentLayer layer("decoder.shared" + std::to_string(l), cell, l == 0 ? input_dim_ : dec.units,
                         dec.units);
    const bool masked = training && dec.recurrent_dropout > 0.0;
    Tensor mask = masked ? recurrent_mask(dec.units, dec.recurrent_dropout, rng) : Tensor();
    RecurrentLayer::State state = layer.zero_state(tape);
    for (ad::Var& v : seq) {
      state = layer.step(tape, store, v, state, masked ? &mask : nullptr);
      v = state.h;
    }
  }
  return seq;
}

ad::Var Decoder::multinomial_row(ad::Tape& tape, const ParamStore& store,
                                 const std::vector<ad::Var>& states, std::size_t b, bool training,
                                 RngStream& rng) const {
  if (b < 1 || b > buckets_) throw std::out_of_range("multinomial_row: bucket out of range");
  if (states.size() != buckets_) throw ShapeError("multinomial_row: expected B shared states");
  const auto& dec = config_.decoder;
  const CellType cell = parse_cell_type(dec.cell);
  const std::string p = parallel_prefix(b);
  std::vector<ad::Var> seq = states;
  for (std::size_t l = 0; l < dec.parallel_layers; ++l) {
    RecurrentLayer layer(p + ".rnn" + std::to_string(l), cell, dec.units, dec.units);
    const bool masked = training && dec.recurrent_dropout > 0.0;
    Tensor mask = masked ? recurrent_mask(dec.units, dec.recurrent_dropout, rng) : Tensor();
    RecurrentLayer::State state = layer.zero_state(tape);
    for (ad::Var& v : seq) {
      state = layer.step(tape, store, v, state, masked ? &mask : nullptr);
      v = state.h;
    }
  }
  ad::Var projection = tape.parameter(store, p + ".projection");
  std::vector<ad::Var> scores;
  scores.reserve(buckets_);
  for (const ad::Var& h : seq) scores.push_back(ad::matmul(projection, h));
  return ad::log_softmax(ad::concat(scores, 0), 0);
}

DecoderOutput Decoder::decode(ad::Tape& tape, const ParamStore& store, ad::Var x, bool training,
                              RngStream& rng, std::optional<std::size_t> only_row) const {
  x = ad::gaussian_dropout(x, config_.decoder.gaussian_dropout, rng, training);
  DecoderOutput out;
  out.log_pi = mixture_head(tape, store, x);
  out.log_rows.resize(buckets_);
  if (only_row && *only_row == 0) return out;
  std::vector<ad::Var> states = shared_states(tape, store, x, training, rng);
  for (std::size_t b = 1; b <= buckets_; ++b) {
    if (only_row && *only_row != b) continue;
    RngStream cell_rng = rng.split(b);
    out.log_rows[b - 1] = multinomial_row(tape, store, states, b, training, cell_rng);
  }
  return out;
}

ZimmParams to_zimm_params(const DecoderOutput& out) {
  const std::size_t B = out.log_rows.size();
  ZimmParams p;
  p.pi.reserve(B + 1);
  for (double v : out.log_pi.value().data()) p.pi.push_back(std::exp(v));
  p.P = Tensor(Shape{B, B});
  for (std::size_t b = 0; b < B; ++b) {
    if (!out.log_rows[b].valid()) throw std::logic_error("to_zimm_params: row not decoded");
    const Tensor& row = out.log_rows[b].value();
    for (std::size_t t = 0; t < B; ++t) p.P.at(b, t) = std::exp(row[t]);
  }
  return p;
}

}  // namespace zimm
