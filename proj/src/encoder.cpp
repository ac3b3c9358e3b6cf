#include "zimm/encoder.hpp"

#include <algorithm>
#include <stdexcept>

#include "zimm/recurrent.hpp"

namespace zimm {

const char* code_type_name(CodeType type) {
  switch (type) {
    case CodeType::drug: return "drug";
    case CodeType::procedure: return "procedure";
    case CodeType::diagnosis: return "diagnosis";
  }
  return "?";
}

std::size_t horizon_token(std::int64_t days) {
  if (days < 0) throw std::invalid_argument("horizon_token: negative horizon");
  if (days <= 30) return static_cast<std::size_t>(days);
  if (days <= 180) return 31 + static_cast<std::size_t>((days - 31) / 7);
  if (days <= 720) return 53 + static_cast<std::size_t>((days - 181) / 30);
  return kHorizonTokens - 1;
}

std::size_t duration_token(std::int64_t days) {
  if (days < 0) throw std::invalid_argument("duration_token: negative duration");
  if (days <= 14) return static_cast<std::size_t>(days);
  if (days <= 30) return 15;
  if (days <= 90) return 16;
  return 17;
}

std::size_t age_token(std::int64_t years) {
  const std::int64_t clipped = std::clamp<std::int64_t>(years, 40, 99);
  return static_cast<std::size_t>((clipped - 40) / 5);
}

std::size_t DayInput::total_codes() const {
  std::size_t n = 0;
  for (const auto& c : codes) n += c.size();
  return n;
}

std::size_t PatientSequence::real_days() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < days.size(); ++i) n += is_real(i) ? 1 : 0;
  return n;
}

ad::Var self_attention_aggregate(ad::Var codes, const AttentionWeights& w, AttentionTrace* trace) {
  const Shape& s = codes.value().shape();
  if (s.size() != 2 || s[1] == 0) {
    throw std::invalid_argument("self_attention_aggregate: expected a non-empty {d,|C|} matrix, got " +
                                shape_string(s));
  }
  if (w.A.empty() || w.A.size() != w.alpha.size()) {
    throw std::invalid_argument("self_attention_aggregate: need matching A_k and alpha_k heads");
  }
  const std::size_t count = s[1];
  std::vector<ad::Var> rows;
  rows.reserve(w.A.size());
  for (std::size_t k = 0; k < w.A.size(); ++k) {
    ad::Var scores = ad::matmul(w.alpha[k], ad::tanh(ad::matmul(w.A[k], codes)));
    ad::Var head = ad::softmax(scores, 0);
    if (trace) trace->heads.push_back(head.value());
    rows.push_back(ad::reshape(head, Shape{1, count}));
  }
  ad::Var W = ad::concat(rows, 0);
  ad::Var mu = ad::softmax(ad::matmul(w.b, ad::tanh(ad::matmul(w.B, W))), 0);
  if (trace) trace->mu = mu.value();
  return ad::matmul(codes, mu);
}

Encoder::Encoder(const ModelConfig& config)
    : config_(config),
      vocab_{config.preprocessing.drug_vocab, config.preprocessing.procedure_vocab,
             config.preprocessing.diagnosis_vocab} {
  config_.validate();
}

std::string Encoder::prefix(CodeType type) { return std::string("encoder.") + code_type_name(type); }

std::size_t Encoder::day_dim() const {
  return kCodeTypes * config_.embedding.code_dim + 2 * config_.embedding.time_dim;
}

std::size_t Encoder::output_dim() const { return config_.encoder.units + config_.embedding.age_dim; }

void Encoder::init(ParamStore& store, std::uint64_t seed) const {
  const auto& emb = config_.embedding;
  const auto& agg = config_.aggregation;
  const std::size_t d = emb.code_dim;
  const std::size_t K = agg.heads;
  for (CodeType type : kAllCodeTypes) {
    const std::string p = prefix(type);
    init_uniform(store, p + ".embedding", {vocab_size(type), d}, 0.05, seed, emb.code_l2);
    for (std::size_t k = 0; k < K; ++k) {
      const std::string h = p + ".attention.head" + std::to_string(k);
      init_glorot(store, h + ".A", {d, d}, seed, agg.l2);
      init_glorot(store, h + ".alpha", {d}, seed, agg.l2);
    }
    init_glorot(store, p + ".attention.B", {K, K}, seed, agg.l2);
    init_glorot(store, p + ".attention.b", {K}, seed, agg.l2);
  }
  init_uniform(store, "encoder.horizon.embedding", {kHorizonTokens, emb.time_dim}, 0.05, seed, emb.time_l2);
  init_uniform(store, "encoder.duration.embedding", {kDurationTokens, emb.time_dim}, 0.05, seed,
               emb.time_l2);
  init_uniform(store, "encoder.age.embedding", {kAgeTokens, emb.age_dim}, 0.05, seed, emb.time_l2);
  init_constant(store, "encoder.day_norm.gain", {day_dim()}, 1.0);
  init_constant(store, "encoder.day_norm.bias", {day_dim()}, 0.0);
  const CellType cell = parse_cell_type(config_.encoder.cell);
  for (std::size_t l = 0; l < config_.encoder.layers; ++l) {
    const std::size_t input = l == 0 ? day_dim() : config_.encoder.units;
    RecurrentLayer("encoder.rnn" + std::to_string(l), cell, input, config_.encoder.units).init(store, seed);
  }
}

std::size_t Encoder::parameter_count() const {
  const auto& emb = config_.embedding;
  const std::size_t d = emb.code_dim;
  const std::size_t K = config_.aggregation.heads;
  std::size_t n = 0;
  for (CodeType type : kAllCodeTypes) n += vocab_size(type) * d + K * (d * d + d) + K * K + K;
  n += (kHorizonTokens + kDurationTokens) * emb.time_dim + kAgeTokens * emb.age_dim;
  n += 2 * day_dim();
  const CellType cell = parse_cell_type(config_.encoder.cell);
  for (std::size_t l = 0; l < config_.encoder.layers; ++l) {
    const std::size_t input = l == 0 ? day_dim() : config_.encoder.units;
    n += RecurrentLayer("", cell, input, config_.encoder.units).parameter_count();
  }
  return n;
}

AttentionWeights Encoder::attention_weights(ad::Tape& tape, const ParamStore& store, CodeType type,
                                            bool training, RngStream& rng) const {
  const std::string p = prefix(type) + ".attention";
  AttentionWeights w;
  for (std::size_t k = 0; k < config_.aggregation.heads; ++k) {
    const std::string h = p + ".head" + std::to_string(k);
    // drop-connect on the head projection
    w.A.push_back(ad::dropout(tape.parameter(store, h + ".A"), config_.aggregation.drop_connect, rng, training));
    w.alpha.push_back(tape.parameter(store, h + ".alpha"));
  }
  w.B = tape.parameter(store, p + ".B");
  w.b = tape.parameter(store, p + ".b");
  return w;
}

Encoder::DayAttention Encoder::day_attention(ad::Tape& tape, const ParamStore& store, bool training,
                                             RngStream& rng) const {
  DayAttention out;
  for (CodeType type : kAllCodeTypes) {
    out[static_cast<std::size_t>(type)] = attention_weights(tape, store, type, training, rng);
  }
  return out;
}

ad::Var Encoder::aggregate_codes(ad::Tape& tape, const ParamStore& store, CodeType type,
                                 const std::vector<std::size_t>& ids, const AttentionWeights& attention,
                                 bool training, RngStream& rng) const {
  static const std::vector<std::size_t> kNoCode = {0};
  const std::vector<std::size_t>& tokens = ids.empty() ? kNoCode : ids;
  ad::Var table = tape.parameter(store, prefix(type) + ".embedding");
  ad::Var codes = ad::transpose(ad::embedding_lookup(table, tokens));
  codes = ad::gaussian_dropout(codes, config_.embedding.gaussian_dropout, rng, training);
  ad::Var out;
  if (tokens.size() == 1) {
    // softmax over a single column is exactly 1: the output is the column
    out = ad::reshape(codes, Shape{config_.embedding.code_dim});
  } else {
    out = self_attention_aggregate(codes, attention);
  }
  return ad::dropout(out, config_.aggregation.dropout, rng, training);
}

ad::Var Encoder::encode_day(ad::Tape& tape, const ParamStore& store, const DayInput& day,
                            const DayAttention& attention, bool training, RngStream& rng) const {
  const std::size_t t = config_.embedding.time_dim;
  std::vector<ad::Var> parts;
  parts.reserve(kCodeTypes + 2);
  for (CodeType type : kAllCodeTypes) {
    const auto t_index = static_cast<std::size_t>(type);
    parts.push_back(aggregate_codes(tape, store, type, day.codes[t_index], attention[t_index], training, rng));
  }
  parts.push_back(ad::reshape(
      ad::embedding_lookup(tape.parameter(store, "encoder.horizon.embedding"), {day.horizon_token}),
      Shape{t}));
  parts.push_back(ad::reshape(
      ad::embedding_lookup(tape.parameter(store, "encoder.duration.embedding"), {day.duration_token}),
      Shape{t}));
  return ad::concat(parts, 0);
}

ad::Var Encoder::encode_patient(ad::Tape& tape, const ParamStore& store, const PatientSequence& seq,
                                bool training, RngStream& rng) const {
  if (!seq.mask.empty() && seq.mask.size() != seq.days.size()) {
    throw std::invalid_argument("encode_patient: mask length does not match day count");
  }
  if (seq.real_days() == 0) throw std::invalid_argument("encode_patient: every day is masked");
  const auto& enc = config_.encoder;
  ad::Var gain = tape.parameter(store, "encoder.day_norm.gain");
  ad::Var bias = tape.parameter(store, "encoder.day_norm.bias");

  const DayAttention attention = day_attention(tape, store, training, rng);
  std::vector<ad::Var> inputs;
  inputs.reserve(seq.days.size());
  for (std::size_t i = 0; i < seq.days.size(); ++i) {
    if (!seq.is_real(i)) continue;  // padding never enters the recurrence
    ad::Var v = encode_day(tape, store, seq.days[i], attention, training, rng);
    v = ad::add(ad::mul(ad::layer_norm(v, config_.embedding.norm_epsilon), gain), bias);
    inputs.push_back(ad::dropout(v, enc.dropout, rng, training));
  }

  const CellType cell = parse_cell_type(enc.cell);
  for (std::size_t l = 0; l < enc.layers; ++l) {
    const std::size_t input = l == 0 ? day_dim() : enc.units;
    RecurrentLayer layer("encoder.rnn" + std::to_string(l), cell, input, enc.units);
    Tensor mask;
    const bool use_mask = training && enc.recurrent_dropout > 0.0;
    if (use_mask) {
      mask = Tensor(Shape{enc.units});
      const double keep = 1.0 - enc.recurrent_dropout;
      for (double& m : mask.data()) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    }
    RecurrentLayer::State state = layer.zero_state(tape);
    for (ad::Var& x : inputs) {
      state = layer.step(tape, store, x, state, use_mask ? &mask : nullptr);
      x = state.h;
    }
  }
  ad::Var age = ad::reshape(
      ad::embedding_lookup(tape.parameter(store, "encoder.age.embedding"), {seq.age_token}),
      Shape{config_.embedding.age_dim});
  return ad::concat({inputs.back(), age}, 0);
}

}  // namespace zimm
