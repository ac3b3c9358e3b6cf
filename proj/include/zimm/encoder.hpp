#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "zimm/autodiff.hpp"
#include "zimm/config.hpp"
#include "zimm/param_store.hpp"
#include "zimm/rng.hpp"

namespace zimm {

enum class CodeType : std::size_t { drug = 0, procedure = 1, diagnosis = 2 };
inline constexpr std::size_t kCodeTypes = 3;
inline constexpr std::array<CodeType, kCodeTypes> kAllCodeTypes = {CodeType::drug, CodeType::procedure,
                                                                   CodeType::diagnosis};
const char* code_type_name(CodeType type);

// ---- tokenization of integer day counts ------------------------------------
//
// horizon  (T - t): exact days 0..30, weekly buckets 31..180, 30-day buckets
//                   181..720, one overflow token beyond 720.
// duration (end - start): exact 0..14, then 15..30, 31..90, 91+.
// age:      5-year bins clipped to [40, 100).

inline constexpr std::size_t kHorizonTokens = 72;
inline constexpr std::size_t kDurationTokens = 18;
inline constexpr std::size_t kAgeTokens = 12;

std::size_t horizon_token(std::int64_t days);
std::size_t duration_token(std::int64_t days);
std::size_t age_token(std::int64_t years);

/// One day of history. Token 0 of each code vocabulary is the no-code token.
struct DayInput {
  std::array<std::vector<std::size_t>, kCodeTypes> codes;
  std::size_t horizon_token = 0;
  std::size_t duration_token = 0;

  std::size_t total_codes() const;
  bool operator==(const DayInput&) const = default;
};

/// Chronological day sequence before the index date. `mask[i] == 0` marks
/// padding; an empty mask means every day is real.
struct PatientSequence {
  std::vector<DayInput> days;
  std::vector<std::uint8_t> mask;
  std::size_t age_token = 0;

  bool is_real(std::size_t i) const { return mask.empty() || mask[i] != 0; }
  std::size_t real_days() const;
  bool operator==(const PatientSequence&) const = default;
};

// ---- self-attention aggregation --------------------------------------------

/// First layer: K heads (A_k {d,d}, alpha_k {d}); second layer: B {m,K}, b {m}.
struct AttentionWeights {
  std::vector<ad::Var> A;
  std::vector<ad::Var> alpha;
  ad::Var B;
  ad::Var b;
};

/// Attention vectors produced on the way, for inspection.
struct AttentionTrace {
  std::vector<Tensor> heads;  // w_k, each of length |C|
  Tensor mu;
};

/// E_C {d, |C|} -> E_C mu_C where
///   w_k  = softmax(alpha_k^T tanh(A_k E_C)),  W = [w_1; ...; w_K]
///   mu_C = softmax(b^T tanh(B W)).
/// Throws on an empty code set.
ad::Var self_attention_aggregate(ad::Var codes, const AttentionWeights& w,
                                 AttentionTrace* trace = nullptr);

/// Maps a patient's day sequence to the pathway embedding x.
class Encoder {
 public:
  explicit Encoder(const ModelConfig& config);

  void init(ParamStore& store, std::uint64_t seed) const;
  std::size_t parameter_count() const;

  std::size_t vocab_size(CodeType type) const { return vocab_[static_cast<std::size_t>(type)]; }
  std::size_t day_dim() const;
  std::size_t output_dim() const;

  /// Attention weights of one code type. The drop-connect mask on A_k is
  /// drawn here, once per patient, and shared by all of its days.
  AttentionWeights attention_weights(ad::Tape& tape, const ParamStore& store, CodeType type,
                                     bool training, RngStream& rng) const;
  using DayAttention = std::array<AttentionWeights, kCodeTypes>;
  DayAttention day_attention(ad::Tape& tape, const ParamStore& store, bool training, RngStream& rng) const;

  /// Aggregated embedding of one code type's tokens (no-code token if empty).
  ad::Var aggregate_codes(ad::Tape& tape, const ParamStore& store, CodeType type,
                          const std::vector<std::size_t>& ids, const AttentionWeights& attention,
                          bool training, RngStream& rng) const;

  /// [drug | procedure | diagnosis | horizon | duration]
  ad::Var encode_day(ad::Tape& tape, const ParamStore& store, const DayInput& day,
                     const DayAttention& attention, bool training, RngStream& rng) const;

  /// Final recurrent state over the real days, concatenated with the age
  /// embedding. Throws when every day is masked.
  ad::Var encode_patient(ad::Tape& tape, const ParamStore& store, const PatientSequence& seq,
                         bool training, RngStream& rng) const;

  static std::string prefix(CodeType type);

 private:
  ModelConfig config_;
  std::array<std::size_t, kCodeTypes> vocab_;
};

}  // namespace zimm
