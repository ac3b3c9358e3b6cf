#include "zimm/selfcheck.hpp"

#include <algorithm>

#include "zimm/model.hpp"
#include "zimm/training.hpp"

namespace zimm {

ModelConfig tiny_config() {
  ModelConfig c;
  auto& p = c.preprocessing;
  p.drug_vocab = p.procedure_vocab = p.diagnosis_vocab = 6;
  p.buckets = 3;
  p.max_days = 5;
  c.embedding.code_dim = 4;
  c.embedding.time_dim = 2;
  c.embedding.age_dim = 2;
  c.aggregation.heads = 2;
  c.encoder.units = 2;
  c.decoder.units = 2;
  c.validate();
  return c;
}

std::vector<CohortEntry> random_entries(const ModelConfig& config, std::size_t count, std::size_t max_days,
                                        std::uint64_t seed) {
  const auto& p = config.preprocessing;
  const std::array<std::size_t, kCodeTypes> vocab = {p.drug_vocab, p.procedure_vocab, p.diagnosis_vocab};
  RngStream rng = RngStream(seed).split("random_entries");
  std::vector<CohortEntry> out;
  for (std::size_t i = 0; i < count; ++i) {
    CohortEntry e;
    e.patient_id = "rand" + std::to_string(i);
    const std::size_t days = 1 + static_cast<std::size_t>(rng.below(max_days));
    std::int64_t horizon = static_cast<std::int64_t>(days * 20 + rng.below(400));
    for (std::size_t d = 0; d < days; ++d) {
      DayInput day;
      for (std::size_t t = 0; t < kCodeTypes; ++t) {
        const std::size_t n = static_cast<std::size_t>(rng.below(4));
        for (std::size_t k = 0; k < n; ++k) day.codes[t].push_back(1 + static_cast<std::size_t>(rng.below(vocab[t] - 1)));
      }
      horizon -= 1 + static_cast<std::int64_t>(rng.below(19));
      day.horizon_token = horizon_token(std::max<std::int64_t>(horizon, 1));
      day.duration_token = duration_token(static_cast<std::int64_t>(rng.below(40)));
      e.sequence.days.push_back(std::move(day));
    }
    e.age = 40 + static_cast<int>(rng.below(60));
    e.sequence.age_token = age_token(e.age);
    e.labels.y.assign(p.buckets, 0);
    const std::size_t n = i == 0 ? 1 + static_cast<std::size_t>(rng.below(p.buckets))
                                 : static_cast<std::size_t>(rng.below(p.buckets + 1));
    for (std::size_t k = 0; k < n; ++k) ++e.labels.y[rng.below(p.buckets)];
    out.push_back(std::move(e));
  }
  return out;
}

GradCheckResult end_to_end_gradcheck(const ModelConfig& config, const std::vector<CohortEntry>& entries,
                                     std::uint64_t seed, double step) {
  const ZimmModel model(config);
  const ParamStore store = model.init_params(seed);
  const std::vector<Example> batch = examples_of(entries);
  const RngStream rng(seed);
  ad::Tape tape;
  const Gradients analytic = tape.backward(nll_batch(tape, model, store, batch, false, rng), store);
  const auto f = [&](const ParamStore& s) {
    ad::Tape t(false);
    return nll_batch(t, model, s, batch, false, rng).value().item();
  };
  return compare_gradients(analytic, finite_diff_grad(f, store, step));
}

}  // namespace zimm
