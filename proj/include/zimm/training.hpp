#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zimm/cohort.hpp"
#include "zimm/model.hpp"
#include "zimm/nadam.hpp"
#include "zimm/scores.hpp"

namespace zimm {

/// One (sequence, labels) pair.
struct Example {
  const PatientSequence* sequence = nullptr;
  const LabelVector* labels = nullptr;
};
std::vector<Example> examples_of(const std::vector<CohortEntry>& entries);

/// Mean over the batch of -log p(y_i | x_i) on one tape, plus
/// sum_name decay/2 |w|^2 when `with_l2`. Patient i draws its dropout noise
/// from rng.split(i).
ad::Var nll_batch(ad::Tape& tape, const ZimmModel& model, const ParamStore& store,
                  std::span<const Example> batch, bool training, const RngStream& rng, bool with_l2 = true);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean minibatch loss (training mode, L2 included)
  std::optional<double> val_mean_ap;
  double wall_seconds = 0.0;  // log only, never serialized into checkpoints

  nlohmann::json to_json(bool with_time) const;
};

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  NadamState optimizer;
  std::size_t epoch = 0;  // epoch the parameters come from (0 = initialization)
  double initial_loss = 0.0;
  std::vector<EpochRecord> history;
  std::string vocab_hash;
};

/// "ZIMMCKPT" container, version 1. Wall times are not stored, so two
/// identical runs produce identical bytes.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// ZIMM_THREADS when set to a positive integer, else the hardware thread
/// count. Results never depend on it.
std::size_t default_threads();

struct TrainOptions {
  std::optional<std::size_t> epochs;  // overrides config.training.epochs
  std::size_t threads = 1;  // gradients are reduced in a fixed order
  /// Per-epoch JSON lines log (epoch, train_loss, val_mean_ap, wall_seconds).
  std::optional<std::filesystem::path> log_path;
  std::function<void(const EpochRecord&)> on_epoch;
  bool compute_initial_loss = true;
};

/// Seeded minibatch Nadam training with global-norm clipping and early
/// stopping on validation mean-AP. Returns the best-epoch checkpoint (the
/// full epoch history is kept in it). A non-finite loss throws.
Checkpoint train(const ModelConfig& config, const std::vector<CohortEntry>& train_set,
                 const std::vector<CohortEntry>& val_set, const std::string& vocab_hash,
                 const TrainOptions& options = {});

/// Mean eval-mode loss (with L2) over a set, no gradients.
double dataset_loss(const ZimmModel& model, const ParamStore& store, const std::vector<CohortEntry>& set);

/// Eval-mode scores for every entry.
std::vector<PatientScores> score_entries(const ZimmModel& model, const ParamStore& store,
                                         const std::vector<CohortEntry>& set, std::size_t threads = 1);

struct Evaluation {
  MetricsReport report;
  std::vector<PatientScores> scores;
};

/// Throws IntegrityError when the checkpoint was trained on another vocabulary.
Evaluation evaluate(const Checkpoint& ckpt, const std::vector<CohortEntry>& set, const std::string& vocab_hash,
                    std::size_t threads = 1);

}  // namespace zimm
