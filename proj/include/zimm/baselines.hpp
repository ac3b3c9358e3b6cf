#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "zimm/autodiff.hpp"
#include "zimm/cohort.hpp"
#include "zimm/param_store.hpp"
#include "zimm/scores.hpp"

namespace zimm {

/// Sparse count matrix (CSR) with a column dictionary.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(std::vector<std::string> columns = {}) : columns_(std::move(columns)) {}

  std::size_t rows() const { return row_ptr_.size() - 1; }
  std::size_t cols() const { return columns_.size(); }
  const std::vector<std::string>& columns() const { return columns_; }

  /// Appends a row from (column, value) pairs; duplicate columns are summed.
  void add_row(std::vector<std::pair<std::size_t, double>> entries);

  std::span<const std::uint32_t> row_cols(std::size_t r) const;
  std::span<const double> row_values(std::size_t r) const;
  double at(std::size_t r, std::size_t c) const;
  double dot(std::size_t r, std::span<const double> w) const;

  /// Dense {rows.size(), cols} block of the selected rows.
  Tensor dense(std::span<const std::size_t> rows) const;

  /// Multiplies column c by scale[c].
  FeatureMatrix scaled(std::span<const double> scale) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> col_;
  std::vector<double> val_;
};

/// Count of every vocabulary token over the full history, plus an age-bin
/// indicator.
FeatureMatrix featurize_static(const std::vector<CohortEntry>& entries, const VocabMap& vocab);

/// The same counts within consecutive windows counted back from T: horizon h
/// falls in window ceil(h / window_days). Events beyond the last window are
/// not counted.
FeatureMatrix featurize_dynamic(const std::vector<CohortEntry>& entries, const VocabMap& vocab,
                                std::int32_t window_days = 60, std::size_t windows = 12);

/// Per-column 1 / max|x| over a reference matrix (1 for empty columns).
std::vector<double> fit_column_scale(const FeatureMatrix& x);

/// Targets 1{y_b >= 1} for b = 1..B followed by 1{n > 0}; row-major.
struct TaskTargets {
  std::size_t rows = 0;
  std::size_t tasks = 0;
  std::vector<std::uint8_t> values;

  std::uint8_t at(std::size_t r, std::size_t t) const { return values[r * tasks + t]; }
  std::vector<std::uint8_t> column(std::size_t t) const;
};
TaskTargets task_targets(const std::vector<CohortEntry>& entries);

// ---- logistic regression --------------------------------------------------------

struct LrOptions {
  double l2 = 1e-2;
  double learning_rate = 1.0;
  std::size_t max_epochs = 2000;
  double tolerance = 1e-6;  // on the gradient norm
};

struct LrModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::size_t epochs = 0;
  double gradient_norm = 0.0;
};

/// Full-batch gradient descent on
///   mean_i [-y log p_i - (1-y) log(1-p_i)] + l2/2 |w|^2,  p_i = sigmoid(w.x_i + bias)
/// (the bias is not penalized).
LrModel train_lr_l2(const FeatureMatrix& x, std::span<const std::uint8_t> y, const LrOptions& options);
std::vector<double> predict_lr(const LrModel& model, const FeatureMatrix& x);

/// 1 / L for the loss above, with L bounded through the largest eigenvalue of
/// X^T X / n (power iteration, bias column included).
double lr_step_size(const FeatureMatrix& x, double l2);

// ---- MLP on static features -------------------------------------------------------

struct MlpOptions {
  std::size_t hidden = 128;
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
};

/// Params: mlp.hidden.w {F,H}, mlp.hidden.b {H}, mlp.out.w {H,T}, mlp.out.b {T}.
ParamStore init_mlp(std::size_t inputs, std::size_t hidden, std::size_t outputs, std::uint64_t seed);

/// Mean sigmoid cross-entropy over a batch {n,F} and targets {n,T}.
ad::Var mlp_loss(ad::Tape& tape, const ParamStore& params, const Tensor& x, const Tensor& y);

/// Probabilities {n,T}.
Tensor mlp_predict(const ParamStore& params, const Tensor& x);

/// Mean over all entries of softplus(z) - y z, differentiable in z.
ad::Var sigmoid_cross_entropy(ad::Var logits, const Tensor& targets);

/// Nadam minibatch training. When `select` is given it is called after every
/// epoch and the parameters with the highest value are returned.
ParamStore train_mlp_sf(const FeatureMatrix& x, const TaskTargets& y, const MlpOptions& options,
                        const std::function<double(const ParamStore&)>& select = {});

// ---- drivers --------------------------------------------------------------------

enum class BaselineKind { lr_sf, lr_df, mlp_sf };
BaselineKind parse_baseline_kind(const std::string& s);
const char* baseline_kind_name(BaselineKind k);

struct BaselineResult {
  std::vector<PatientScores> val;
  std::vector<PatientScores> test;
  nlohmann::json details;
};

/// Trains on cohort.train, selects on cohort.val (LR: l2 from {1e-3, 1e-2, 1e-1}
/// per task by validation AP; MLP: epoch by validation mean-AP), scores both.
BaselineResult run_baseline(BaselineKind kind, const Cohort& cohort, const MlpOptions& mlp = {});

}  // namespace zimm
