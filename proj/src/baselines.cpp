#include "zimm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zimm/errors.hpp"
#include "zimm/nadam.hpp"
#include "zimm/recurrent.hpp"

namespace zimm {

using nlohmann::json;

// ---- features -------------------------------------------------------------------

void FeatureMatrix::add_row(std::vector<std::pair<std::size_t, double>> entries) {
  std::sort(entries.begin(), entries.end());
  for (std::size_t i = 0; i < entries.size();) {
    const std::size_t c = entries[i].first;
    if (c >= cols()) throw std::out_of_range("FeatureMatrix: column out of range");
    double v = 0.0;
    for (; i < entries.size() && entries[i].first == c; ++i) v += entries[i].second;
    col_.push_back(static_cast<std::uint32_t>(c));
    val_.push_back(v);
  }
  row_ptr_.push_back(col_.size());
}

std::span<const std::uint32_t> FeatureMatrix::row_cols(std::size_t r) const {
  return std::span<const std::uint32_t>(col_).subspan(row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]);
}

std::span<const double> FeatureMatrix::row_values(std::size_t r) const {
  return std::span<const double>(val_).subspan(row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]);
}

double FeatureMatrix::at(std::size_t r, std::size_t c) const {
  const auto cs = row_cols(r);
  auto it = std::lower_bound(cs.begin(), cs.end(), static_cast<std::uint32_t>(c));
  return it != cs.end() && *it == c ? row_values(r)[static_cast<std::size_t>(it - cs.begin())] : 0.0;
}

double FeatureMatrix::dot(std::size_t r, std::span<const double> w) const {
  const auto cs = row_cols(r);
  const auto vs = row_values(r);
  double s = 0.0;
  for (std::size_t k = 0; k < cs.size(); ++k) s += vs[k] * w[cs[k]];
  return s;
}

Tensor FeatureMatrix::dense(std::span<const std::size_t> rows) const {
  Tensor out(Shape{rows.size(), cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto cs = row_cols(rows[i]);
    const auto vs = row_values(rows[i]);
    for (std::size_t k = 0; k < cs.size(); ++k) out.at(i, cs[k]) = vs[k];
  }
  return out;
}

FeatureMatrix FeatureMatrix::scaled(std::span<const double> scale) const {
  if (scale.size() != cols()) throw std::invalid_argument("FeatureMatrix::scaled: scale length mismatch");
  FeatureMatrix out = *this;
  for (std::size_t k = 0; k < out.val_.size(); ++k) out.val_[k] *= scale[out.col_[k]];
  return out;
}

namespace {

// Column offsets of each code type's tokens inside one count block.
struct TokenLayout {
  std::array<std::size_t, kCodeTypes> offset{};
  std::size_t width = 0;

  explicit TokenLayout(const VocabMap& vocab) {
    for (CodeType t : kAllCodeTypes) {
      offset[static_cast<std::size_t>(t)] = width;
      width += vocab.size(t);
    }
  }
  std::size_t column(CodeType t, std::size_t token) const { return offset[static_cast<std::size_t>(t)] + token; }
};

std::vector<std::string> token_columns(const VocabMap& vocab, const std::string& prefix) {
  std::vector<std::string> cols;
  for (CodeType t : kAllCodeTypes) {
    for (std::size_t id = 0; id < vocab.size(t); ++id) {
      cols.push_back(prefix + code_type_name(t) + ":" + vocab.token(t, id));
    }
  }
  return cols;
}

void append_age_columns(std::vector<std::string>& cols) {
  for (std::size_t a = 0; a < kAgeTokens; ++a) cols.push_back("age:" + std::to_string(a));
}

}  // namespace

FeatureMatrix featurize_static(const std::vector<CohortEntry>& entries, const VocabMap& vocab) {
  const TokenLayout layout(vocab);
  std::vector<std::string> cols = token_columns(vocab, "");
  append_age_columns(cols);
  FeatureMatrix m(std::move(cols));
  for (const auto& e : entries) {
    std::vector<std::pair<std::size_t, double>> row;
    row.reserve(e.history.size() + 1);
    for (const auto& h : e.history) row.emplace_back(layout.column(h.type, h.token), 1.0);
    row.emplace_back(layout.width + e.sequence.age_token, 1.0);
    m.add_row(std::move(row));
  }
  return m;
}

FeatureMatrix featurize_dynamic(const std::vector<CohortEntry>& entries, const VocabMap& vocab,
                                std::int32_t window_days, std::size_t windows) {
  if (window_days < 1 || windows < 1) throw ValidationError("dynamic features need positive windows");
  const TokenLayout layout(vocab);
  std::vector<std::string> cols;
  for (std::size_t w = 1; w <= windows; ++w) {
    auto block = token_columns(vocab, "w" + std::to_string(w) + ":");
    cols.insert(cols.end(), block.begin(), block.end());
  }
  append_age_columns(cols);
  FeatureMatrix m(std::move(cols));
  for (const auto& e : entries) {
    std::vector<std::pair<std::size_t, double>> row;
    for (const auto& h : e.history) {
      const auto w = static_cast<std::size_t>((h.horizon + window_days - 1) / window_days);
      if (w < 1 || w > windows) continue;
      row.emplace_back((w - 1) * layout.width + layout.column(h.type, h.token), 1.0);
    }
    row.emplace_back(windows * layout.width + e.sequence.age_token, 1.0);
    m.add_row(std::move(row));
  }
  return m;
}

std::vector<double> fit_column_scale(const FeatureMatrix& x) {
  std::vector<double> top(x.cols(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto cs = x.row_cols(r);
    const auto vs = x.row_values(r);
    for (std::size_t k = 0; k < cs.size(); ++k) top[cs[k]] = std::max(top[cs[k]], std::abs(vs[k]));
  }
  for (double& t : top) t = t > 0 ? 1.0 / t : 1.0;
  return top;
}

std::vector<std::uint8_t> TaskTargets::column(std::size_t t) const {
  std::vector<std::uint8_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = at(r, t);
  return out;
}

TaskTargets task_targets(const std::vector<CohortEntry>& entries) {
  TaskTargets t;
  t.rows = entries.size();
  t.tasks = entries.empty() ? 0 : entries.front().labels.buckets() + 1;
  t.values.reserve(t.rows * t.tasks);
  for (const auto& e : entries) {
    for (auto yb : e.labels.y) t.values.push_back(yb >= 1 ? 1 : 0);
    t.values.push_back(e.labels.n() > 0 ? 1 : 0);
  }
  return t;
}

// ---- logistic regression --------------------------------------------------------

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

LrModel train_lr_l2(const FeatureMatrix& x, std::span<const std::uint8_t> y, const LrOptions& o) {
  if (y.size() != x.rows() || x.rows() == 0) throw ValidationError("train_lr_l2: need one target per row");
  for (auto v : y) {
    if (v > 1) throw ValidationError("train_lr_l2: targets must be binary");
  }
  const double n = static_cast<double>(x.rows());
  LrModel m;
  m.weights.assign(x.cols(), 0.0);
  std::vector<double> grad(x.cols());
  for (m.epochs = 0; m.epochs < o.max_epochs; ++m.epochs) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double gbias = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double err = sigmoid(x.dot(r, m.weights) + m.bias) - y[r];
      const auto cs = x.row_cols(r);
      const auto vs = x.row_values(r);
      for (std::size_t k = 0; k < cs.size(); ++k) grad[cs[k]] += err * vs[k];
      gbias += err;
    }
    double norm2 = 0.0;
    for (std::size_t c = 0; c < grad.size(); ++c) {
      grad[c] = grad[c] / n + o.l2 * m.weights[c];
      norm2 += grad[c] * grad[c];
    }
    gbias /= n;
    norm2 += gbias * gbias;
    m.gradient_norm = std::sqrt(norm2);
    if (m.gradient_norm <= o.tolerance) break;
    for (std::size_t c = 0; c < grad.size(); ++c) m.weights[c] -= o.learning_rate * grad[c];
    m.bias -= o.learning_rate * gbias;
  }
  return m;
}

std::vector<double> predict_lr(const LrModel& model, const FeatureMatrix& x) {
  if (x.cols() != model.weights.size()) throw ValidationError("predict_lr: feature width mismatch");
  std::vector<double> p(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) p[r] = sigmoid(x.dot(r, model.weights) + model.bias);
  return p;
}

double lr_step_size(const FeatureMatrix& x, double l2) {
  // power iteration on [X 1]^T [X 1] / n
  const std::size_t d = x.cols() + 1;
  const double n = static_cast<double>(x.rows());
  std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d))), next(d);
  double lambda = 0.0;
  for (int it = 0; it < 50; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double xv = x.dot(r, std::span<const double>(v).first(d - 1)) + v[d - 1];
      const auto cs = x.row_cols(r);
      const auto vs = x.row_values(r);
      for (std::size_t k = 0; k < cs.size(); ++k) next[cs[k]] += xv * vs[k];
      next[d - 1] += xv;
    }
    double norm = 0.0;
    for (double& e : next) {
      e /= n;
      norm += e * e;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    lambda = norm;
    for (std::size_t i = 0; i < d; ++i) v[i] = next[i] / norm;
  }
  // margin over the power-iteration estimate, which approaches from below
  const double L = 0.25 * lambda * 1.1 + l2;
  return 1.0 / L;
}

// ---- MLP ------------------------------------------------------------------------

ParamStore init_mlp(std::size_t inputs, std::size_t hidden, std::size_t outputs, std::uint64_t seed) {
  ParamStore p;
  init_glorot(p, "mlp.hidden.w", {inputs, hidden}, seed);
  init_constant(p, "mlp.hidden.b", {hidden}, 0.0);
  init_glorot(p, "mlp.out.w", {hidden, outputs}, seed);
  init_constant(p, "mlp.out.b", {outputs}, 0.0);
  return p;
}

ad::Var sigmoid_cross_entropy(ad::Var logits, const Tensor& targets) {
  const Tensor& z = logits.value();
  if (!z.same_shape(targets)) {
    throw ShapeError("sigmoid_cross_entropy: logits " + shape_string(z.shape()) + " vs targets " +
                     shape_string(targets.shape()));
  }
  const double inv = 1.0 / static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = z[i];
    total += std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) - targets[i] * v;
  }
  return logits.tape()->record(
      Tensor::scalar(total * inv), {logits},
      [targets, inv](ad::BackwardContext& ctx) {
        const Tensor& z = ctx.input(0);
        const double g = ctx.gout().item() * inv;
        Tensor& dz = ctx.grad(0);
        for (std::size_t i = 0; i < z.size(); ++i) dz[i] += g * (sigmoid(z[i]) - targets[i]);
      },
      "sigmoid_cross_entropy");
}

namespace {

ad::Var mlp_logits(ad::Tape& tape, const ParamStore& params, const Tensor& x) {
  ad::Var in = tape.constant(x);
  ad::Var h = ad::tanh(ad::add_rows(ad::matmul(in, tape.parameter(params, "mlp.hidden.w")),
                                    tape.parameter(params, "mlp.hidden.b")));
  return ad::add_rows(ad::matmul(h, tape.parameter(params, "mlp.out.w")), tape.parameter(params, "mlp.out.b"));
}

}  // namespace

ad::Var mlp_loss(ad::Tape& tape, const ParamStore& params, const Tensor& x, const Tensor& y) {
  return sigmoid_cross_entropy(mlp_logits(tape, params, x), y);
}

Tensor mlp_predict(const ParamStore& params, const Tensor& x) {
  ad::Tape tape(false);
  Tensor out = mlp_logits(tape, params, x).value();
  for (double& v : out.data()) v = sigmoid(v);
  return out;
}

ParamStore train_mlp_sf(const FeatureMatrix& x, const TaskTargets& y, const MlpOptions& o,
                        const std::function<double(const ParamStore&)>& select) {
  if (x.rows() != y.rows || x.rows() == 0) throw ValidationError("train_mlp_sf: need one target row per row");
  ParamStore params = init_mlp(x.cols(), o.hidden, y.tasks, o.seed);
  NadamState state = nadam_init(params, NadamConfig{o.learning_rate});
  RngStream rng = RngStream(o.seed).split("mlp.batches");
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  ParamStore best = params;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += o.batch_size) {
      const std::size_t end = std::min(order.size(), start + o.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      Tensor targets(Shape{rows.size(), y.tasks});
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t t = 0; t < y.tasks; ++t) targets.at(i, t) = y.at(rows[i], t);
      }
      ad::Tape tape;
      ad::Var loss = mlp_loss(tape, params, x.dense(rows), targets);
      if (!std::isfinite(loss.value().item())) throw std::runtime_error("train_mlp_sf: non-finite loss");
      const Gradients g = tape.backward(loss, params);
      nadam_step(params, g, state);
    }
    if (select) {
      const double s = select(params);
      if (s > best_score) {
        best_score = s;
        best = params;
      }
    }
  }
  return select ? best : params;
}

// ---- drivers --------------------------------------------------------------------

BaselineKind parse_baseline_kind(const std::string& s) {
  if (s == "lr-sf") return BaselineKind::lr_sf;
  if (s == "lr-df") return BaselineKind::lr_df;
  if (s == "mlp-sf") return BaselineKind::mlp_sf;
  throw ValidationError("unknown baseline kind '" + s + "' (expected lr-sf, lr-df or mlp-sf)");
}

const char* baseline_kind_name(BaselineKind k) {
  switch (k) {
    case BaselineKind::lr_sf: return "lr-sf";
    case BaselineKind::lr_df: return "lr-df";
    case BaselineKind::mlp_sf: return "mlp-sf";
  }
  return "?";
}

namespace {

// rows x tasks probabilities -> score records (tasks = B buckets then n > 0)
std::vector<PatientScores> to_scores(const std::vector<CohortEntry>& entries,
                                     const std::vector<std::vector<double>>& by_task) {
  std::vector<PatientScores> out;
  out.reserve(entries.size());
  const std::size_t B = by_task.size() - 1;
  for (std::size_t r = 0; r < entries.size(); ++r) {
    PatientScores s;
    s.patient_id = entries[r].patient_id;
    s.labels = entries[r].labels;
    s.bucket_scores.resize(B);
    for (std::size_t b = 0; b < B; ++b) s.bucket_scores[b] = by_task[b][r];
    s.relapse_score = by_task[B][r];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<double>> mlp_columns(const ParamStore& params, const FeatureMatrix& x) {
  std::vector<std::size_t> rows(x.rows());
  std::iota(rows.begin(), rows.end(), 0);
  const Tensor p = mlp_predict(params, x.dense(rows));
  std::vector<std::vector<double>> cols(p.cols(), std::vector<double>(p.rows()));
  for (std::size_t r = 0; r < p.rows(); ++r) {
    for (std::size_t t = 0; t < p.cols(); ++t) cols[t][r] = p.at(r, t);
  }
  return cols;
}

}  // namespace

BaselineResult run_baseline(BaselineKind kind, const Cohort& cohort, const MlpOptions& mlp) {
  if (cohort.train.empty() || cohort.val.empty() || cohort.test.empty()) {
    throw ValidationError("baseline: every split must be non-empty");
  }
  auto featurize = [&](const std::vector<CohortEntry>& e) {
    return kind == BaselineKind::lr_df ? featurize_dynamic(e, cohort.vocab) : featurize_static(e, cohort.vocab);
  };
  const FeatureMatrix raw_train = featurize(cohort.train);
  const std::vector<double> scale = fit_column_scale(raw_train);
  const FeatureMatrix x_train = raw_train.scaled(scale);
  const FeatureMatrix x_val = featurize(cohort.val).scaled(scale);
  const FeatureMatrix x_test = featurize(cohort.test).scaled(scale);
  const TaskTargets y_train = task_targets(cohort.train);
  const TaskTargets y_val = task_targets(cohort.val);

  BaselineResult result;
  result.details["kind"] = baseline_kind_name(kind);
  result.details["features"] = x_train.cols();

  if (kind == BaselineKind::mlp_sf) {
    const auto select = [&](const ParamStore& p) {
      const auto m = resample_mean_ap(to_scores(cohort.val, mlp_columns(p, x_val)), {});
      return m ? *m : 0.0;
    };
    const ParamStore params = train_mlp_sf(x_train, y_train, mlp, select);
    result.val = to_scores(cohort.val, mlp_columns(params, x_val));
    result.test = to_scores(cohort.test, mlp_columns(params, x_test));
    result.details["hidden"] = mlp.hidden;
    result.details["epochs"] = mlp.epochs;
    return result;
  }

  static constexpr std::array<double, 3> kGrid = {1e-3, 1e-2, 1e-1};
  std::vector<std::vector<double>> val_cols, test_cols;
  json chosen = json::array();
  for (std::size_t t = 0; t < y_train.tasks; ++t) {
    const std::vector<std::uint8_t> yt = y_train.column(t);
    ScoredLabels val_task{{}, y_val.column(t)};
    double best_ap = -1.0;
    LrModel best;
    double best_l2 = kGrid[1];
    for (double l2 : kGrid) {
      LrOptions opt;
      opt.l2 = l2;
      opt.learning_rate = lr_step_size(x_train, l2);
      LrModel m = train_lr_l2(x_train, yt, opt);
      if (val_task.positives() == 0) {
        // nothing to select on: keep the middle of the grid
        if (l2 == kGrid[1]) best = std::move(m);
        continue;
      }
      val_task.score = predict_lr(m, x_val);
      const double ap = average_precision(val_task);
      if (ap > best_ap) {
        best_ap = ap;
        best_l2 = l2;
        best = std::move(m);
      }
    }
    chosen.push_back({{"task", t}, {"l2", best_l2}, {"epochs", best.epochs}});
    val_cols.push_back(predict_lr(best, x_val));
    test_cols.push_back(predict_lr(best, x_test));
  }
  result.details["models"] = chosen;
  result.val = to_scores(cohort.val, val_cols);
  result.test = to_scores(cohort.test, test_cols);
  return result;
}

}  // namespace zimm
