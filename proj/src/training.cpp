#include "zimm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "zimm/container.hpp"
#include "zimm/errors.hpp"

namespace zimm {

using nlohmann::json;

std::vector<Example> examples_of(const std::vector<CohortEntry>& entries) {
  std::vector<Example> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back({&e.sequence, &e.labels});
  return out;
}

ad::Var nll_batch(ad::Tape& tape, const ZimmModel& model, const ParamStore& store, std::span<const Example> batch,
                  bool training, const RngStream& rng, bool with_l2) {
  if (batch.empty()) throw ValidationError("nll_batch: empty batch");
  std::vector<ad::Var> losses;
  losses.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const LabelVector& y = *batch[i].labels;
    if (y.buckets() != model.config().preprocessing.buckets || y.n() > y.buckets()) {
      throw ValidationError("nll_batch: label vector does not fit the model's buckets");
    }
    RngStream r = rng.split(static_cast<std::uint64_t>(i));
    losses.push_back(model.patient_nll(tape, store, *batch[i].sequence, y, training, r));
  }
  std::vector<ad::Var> terms = {ad::affine(ad::add_n(losses), 1.0 / static_cast<double>(batch.size()), 0.0)};
  if (with_l2) {
    for (const auto& [name, entry] : store.entries()) {
      if (entry.decay == 0.0) continue;
      ad::Var w = tape.parameter(store, name);
      terms.push_back(ad::affine(ad::sum(ad::mul(w, w)), 0.5 * entry.decay, 0.0));
    }
  }
  return ad::add_n(terms);
}

json EpochRecord::to_json(bool with_time) const {
  json j{{"epoch", epoch},
         {"train_loss", train_loss},
         {"val_mean_ap", val_mean_ap ? json(*val_mean_ap) : json(nullptr)}};
  if (with_time) j["wall_seconds"] = wall_seconds;
  return j;
}

// ---- checkpoints ----------------------------------------------------------------

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::map<std::string, Tensor> tensors;
  json decays = json::object();
  for (const auto& [name, entry] : ckpt.params.entries()) {
    tensors.emplace("param/" + name, entry.value);
    decays[name] = entry.decay;
  }
  for (const auto& [name, t] : ckpt.optimizer.m) tensors.emplace("nadam.m/" + name, t);
  for (const auto& [name, t] : ckpt.optimizer.v) tensors.emplace("nadam.v/" + name, t);

  Container c;
  c.magic = "ZIMMCKPT";
  c.version = 1;
  c.header["config"] = ckpt.config.to_json();
  c.header["tensors"] = pack_tensors(tensors, c.payload);
  c.header["decay"] = decays;
  const NadamConfig& oc = ckpt.optimizer.config;
  c.header["optimizer"] = {{"name", "nadam"},
                           {"step", ckpt.optimizer.step},
                           {"learning_rate", oc.learning_rate},
                           {"beta1", oc.beta1},
                           {"beta2", oc.beta2},
                           {"epsilon", oc.epsilon}};
  c.header["epoch"] = ckpt.epoch;
  c.header["initial_loss"] = ckpt.initial_loss;
  json history = json::array();
  for (const auto& r : ckpt.history) history.push_back(r.to_json(false));
  c.header["history"] = history;
  c.header["vocab_hash"] = ckpt.vocab_hash;
  c.header["payload_hash"] = hash_hex(fnv1a64(
      std::string_view(reinterpret_cast<const char*>(c.payload.data()), c.payload.size() * sizeof(double))));
  write_container(path, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const Container c = read_container(path, "ZIMMCKPT", 1);
  const std::string payload_hash = hash_hex(fnv1a64(
      std::string_view(reinterpret_cast<const char*>(c.payload.data()), c.payload.size() * sizeof(double))));
  Checkpoint ckpt;
  try {
    if (c.header.at("payload_hash").get<std::string>() != payload_hash) {
      throw IntegrityError("checkpoint payload hash mismatch in " + path.string());
    }
    ckpt.config = ModelConfig::from_json(c.header.at("config"));
    const auto tensors = unpack_tensors(c.header.at("tensors"), c.payload);
    const json& decays = c.header.at("decay");
    for (const auto& [key, t] : tensors) {
      const auto slash = key.find('/');
      const std::string kind = key.substr(0, slash);
      const std::string name = key.substr(slash + 1);
      if (kind == "param") {
        ckpt.params.add(name, t, decays.at(name).get<double>());
      } else if (kind == "nadam.m") {
        ckpt.optimizer.m.emplace(name, t);
      } else if (kind == "nadam.v") {
        ckpt.optimizer.v.emplace(name, t);
      } else {
        throw ValidationError("unknown tensor group '" + kind + "'");
      }
    }
    const json& o = c.header.at("optimizer");
    ckpt.optimizer.step = o.at("step").get<std::uint64_t>();
    ckpt.optimizer.config = {o.at("learning_rate").get<double>(), o.at("beta1").get<double>(),
                             o.at("beta2").get<double>(), o.at("epsilon").get<double>()};
    ckpt.epoch = c.header.at("epoch").get<std::size_t>();
    ckpt.initial_loss = c.header.at("initial_loss").get<double>();
    for (const auto& r : c.header.at("history")) {
      EpochRecord e;
      e.epoch = r.at("epoch").get<std::size_t>();
      e.train_loss = r.at("train_loss").get<double>();
      if (!r.at("val_mean_ap").is_null()) e.val_mean_ap = r.at("val_mean_ap").get<double>();
      ckpt.history.push_back(e);
    }
    ckpt.vocab_hash = c.header.at("vocab_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  return ckpt;
}

// ---- training -------------------------------------------------------------------

namespace {

void add_into(Gradients& acc, const Gradients& g) {
  for (const auto& [name, t] : g) {
    auto it = acc.find(name);
    if (it == acc.end()) {
      acc.emplace(name, t);
    } else {
      it->second += t;
    }
  }
}

constexpr std::size_t kReduceChunk = 16;

// Runs fn(lo, hi, worker) over `workers` contiguous blocks of [0, n).
void parallel_blocks(std::size_t n, std::size_t workers, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        fn(w * n / workers, (w + 1) * n / workers, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::size_t default_threads() {
  if (const char* env = std::getenv("ZIMM_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

double dataset_loss(const ZimmModel& model, const ParamStore& store, const std::vector<CohortEntry>& set) {
  if (set.empty()) throw ValidationError("dataset_loss: empty set");
  double total = 0.0;
  RngStream rng(0);
  for (const auto& e : set) {
    ad::Tape tape(false);
    total += model.patient_nll(tape, store, e.sequence, e.labels, false, rng).value().item();
  }
  return total / static_cast<double>(set.size()) + store.l2_penalty();
}

std::vector<PatientScores> score_entries(const ZimmModel& model, const ParamStore& store,
                                         const std::vector<CohortEntry>& set, std::size_t threads) {
  std::vector<PatientScores> out(set.size());
  parallel_blocks(set.size(), threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) {
      out[i] = scores_from_params(set[i].patient_id, set[i].labels, model.predict(store, set[i].sequence));
    }
  });
  return out;
}

Checkpoint train(const ModelConfig& config, const std::vector<CohortEntry>& train_set,
                 const std::vector<CohortEntry>& val_set, const std::string& vocab_hash, const TrainOptions& options) {
  if (train_set.empty() || val_set.empty()) throw ValidationError("train: training and validation sets must be non-empty");
  config.validate();
  const auto& tc = config.training;
  const ZimmModel model(config);
  ParamStore store = model.init_params(tc.seed);
  NadamState state = nadam_init(store, NadamConfig{tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon});
  const std::vector<Example> examples = examples_of(train_set);
  const std::size_t epochs = options.epochs.value_or(tc.epochs);
  const RngStream root = RngStream(tc.seed).split("train");

  std::optional<std::ofstream> log;
  if (options.log_path) {
    log.emplace(*options.log_path, std::ios::binary);
    if (!*log) throw ValidationError("cannot write training log " + options.log_path->string());
  }

  Checkpoint best;
  best.config = config;
  best.vocab_hash = vocab_hash;
  best.params = store;
  best.optimizer = state;
  best.initial_loss = options.compute_initial_loss ? dataset_loss(model, store, train_set) : 0.0;
  if (!std::isfinite(best.initial_loss)) throw std::runtime_error("train: non-finite initial loss");
  std::vector<EpochRecord> history;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const RngStream erng = root.split(static_cast<std::uint64_t>(epoch));
    RngStream shuffle_rng = erng.split("order");
    shuffle_rng.shuffle(order);
    const RngStream batch_root = erng.split("batch");

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t size = std::min(tc.batch_size, order.size() - start);
      const RngStream brng = batch_root.split(static_cast<std::uint64_t>(batches));
      // Fixed chunks reduced in chunk order: the sum does not depend on the
      // number of workers.
      const std::size_t chunks = (size + kReduceChunk - 1) / kReduceChunk;
      std::vector<Gradients> partial(chunks);
      std::vector<double> partial_loss(chunks, 0.0);
      parallel_blocks(chunks, options.threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t c = lo; c < hi; ++c) {
          for (std::size_t i = c * kReduceChunk; i < std::min(size, (c + 1) * kReduceChunk); ++i) {
            const Example& ex = examples[order[start + i]];
            RngStream prng = brng.split(static_cast<std::uint64_t>(i));
            ad::Tape tape;
            ad::Var loss = model.patient_nll(tape, store, *ex.sequence, *ex.labels, true, prng);
            partial_loss[c] += loss.value().item();
            add_into(partial[c], tape.backward(loss));
          }
        }
      });
      Gradients grads = zero_gradients(store);
      double batch_loss = 0.0;
      for (std::size_t c = 0; c < chunks; ++c) {
        add_into(grads, partial[c]);
        batch_loss += partial_loss[c];
      }
      const double inv = 1.0 / static_cast<double>(size);
      batch_loss = batch_loss * inv + store.l2_penalty();
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batches + 1));
      }
      double norm = 0.0;
      for (auto& [_, g] : grads) {
        for (double& v : g.data()) v *= inv;
      }
      norm = global_norm(grads);
      if (!std::isfinite(norm)) throw std::runtime_error("train: non-finite gradient norm");
      if (norm > tc.clip_norm) {
        const double s = tc.clip_norm / norm;
        for (auto& [_, g] : grads) {
          for (double& v : g.data()) v *= s;
        }
      }
      nadam_step(store, grads, state);
      loss_sum += batch_loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_mean_ap = resample_mean_ap(score_entries(model, store, val_set, options.threads), {});
    rec.wall_seconds = seconds_since(t0);
    history.push_back(rec);
    if (log) *log << rec.to_json(true).dump() << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(rec);

    // without validation positives, fall back to the training loss
    const double score = rec.val_mean_ap ? *rec.val_mean_ap : -rec.train_loss;
    if (score > best_score) {
      best_score = score;
      best.params = store;
      best.optimizer = state;
      best.epoch = epoch;
      stale = 0;
    } else if (++stale >= tc.patience) {
      break;
    }
  }
  best.history = std::move(history);
  return best;
}

Evaluation evaluate(const Checkpoint& ckpt, const std::vector<CohortEntry>& set, const std::string& vocab_hash,
                    std::size_t threads) {
  if (ckpt.vocab_hash != vocab_hash) {
    throw IntegrityError("checkpoint vocabulary " + ckpt.vocab_hash + " does not match cohort vocabulary " +
                         vocab_hash);
  }
  const ZimmModel model(ckpt.config);
  Evaluation ev;
  ev.scores = score_entries(model, ckpt.params, set, threads);
  ev.report = compute_report(ev.scores);
  ev.report.parameter_count = ckpt.params.total_parameters();
  return ev;
}

}  // namespace zimm
