#include "zimm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "zimm/errors.hpp"

namespace zimm {

using nlohmann::json;

namespace {

// Reads the fields of one config section and rejects keys it does not know.
class SectionReader {
 public:
  SectionReader(const json& root, const char* section) : section_(section) {
    if (!root.contains(section)) return;
    obj_ = &root.at(section);
    if (!obj_->is_object()) throw ValidationError(std::string("config: '") + section + "' must be an object");
  }

  template <class T>
  SectionReader& field(const char* key, T& out) {
    known_.insert(key);
    if (!obj_ || !obj_->contains(key)) return *this;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      // get<> would wrap -3 or truncate 2.5 without complaint
      if (!obj_->at(key).is_number_unsigned()) {
        throw ValidationError("config: " + section_ + "." + key + " must be a nonnegative integer");
      }
    }
    try {
      out = obj_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError("config: " + section_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  void finish() const {
    if (!obj_) return;
    for (const auto& [key, _] : obj_->items()) {
      if (!known_.count(key)) throw ValidationError("config: unknown key " + section_ + "." + key);
    }
  }

 private:
  std::string section_;
  const json* obj_ = nullptr;
  std::set<std::string> known_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError("config: " + message);
}

bool is_rate(double r) { return r >= 0.0 && r < 1.0; }

}  // namespace

void ModelConfig::validate() const {
  const auto& p = preprocessing;
  require(p.max_days >= 1 && p.max_events_per_day >= 1, "sequence limits must be positive");
  require(p.drug_vocab >= 1 && p.procedure_vocab >= 1 && p.diagnosis_vocab >= 1,
          "vocabulary sizes must include the reserved token");
  require(p.buckets >= 1 && p.bucket_days >= 1, "bucket count and width must be positive");
  require(embedding.code_dim >= 1 && embedding.time_dim >= 1 && embedding.age_dim >= 1,
          "embedding dimensions must be positive");
  require(embedding.code_l2 >= 0 && embedding.time_l2 >= 0 && aggregation.l2 >= 0,
          "l2 rates must be nonnegative");
  require(embedding.norm_epsilon > 0, "normalization epsilon must be positive");
  require(is_rate(embedding.gaussian_dropout) && is_rate(aggregation.drop_connect) &&
              is_rate(aggregation.dropout) && is_rate(encoder.dropout) &&
              is_rate(encoder.recurrent_dropout) && is_rate(decoder.gaussian_dropout) &&
              is_rate(decoder.recurrent_dropout),
          "dropout rates must lie in [0, 1)");
  require(aggregation.heads >= 1, "aggregation.heads must be positive");
  require(encoder.cell == "lstm" || encoder.cell == "gru", "encoder.cell must be lstm or gru");
  require(decoder.cell == "lstm" || decoder.cell == "gru", "decoder.cell must be lstm or gru");
  require(encoder.units >= 1 && encoder.layers >= 1, "encoder units/layers must be positive");
  require(decoder.units >= 1 && decoder.parallel_layers >= 1 && decoder.common_layers >= 1,
          "decoder units/layers must be positive");
  require(training.optimizer == "nadam", "training.optimizer must be nadam");
  require(training.learning_rate >= 0, "learning rate must be nonnegative");
  require(training.batch_size >= 1, "batch size must be positive");
  require(training.beta1 >= 0 && training.beta1 < 1 && training.beta2 >= 0 && training.beta2 < 1,
          "Nadam betas must lie in [0, 1)");
  require(training.epsilon > 0, "Nadam epsilon must be positive");
  require(training.clip_norm > 0, "clip_norm must be positive");
}

json ModelConfig::to_json() const {
  const auto& p = preprocessing;
  const auto& e = embedding;
  const auto& a = aggregation;
  const auto& t = training;
  return json{
      {"preprocessing",
       {{"max_days", p.max_days},
        {"max_events_per_day", p.max_events_per_day},
        {"drug_vocab", p.drug_vocab},
        {"procedure_vocab", p.procedure_vocab},
        {"diagnosis_vocab", p.diagnosis_vocab},
        {"min_count", p.min_count},
        {"buckets", p.buckets},
        {"bucket_days", p.bucket_days},
        {"block_days", p.block_days}}},
      {"embedding",
       {{"code_dim", e.code_dim},
        {"code_l2", e.code_l2},
        {"gaussian_dropout", e.gaussian_dropout},
        {"time_dim", e.time_dim},
        {"time_l2", e.time_l2},
        {"norm_epsilon", e.norm_epsilon},
        {"age_dim", e.age_dim}}},
      {"aggregation",
       {{"heads", a.heads}, {"drop_connect", a.drop_connect}, {"dropout", a.dropout}, {"l2", a.l2}}},
      {"encoder",
       {{"cell", encoder.cell},
        {"units", encoder.units},
        {"layers", encoder.layers},
        {"dropout", encoder.dropout},
        {"recurrent_dropout", encoder.recurrent_dropout}}},
      {"decoder",
       {{"cell", decoder.cell},
        {"units", decoder.units},
        {"parallel_layers", decoder.parallel_layers},
        {"common_layers", decoder.common_layers},
        {"gaussian_dropout", decoder.gaussian_dropout},
        {"recurrent_dropout", decoder.recurrent_dropout}}},
      {"training",
       {{"optimizer", t.optimizer},
        {"learning_rate", t.learning_rate},
        {"batch_size", t.batch_size},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"epsilon", t.epsilon},
        {"epochs", t.epochs},
        {"patience", t.patience},
        {"clip_norm", t.clip_norm},
        {"seed", t.seed}}},
  };
}

ModelConfig ModelConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  static const std::set<std::string> sections = {"preprocessing", "embedding", "aggregation",
                                                 "encoder", "decoder", "training"};
  for (const auto& [key, _] : j.items()) {
    if (!sections.count(key)) throw ValidationError("config: unknown section " + key);
  }
  ModelConfig c;
  auto& p = c.preprocessing;
  SectionReader(j, "preprocessing")
      .field("max_days", p.max_days)
      .field("max_events_per_day", p.max_events_per_day)
      .field("drug_vocab", p.drug_vocab)
      .field("procedure_vocab", p.procedure_vocab)
      .field("diagnosis_vocab", p.diagnosis_vocab)
      .field("min_count", p.min_count)
      .field("buckets", p.buckets)
      .field("bucket_days", p.bucket_days)
      .field("block_days", p.block_days)
      .finish();
  auto& e = c.embedding;
  SectionReader(j, "embedding")
      .field("code_dim", e.code_dim)
      .field("code_l2", e.code_l2)
      .field("gaussian_dropout", e.gaussian_dropout)
      .field("time_dim", e.time_dim)
      .field("time_l2", e.time_l2)
      .field("norm_epsilon", e.norm_epsilon)
      .field("age_dim", e.age_dim)
      .finish();
  auto& a = c.aggregation;
  SectionReader(j, "aggregation")
      .field("heads", a.heads)
      .field("drop_connect", a.drop_connect)
      .field("dropout", a.dropout)
      .field("l2", a.l2)
      .finish();
  SectionReader(j, "encoder")
      .field("cell", c.encoder.cell)
      .field("units", c.encoder.units)
      .field("layers", c.encoder.layers)
      .field("dropout", c.encoder.dropout)
      .field("recurrent_dropout", c.encoder.recurrent_dropout)
      .finish();
  SectionReader(j, "decoder")
      .field("cell", c.decoder.cell)
      .field("units", c.decoder.units)
      .field("parallel_layers", c.decoder.parallel_layers)
      .field("common_layers", c.decoder.common_layers)
      .field("gaussian_dropout", c.decoder.gaussian_dropout)
      .field("recurrent_dropout", c.decoder.recurrent_dropout)
      .finish();
  auto& t = c.training;
  SectionReader(j, "training")
      .field("optimizer", t.optimizer)
      .field("learning_rate", t.learning_rate)
      .field("batch_size", t.batch_size)
      .field("beta1", t.beta1)
      .field("beta2", t.beta2)
      .field("epsilon", t.epsilon)
      .field("epochs", t.epochs)
      .field("patience", t.patience)
      .field("clip_norm", t.clip_norm)
      .field("seed", t.seed)
      .finish();
  c.validate();
  return c;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return ModelConfig::from_json(j);
}

void save_config(const ModelConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write config file " + path.string());
  out << config.to_json().dump(2) << "\n";
}

}  // namespace zimm
