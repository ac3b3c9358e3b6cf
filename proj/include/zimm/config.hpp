#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace zimm {

/// Every hyper-parameter of the encoder-decoder and its training loop.
/// Defaults give the standard architecture; the JSON form
/// mirrors the grouping below and any omitted key keeps its default.
struct ModelConfig {
  struct Preprocessing {
    std::size_t max_days = 50;
    std::size_t max_events_per_day = 24;
    // Vocabulary sizes include the reserved no-code token 0.
    std::size_t drug_vocab = 1036;
    std::size_t procedure_vocab = 1146;
    std::size_t diagnosis_vocab = 1391;
    std::size_t min_count = 50;
    std::size_t buckets = 18;
    std::size_t bucket_days = 30;
    std::size_t block_days = 42;
    bool operator==(const Preprocessing&) const = default;
  } preprocessing;

  struct Embedding {
    std::size_t code_dim = 64;
    double code_l2 = 0.005;
    double gaussian_dropout = 0.3;
    std::size_t time_dim = 4;
    double time_l2 = 0.01;
    double norm_epsilon = 1e-6;
    std::size_t age_dim = 4;
    bool operator==(const Embedding&) const = default;
  } embedding;

  struct Aggregation {
    std::size_t heads = 3;
    double drop_connect = 0.3;
    double dropout = 0.2;
    double l2 = 0.01;
    bool operator==(const Aggregation&) const = default;
  } aggregation;

  struct Encoder {
    std::string cell = "lstm";
    std::size_t units = 64;
    std::size_t layers = 1;
    double dropout = 0.3;
    double recurrent_dropout = 0.2;
    bool operator==(const Encoder&) const = default;
  } encoder;

  struct Decoder {
    std::string cell = "gru";
    std::size_t units = 32;
    std::size_t parallel_layers = 1;
    std::size_t common_layers = 1;
    double gaussian_dropout = 0.3;
    double recurrent_dropout = 0.2;
    bool operator==(const Decoder&) const = default;
  } decoder;

  struct Training {
    std::string optimizer = "nadam";
    double learning_rate = 0.001;
    std::size_t batch_size = 256;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t epochs = 30;
    std::size_t patience = 5;
    double clip_norm = 5.0;
    std::uint64_t seed = 42;
    bool operator==(const Training&) const = default;
  } training;

  bool operator==(const ModelConfig&) const = default;

  /// Throws ValidationError on out-of-range values.
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys are a ValidationError.
  static ModelConfig from_json(const nlohmann::json& j);
};

ModelConfig load_config(const std::filesystem::path& path);
void save_config(const ModelConfig& config, const std::filesystem::path& path);

}  // namespace zimm
