#pragma once

// Training and evaluation configuration plus JSON conversion for every
// config type. Unknown JSON keys are rejected; missing keys keep defaults.

#include "prosody/corpus.hpp"
#include "prosody/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace prosody {

enum class ContrastiveLoss { siglip, clip };

struct StageSpec {
  int stage = 1;
  int steps = 1;
  int batch_size = 64;
  double learning_rate = 1e-3;
  /// Stages 2 and 3 only.
  ContrastiveLoss loss = ContrastiveLoss::siglip;
  /// Stage 1 only.
  double mask_probability = 0.15;
  /// Decoupled weight decay; the logit scale and bias are never decayed.
  double weight_decay = 0.5;

  void validate() const;
  bool operator==(const StageSpec&) const = default;
};

struct TrainConfig {
  ModelConfig model;
  StageSpec stage1{1, 2000, 64, 1e-3};
  StageSpec stage2{2, 3000, 64, 1e-3};
  StageSpec stage3{3, 1000, 64, 9e-4};
  double clip_norm = 1.0;
  /// Learning-rate multiplier for the contrastive logit scale and bias.
  double logit_lr_scale = 30.0;
  std::uint64_t seed = 0;

  const StageSpec& stage(int k) const;
  StageSpec& stage(int k);
  void validate() const;
  bool operator==(const TrainConfig&) const = default;

  /// Step counts, batch sizes and learning rates of the large-scale recipe,
  /// without the desk-scale decay and logit learning-rate boost
  /// (documentation preset; far beyond a CPU budget).
  static TrainConfig large_scale();
};

struct EvalConfig {
  int batch_size = 64;
  int n_batches = 50;
  std::vector<int> ks{1, 5, 10};
  std::uint64_t seed = 20250;

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const AcousticConfig& c);
void from_json(const nlohmann::json& j, AcousticConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const StageSpec& c);
void from_json(const nlohmann::json& j, StageSpec& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const SyntheticCorpusSpec& c);
void from_json(const nlohmann::json& j, SyntheticCorpusSpec& c);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a JSON file; throws ConfigError naming the path on any failure.
nlohmann::json read_json_file(const std::filesystem::path& path);

template <class Config>
Config parse_config(const nlohmann::json& j, const std::string& what) {
  try {
    Config c = j.get<Config>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(what + ": " + e.what());
  } catch (const CorpusError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace prosody
