#pragma once

// Checkpoint container: magic line, one JSON manifest line, "BLOB", then
// every tensor as little-endian float32 in manifest order.

#include "prosody/config.hpp"
#include "prosody/model.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace prosody {

struct StageRecord {
  int stage = 0;
  long steps = 0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  /// Mean loss over the last tenth of the stage.
  double tail_loss = 0.0;
  double wall_seconds = 0.0;
  bool operator==(const StageRecord&) const = default;
};

struct NamedTensor {
  std::string name;
  MatrixF value;
  bool operator==(const NamedTensor& o) const {
    return name == o.name && value.rows() == o.value.rows() && value.cols() == o.value.cols() &&
           (value.size() == 0 || value == o.value);
  }
};

struct Checkpoint {
  TrainConfig config;
  int phoneme_vocab = 0;
  int bpe_vocab = 0;
  std::string corpus_hash;
  std::string plan_label;
  std::vector<int> completed_stages;
  long global_step = 0;
  std::uint64_t seed = 0;
  std::string rng_state;
  std::vector<StageRecord> history;
  std::vector<NamedTensor> tensors;

  bool operator==(const Checkpoint&) const = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Copies every model parameter into `ckpt.tensors`.
void capture_parameters(const ProsodyModel<float>& model, Checkpoint& ckpt);
/// Builds a model from the config snapshot and loads the stored tensors.
std::unique_ptr<ProsodyModel<float>> restore_model(const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace prosody
