#include "prosody/checkpoint.hpp"
#include "prosody/serialization.hpp"

#include <fstream>
#include <iterator>

namespace prosody {

namespace {

constexpr const char* kMagic = "PROSODY-CHECKPOINT 1";
constexpr const char* kBlobMarker = "BLOB";

using nlohmann::json;

json record_json(const StageRecord& r) {
  return {{"stage", r.stage},           {"steps", r.steps},           {"seed", r.seed},
          {"final_loss", r.final_loss}, {"tail_loss", r.tail_loss}, {"wall_seconds", r.wall_seconds}};
}

StageRecord record_from(const json& j) {
  StageRecord r;
  r.stage = j.at("stage").get<int>();
  r.steps = j.at("steps").get<long>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.final_loss = j.at("final_loss").get<double>();
  r.tail_loss = j.at("tail_loss").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

}  // namespace

void capture_parameters(const ProsodyModel<float>& model, Checkpoint& ckpt) {
  ckpt.tensors.clear();
  for (const auto* p : model.params().all()) ckpt.tensors.push_back({p->name, p->value});
  ckpt.phoneme_vocab = model.phoneme_vocab();
  ckpt.bpe_vocab = model.bpe_vocab();
}

std::unique_ptr<ProsodyModel<float>> restore_model(const Checkpoint& ckpt) {
  auto model = std::make_unique<ProsodyModel<float>>(ckpt.config.model, ckpt.phoneme_vocab, ckpt.bpe_vocab, 0);
  auto params = model->params().all();
  if (params.size() != ckpt.tensors.size())
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = ckpt.tensors[i];
    if (t.name != params[i]->name || t.value.rows() != params[i]->value.rows() ||
        t.value.cols() != params[i]->value.cols())
      throw CheckpointError("tensor '" + t.name + "' does not match model parameter '" + params[i]->name + "'");
    params[i]->value = t.value;
  }
  return model;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string blob;
  json tensors = json::array();
  for (const auto& t : ckpt.tensors) {
    tensors.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"offset", blob.size()}});
    append_f32_le(blob, t.value);
  }
  json history = json::array();
  for (const auto& r : ckpt.history) history.push_back(record_json(r));
  json manifest = {{"config", ckpt.config},
                   {"phoneme_vocab", ckpt.phoneme_vocab},
                   {"bpe_vocab", ckpt.bpe_vocab},
                   {"corpus_hash", ckpt.corpus_hash},
                   {"plan", ckpt.plan_label},
                   {"completed_stages", ckpt.completed_stages},
                   {"global_step", ckpt.global_step},
                   {"seed", ckpt.seed},
                   {"rng_state", ckpt.rng_state},
                   {"history", history},
                   {"tensors", tensors},
                   {"blob_bytes", blob.size()}};
  return std::string(kMagic) + '\n' + manifest.dump() + '\n' + kBlobMarker + '\n' + blob;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  const std::size_t l1 = bytes.find('\n');
  if (l1 == std::string::npos || bytes.compare(0, l1, kMagic) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const std::size_t l2 = bytes.find('\n', l1 + 1);
  if (l2 == std::string::npos) throw CheckpointError("truncated manifest");
  const std::size_t l3 = bytes.find('\n', l2 + 1);
  if (l3 == std::string::npos || bytes.compare(l2 + 1, l3 - l2 - 1, kBlobMarker) != 0)
    throw CheckpointError("missing blob marker");
  const char* blob = bytes.data() + l3 + 1;
  const std::size_t blob_size = bytes.size() - l3 - 1;

  Checkpoint c;
  try {
    const json m = json::parse(bytes.substr(l1 + 1, l2 - l1 - 1));
    c.config = m.at("config").get<TrainConfig>();
    c.phoneme_vocab = m.at("phoneme_vocab").get<int>();
    c.bpe_vocab = m.at("bpe_vocab").get<int>();
    c.corpus_hash = m.at("corpus_hash").get<std::string>();
    c.plan_label = m.at("plan").get<std::string>();
    c.completed_stages = m.at("completed_stages").get<std::vector<int>>();
    c.global_step = m.at("global_step").get<long>();
    c.seed = m.at("seed").get<std::uint64_t>();
    c.rng_state = m.at("rng_state").get<std::string>();
    for (const auto& r : m.at("history")) c.history.push_back(record_from(r));
    if (m.at("blob_bytes").get<std::size_t>() != blob_size) throw CheckpointError("blob size mismatch");
    for (const auto& t : m.at("tensors")) {
      const int rows = t.at("rows").get<int>(), cols = t.at("cols").get<int>();
      const auto off = t.at("offset").get<std::size_t>();
      if (rows < 0 || cols < 0 || off + sizeof(float) * rows * cols > blob_size)
        throw CheckpointError("tensor '" + t.at("name").get<std::string>() + "' lies outside the blob");
      c.tensors.push_back({t.at("name").get<std::string>(), read_f32_le(blob + off, rows, cols)});
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("malformed config: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace prosody
