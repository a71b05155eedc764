#include "prosody/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace prosody {

using nlohmann::json;

void StageSpec::validate() const {
  if (stage < 1 || stage > 3) throw std::invalid_argument("stage must be 1, 2 or 3");
  if (steps < 1) throw std::invalid_argument("stage " + std::to_string(stage) + ": steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("stage " + std::to_string(stage) + ": batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("stage " + std::to_string(stage) + ": learning_rate must be > 0");
  if (!(mask_probability > 0 && mask_probability < 1))
    throw std::invalid_argument("stage 1: mask_probability must lie in (0, 1)");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay))
    throw std::invalid_argument("stage " + std::to_string(stage) + ": weight_decay must be finite and >= 0");
  if (loss == ContrastiveLoss::clip && stage != 1 && batch_size < 2)
    throw std::invalid_argument("the softmax loss needs batch_size >= 2");
}

const StageSpec& TrainConfig::stage(int k) const {
  switch (k) {
    case 1: return stage1;
    case 2: return stage2;
    case 3: return stage3;
  }
  throw std::invalid_argument("no stage " + std::to_string(k));
}

StageSpec& TrainConfig::stage(int k) { return const_cast<StageSpec&>(std::as_const(*this).stage(k)); }

void TrainConfig::validate() const {
  model.validate();
  for (int k = 1; k <= 3; ++k) {
    stage(k).validate();
    if (stage(k).stage != k) throw std::invalid_argument("stage" + std::to_string(k) + " has stage number " + std::to_string(stage(k).stage));
  }
  if (clip_norm < 0) throw std::invalid_argument("clip_norm must be >= 0");
  if (!(logit_lr_scale > 0)) throw std::invalid_argument("logit_lr_scale must be > 0");
}

TrainConfig TrainConfig::large_scale() {
  TrainConfig c;
  c.stage1 = {1, 75000, 512, 2.5e-4};
  c.stage2 = {2, 20000, 1024, 1e-4};
  c.stage3 = {3, 10000, 512, 9e-5};
  for (int k = 1; k <= 3; ++k) c.stage(k).weight_decay = 0.0;
  c.logit_lr_scale = 1.0;
  return c;
}

void EvalConfig::validate() const {
  if (batch_size < 1 || n_batches < 1) throw std::invalid_argument("eval: batch_size and n_batches must be >= 1");
  if (ks.empty()) throw std::invalid_argument("eval: ks must not be empty");
  for (int k : ks)
    if (k < 1 || k > batch_size) throw std::invalid_argument("eval: every k must lie in [1, batch_size]");
}

namespace {

/// Field-by-field reader that leaves defaults in place for missing keys and
/// rejects keys it was never asked about.
class Fields {
 public:
  Fields(const json& j, const char* what) : j_(j), what_(what) {
    if (!j.is_object()) throw std::invalid_argument(std::string(what) + " must be a JSON object");
  }
  template <class V>
  Fields& operator()(const char* key, V& v) {
    known_.insert(key);
    if (j_.contains(key)) v = j_.at(key).template get<V>();
    return *this;
  }
  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!known_.count(k)) throw std::invalid_argument(std::string("unknown key '") + k + "' in " + what_);
  }

 private:
  const json& j_;
  const char* what_;
  std::set<std::string> known_;
};

std::string loss_name(ContrastiveLoss l) { return l == ContrastiveLoss::siglip ? "siglip" : "clip"; }

ContrastiveLoss parse_loss(const std::string& s) {
  if (s == "siglip") return ContrastiveLoss::siglip;
  if (s == "clip") return ContrastiveLoss::clip;
  throw std::invalid_argument("loss must be 'siglip' or 'clip', got '" + s + "'");
}

}  // namespace

void to_json(json& j, const EncoderConfig& c) {
  j = {{"d_model", c.d_model},           {"n_heads", c.n_heads},
       {"n_blocks_per_stream", c.n_blocks_per_stream}, {"n_shared_blocks", c.n_shared_blocks},
       {"ffn_kernel_size", c.ffn_kernel_size}, {"ffn_hidden", c.ffn_hidden},
       {"rel_pos_clip", c.rel_pos_clip}, {"d_speaker", c.d_speaker},
       {"d_out", c.d_out},               {"modulation_hidden", c.modulation_hidden},
       {"projection_kernel", c.projection_kernel}, {"dropout", c.dropout},
       {"adaln_enabled", c.adaln_enabled}};
}

void from_json(const json& j, EncoderConfig& c) {
  Fields(j, "text encoder config")("d_model", c.d_model)("n_heads", c.n_heads)(
      "n_blocks_per_stream", c.n_blocks_per_stream)("n_shared_blocks", c.n_shared_blocks)(
      "ffn_kernel_size", c.ffn_kernel_size)("ffn_hidden", c.ffn_hidden)("rel_pos_clip", c.rel_pos_clip)(
      "d_speaker", c.d_speaker)("d_out", c.d_out)("modulation_hidden", c.modulation_hidden)(
      "projection_kernel", c.projection_kernel)("dropout", c.dropout)("adaln_enabled", c.adaln_enabled)
      .finish();
}

void to_json(json& j, const AcousticConfig& c) {
  j = {{"feature_dim", c.feature_dim}, {"channels", c.channels},
       {"front_kernel", c.front_kernel}, {"dilations", c.dilations},
       {"se_bottleneck", c.se_bottleneck}, {"attention_hidden", c.attention_hidden},
       {"d_out", c.d_out},             {"context_frames", c.context_frames}};
}

void from_json(const json& j, AcousticConfig& c) {
  Fields(j, "acoustic config")("feature_dim", c.feature_dim)("channels", c.channels)("front_kernel", c.front_kernel)(
      "dilations", c.dilations)("se_bottleneck", c.se_bottleneck)("attention_hidden", c.attention_hidden)(
      "d_out", c.d_out)("context_frames", c.context_frames)
      .finish();
}

void to_json(json& j, const ModelConfig& c) {
  j = {{"text", c.text},
       {"acoustic", c.acoustic},
       {"speaker_source", c.speaker_source == SpeakerSource::planted ? "planted" : "stand_in"},
       {"speaker_references", c.speaker_references},
       {"speaker_seed", c.speaker_seed}};
}

void from_json(const json& j, ModelConfig& c) {
  std::string source = c.speaker_source == SpeakerSource::planted ? "planted" : "stand_in";
  Fields(j, "model config")("text", c.text)("acoustic", c.acoustic)("speaker_source", source)(
      "speaker_references", c.speaker_references)("speaker_seed", c.speaker_seed)
      .finish();
  if (source == "planted")
    c.speaker_source = SpeakerSource::planted;
  else if (source == "stand_in")
    c.speaker_source = SpeakerSource::stand_in;
  else
    throw std::invalid_argument("speaker_source must be 'stand_in' or 'planted'");
}

void to_json(json& j, const StageSpec& c) {
  j = {{"stage", c.stage},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"loss", loss_name(c.loss)},
       {"mask_probability", c.mask_probability},
       {"weight_decay", c.weight_decay}};
}

void from_json(const json& j, StageSpec& c) {
  std::string loss = loss_name(c.loss);
  Fields(j, "stage spec")("stage", c.stage)("steps", c.steps)("batch_size", c.batch_size)(
      "learning_rate", c.learning_rate)("loss", loss)("mask_probability", c.mask_probability)(
      "weight_decay", c.weight_decay)
      .finish();
  c.loss = parse_loss(loss);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"model", c.model},   {"stage1", c.stage1},       {"stage2", c.stage2},
       {"stage3", c.stage3}, {"clip_norm", c.clip_norm}, {"logit_lr_scale", c.logit_lr_scale},
       {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  Fields(j, "train config")("model", c.model)("stage1", c.stage1)("stage2", c.stage2)("stage3", c.stage3)(
      "clip_norm", c.clip_norm)("logit_lr_scale", c.logit_lr_scale)("seed", c.seed)
      .finish();
}

void to_json(json& j, const EvalConfig& c) {
  j = {{"batch_size", c.batch_size}, {"n_batches", c.n_batches}, {"ks", c.ks}, {"seed", c.seed}};
}

void from_json(const json& j, EvalConfig& c) {
  Fields(j, "eval config")("batch_size", c.batch_size)("n_batches", c.n_batches)("ks", c.ks)("seed", c.seed).finish();
}

void to_json(json& j, const SyntheticCorpusSpec& c) {
  j = {{"n_phoneme_types", c.n_phoneme_types},
       {"n_speakers", c.n_speakers},
       {"n_utterances", c.n_utterances},
       {"utterance_length_range", c.utterance_length_range},
       {"word_length_range", c.word_length_range},
       {"prosody_context_window", c.prosody_context_window},
       {"n_prosody_classes", c.n_prosody_classes},
       {"feature_dim", c.feature_dim},
       {"noise_std", c.noise_std},
       {"seed", c.seed},
       {"template_scale", c.template_scale},
       {"prosody_scale", c.prosody_scale},
       {"speaker_scale", c.speaker_scale},
       {"frame_noise_std", c.frame_noise_std},
       {"base_duration_range", c.base_duration_range},
       {"bpe_vocab_size", c.bpe_vocab_size}};
}

void from_json(const json& j, SyntheticCorpusSpec& c) {
  Fields(j, "corpus spec")("n_phoneme_types", c.n_phoneme_types)("n_speakers", c.n_speakers)(
      "n_utterances", c.n_utterances)("utterance_length_range", c.utterance_length_range)(
      "word_length_range", c.word_length_range)("prosody_context_window", c.prosody_context_window)(
      "n_prosody_classes", c.n_prosody_classes)("feature_dim", c.feature_dim)("noise_std", c.noise_std)(
      "seed", c.seed)("template_scale", c.template_scale)("prosody_scale", c.prosody_scale)(
      "speaker_scale", c.speaker_scale)("frame_noise_std", c.frame_noise_std)("base_duration_range", c.base_duration_range)(
      "bpe_vocab_size", c.bpe_vocab_size)
      .finish();
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace prosody
