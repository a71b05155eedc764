// Corpus container: a line-oriented JSON manifest followed by a float32
// blob. See docs/formats.md for the byte layout.

#include "prosody/corpus.hpp"
#include "prosody/serialization.hpp"

#include <json.hpp>

#include <fstream>

namespace prosody {

namespace {

constexpr const char* kMagic = "PROSODY-CORPUS 1";
constexpr const char* kBlobMarker = "BLOB";

using nlohmann::json;

}  // namespace

std::string serialize_corpus(const Corpus& corpus) {
  std::string blob;
  json header;
  header["feature_dim"] = corpus.feature_dim;
  header["n_utterances"] = corpus.utterances.size();
  header["phonemes"] = corpus.phonemes.symbols();
  header["bpe"] = corpus.bpe.symbols();
  if (corpus.planted_speaker_offsets.size() > 0) {
    header["planted_speaker_offsets"] = {{"rows", corpus.planted_speaker_offsets.rows()},
                                         {"cols", corpus.planted_speaker_offsets.cols()},
                                         {"offset", blob.size()}};
    append_f32_le(blob, corpus.planted_speaker_offsets);
  }

  std::vector<std::string> records;
  for (const auto& u : corpus.utterances) {
    json r;
    r["id"] = u.id;
    r["speaker"] = u.speaker_id;
    r["phonemes"] = u.phonemes;
    r["bpe"] = u.bpe;
    r["phoneme_word"] = u.phoneme_word;
    r["bpe_word"] = u.bpe_word;
    json spans = json::array();
    for (const auto& s : u.alignment) spans.push_back({s.start, s.end});
    r["alignment"] = spans;
    r["frames"] = u.n_frames();
    r["offset"] = blob.size();
    append_f32_le(blob, u.features);
    records.push_back(r.dump());
  }
  header["blob_bytes"] = blob.size();

  std::string out = std::string(kMagic) + '\n' + header.dump() + '\n';
  for (const auto& r : records) out += r + '\n';
  out += std::string(kBlobMarker) + '\n';
  return out + blob;
}

std::string corpus_fingerprint(const Corpus& corpus) { return sha256_hex(serialize_corpus(corpus)); }

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  const std::string bytes = serialize_corpus(corpus);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw CorpusFormatError(-1, "bad magic line");
  if (!std::getline(in, line)) throw CorpusFormatError(-1, "missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw CorpusFormatError(-1, std::string("header is not valid JSON: ") + e.what());
  }

  Corpus corpus;
  std::size_t n = 0, blob_bytes = 0;
  try {
    corpus.feature_dim = header.at("feature_dim").get<int>();
    n = header.at("n_utterances").get<std::size_t>();
    blob_bytes = header.at("blob_bytes").get<std::size_t>();
    auto ph = header.at("phonemes").get<std::vector<std::string>>();
    auto bp = header.at("bpe").get<std::vector<std::string>>();
    if (!ph.empty()) corpus.phonemes = Vocabulary::from_symbols(std::move(ph));
    if (!bp.empty()) corpus.bpe = Vocabulary::from_symbols(std::move(bp));
  } catch (const json::exception& e) {
    throw CorpusFormatError(-1, e.what());
  } catch (const CorpusError& e) {
    throw CorpusFormatError(-1, e.what());
  }

  std::vector<json> records;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw CorpusFormatError(static_cast<int>(i), "truncated manifest");
    try {
      records.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw CorpusFormatError(static_cast<int>(i), std::string("invalid JSON: ") + e.what());
    }
  }
  if (!std::getline(in, line) || line != kBlobMarker)
    throw CorpusFormatError(static_cast<int>(n), "missing blob marker");
  std::string blob(blob_bytes, '\0');
  in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
  const auto got = static_cast<std::size_t>(in.gcount());

  if (header.contains("planted_speaker_offsets")) {
    const auto& p = header["planted_speaker_offsets"];
    const auto rows = p.at("rows").get<int>(), cols = p.at("cols").get<int>();
    const auto off = p.at("offset").get<std::size_t>();
    if (off + sizeof(float) * rows * cols > got) throw CorpusFormatError(-1, "speaker offsets truncated");
    corpus.planted_speaker_offsets = read_f32_le(blob.data() + off, rows, cols);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = records[i];
    const int rec = static_cast<int>(i);
    Utterance u;
    try {
      u.id = r.at("id").get<std::string>();
      u.speaker_id = r.at("speaker").get<int>();
      u.phonemes = r.at("phonemes").get<std::vector<int>>();
      u.bpe = r.at("bpe").get<std::vector<int>>();
      u.phoneme_word = r.at("phoneme_word").get<std::vector<int>>();
      u.bpe_word = r.at("bpe_word").get<std::vector<int>>();
      for (const auto& s : r.at("alignment")) u.alignment.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
      const int frames = r.at("frames").get<int>();
      const auto off = r.at("offset").get<std::size_t>();
      if (frames < 0) throw CorpusFormatError(rec, "negative frame count");
      if (off + sizeof(float) * static_cast<std::size_t>(frames) * corpus.feature_dim > got)
        throw CorpusFormatError(rec, "feature blob truncated");
      u.features = read_f32_le(blob.data() + off, frames, corpus.feature_dim);
    } catch (const json::exception& e) {
      throw CorpusFormatError(rec, e.what());
    }
    try {
      validate_utterance(u, corpus);
    } catch (const CorpusError& e) {
      throw CorpusFormatError(rec, e.what());
    }
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace prosody
