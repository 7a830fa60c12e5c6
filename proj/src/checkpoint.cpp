#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"
#include "rearec/training.hpp"

namespace rearec::training {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

uint32_t crc32(const uint8_t* data, size_t size) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int b = 0; b < 8; ++b) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < size; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

namespace {

json encoder_to_json(const EncoderConfig& c) {
  return {{"d", c.d},         {"layers", c.layers},
          {"heads", c.heads}, {"n_max", c.n_max},
          {"k_max", c.k_max}, {"mask_mode", encoder::mask_mode_name(c.mask_mode)},
          {"dropout", c.dropout}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.d = j.at("d").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.n_max = j.at("n_max").get<int>();
  c.k_max = j.at("k_max").get<int>();
  c.mask_mode = encoder::mask_mode_from_name(j.at("mask_mode").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  return c;
}

json train_to_json(const TrainConfig& c) {
  return {{"objective", objectives::objective_name(c.objective)},
          {"k_steps", c.k_steps},
          {"lambda", c.lambda},
          {"tau", c.tau},
          {"alpha", c.alpha},
          {"gamma", c.gamma},
          {"tau_c", c.tau_c},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.objective = objectives::objective_from_name(j.at("objective").get<std::string>());
  c.k_steps = j.at("k_steps").get<int>();
  c.lambda = j.at("lambda").get<double>();
  c.tau = j.at("tau").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.tau_c = j.at("tau_c").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError("checkpoint truncated while reading header");
  return v;
}

uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError("checkpoint truncated while reading header");
  return v;
}

std::string read_block(std::istream& in, uint64_t len, const char* what) {
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  return s;
}

}  // namespace

void save_checkpoint(const ModelParams<float>& params, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  json meta_json;
  meta_json["encoder"] = encoder_to_json(meta.encoder);
  meta_json["train"] = train_to_json(meta.train);
  meta_json["epoch"] = meta.epoch;
  meta_json["item_count"] = meta.item_count;
  json hist = json::array();
  for (const EpochStats& e : meta.history)
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"valid_metric", e.valid_metric}});
  meta_json["history"] = std::move(hist);

  json index = json::array();
  std::string payload;
  auto& mutable_params = const_cast<ModelParams<float>&>(params);
  mutable_params.for_each_tensor([&](const std::string& name, Tensor<float>& t) {
    const size_t bytes = t.size() * sizeof(float);
    const uint64_t offset = payload.size();
    payload.resize(payload.size() + bytes);
    std::memcpy(payload.data() + offset, t.data().data(), bytes);
    index.push_back({{"name", name},
                     {"rows", t.rows()},
                     {"cols", t.cols()},
                     {"offset", offset},
                     {"bytes", bytes},
                     {"crc32", crc32(reinterpret_cast<const uint8_t*>(payload.data()) + offset,
                                     bytes)}});
  });

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_u32(out, kCheckpointVersion);
  const std::string meta_text = meta_json.dump();
  write_u64(out, meta_text.size());
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  const std::string index_text = index.dump();
  write_u64(out, index_text.size());
  out.write(index_text.data(), static_cast<std::streamsize>(index_text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

std::pair<ModelParams<float>, CheckpointMeta> load_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());

  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw FormatError("bad checkpoint magic, expected REAREC\\x01");
  const uint32_t version = read_u32(in);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  json meta_json, index;
  try {
    meta_json = json::parse(read_block(in, read_u64(in), "metadata"));
    index = json::parse(read_block(in, read_u64(in), "tensor index"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  CheckpointMeta meta;
  try {
    meta.encoder = encoder_from_json(meta_json.at("encoder"));
    meta.train = train_from_json(meta_json.at("train"));
    meta.epoch = meta_json.at("epoch").get<int>();
    meta.item_count = meta_json.at("item_count").get<int>();
    for (const json& e : meta_json.at("history"))
      meta.history.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                              e.at("valid_metric").get<double>()});
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata incomplete: ") + e.what());
  }

  struct Entry {
    int rows, cols;
    uint64_t offset, bytes;
    uint32_t crc;
  };
  std::map<std::string, Entry> entries;
  std::vector<std::pair<uint64_t, uint64_t>> spans;
  for (const json& e : index) {
    Entry ent{e.at("rows").get<int>(), e.at("cols").get<int>(),
              e.at("offset").get<uint64_t>(), e.at("bytes").get<uint64_t>(),
              e.at("crc32").get<uint32_t>()};
    if (ent.offset + ent.bytes > payload.size())
      throw FormatError("tensor index offset out of bounds: " + e.at("name").get<std::string>());
    spans.emplace_back(ent.offset, ent.offset + ent.bytes);
    entries[e.at("name").get<std::string>()] = ent;
  }
  std::sort(spans.begin(), spans.end());
  for (size_t i = 1; i < spans.size(); ++i)
    if (spans[i].first < spans[i - 1].second)
      throw FormatError("tensor index entries overlap");

  ModelParams<float> params = init_params<float>(meta.encoder, meta.item_count, 0);
  params.for_each_tensor([&](const std::string& name, Tensor<float>& t) {
    auto it = entries.find(name);
    if (it == entries.end()) throw FormatError("checkpoint missing tensor: " + name);
    const Entry& ent = it->second;
    if (ent.rows != t.rows() || ent.cols != t.cols())
      throw FormatError("checkpoint tensor shape mismatch: " + name);
    if (ent.bytes != t.size() * sizeof(float))
      throw FormatError("checkpoint tensor byte size mismatch: " + name);
    const uint8_t* src = reinterpret_cast<const uint8_t*>(payload.data()) + ent.offset;
    if (crc32(src, ent.bytes) != ent.crc)
      throw IntegrityError("checkpoint payload checksum mismatch: " + name);
    std::memcpy(t.data().data(), src, ent.bytes);
  });
  return {std::move(params), std::move(meta)};
}

}  // namespace rearec::training
