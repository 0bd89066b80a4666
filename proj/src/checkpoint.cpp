#include "hierolm/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

#include "hierolm/error.hpp"

namespace hierolm {
namespace {

static_assert(std::numeric_limits<float>::is_iec559, "checkpoints store IEEE-754 floats");

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large files.
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

nlohmann::json dims_json(const ModelDims& d) {
  return {{"vocab_size", d.vocab_size},
          {"embed_size", d.embed_size},
          {"hidden_size", d.hidden_size},
          {"context_order", d.context_order}};
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : ckpt.params)
    params.push_back({{"name", p.name}, {"rows", p.values.rows()}, {"cols", p.values.cols()}});
  const nlohmann::json header = {{"architecture", architecture_name(ckpt.architecture)},
                                 {"dims", dims_json(ckpt.dims)},
                                 {"vocab", ckpt.vocab.tokens()},
                                 {"config", ckpt.config},
                                 {"params", params}};
  const std::string text = header.dump();

  std::string out(kCheckpointMagic);
  out.push_back(static_cast<char>(kCheckpointVersion));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& p : ckpt.params) {
    for (float f : p.values.values()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  put_u32(out, crc_of(out));
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw Error(ErrorCode::kBadMagic, "not a hierolm checkpoint");
  std::size_t at = kCheckpointMagic.size();
  if (bytes.size() < at + 1) throw Error(ErrorCode::kTruncatedFile, "missing format version");
  const auto version = static_cast<std::uint8_t>(bytes[at]);
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::kVersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kCheckpointVersion));
  ++at;
  if (bytes.size() < at + 4) throw Error(ErrorCode::kTruncatedFile, "missing header length");
  const std::size_t header_len = get_u32(bytes, at);
  at += 4;
  if (bytes.size() < at + header_len + 4)
    throw Error(ErrorCode::kTruncatedFile, "header of " + std::to_string(header_len) + " bytes exceeds file");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(at, header_len));
  } catch (const nlohmann::json::exception& e) {
    // A flipped header byte usually breaks the JSON; report it as corruption
    // when the CRC disagrees.
    if (crc_of(bytes.substr(0, bytes.size() - 4)) != get_u32(bytes, bytes.size() - 4))
      throw Error(ErrorCode::kChecksumMismatch, "checkpoint header is corrupt");
    throw Error(ErrorCode::kParseError, std::string("checkpoint header: ") + e.what());
  }
  at += header_len;

  Checkpoint ckpt;
  std::size_t floats = 0;
  try {
    ckpt.architecture = parse_architecture(header.at("architecture").get<std::string>());
    const auto& d = header.at("dims");
    ckpt.dims = ModelDims{d.at("vocab_size").get<std::size_t>(), d.at("embed_size").get<std::size_t>(),
                          d.at("hidden_size").get<std::size_t>(), d.at("context_order").get<std::size_t>()};
    ckpt.vocab = Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    ckpt.config = header.at("config");
    for (const auto& p : header.at("params")) {
      const auto rows = p.at("rows").get<std::size_t>(), cols = p.at("cols").get<std::size_t>();
      ckpt.params.push_back({p.at("name").get<std::string>(), Matrix<float>(rows, cols)});
      floats += rows * cols;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("checkpoint header: ") + e.what());
  }

  const std::size_t expected = at + 4 * floats + 4;
  if (bytes.size() < expected)
    throw Error(ErrorCode::kTruncatedFile, "expected " + std::to_string(expected) + " bytes, file has " +
                                               std::to_string(bytes.size()));
  if (bytes.size() > expected)
    throw Error(ErrorCode::kParseError, std::to_string(bytes.size() - expected) + " trailing bytes after checksum");
  const std::uint32_t stored = get_u32(bytes, expected - 4);
  const std::uint32_t actual = crc_of(bytes.substr(0, expected - 4));
  if (stored != actual) throw Error(ErrorCode::kChecksumMismatch, "checkpoint CRC mismatch");

  for (auto& p : ckpt.params) {
    for (float& f : p.values.values()) {
      f = std::bit_cast<float>(get_u32(bytes, at));
      at += 4;
    }
  }
  if (ckpt.vocab.size() != ckpt.dims.vocab_size)
    throw Error(ErrorCode::kParseError, "vocab has " + std::to_string(ckpt.vocab.size()) + " tokens, dims say " +
                                            std::to_string(ckpt.dims.vocab_size));
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

Checkpoint make_checkpoint(const LanguageModel<float>& model, const Vocabulary& vocab, const nlohmann::json& config) {
  if (vocab.size() != model.dims().vocab_size)
    throw Error(ErrorCode::kShapeMismatch, "vocabulary size does not match model");
  Checkpoint ckpt;
  ckpt.architecture = model.architecture();
  ckpt.dims = model.dims();
  ckpt.vocab = vocab;
  ckpt.config = config;
  for (const auto& p : model.parameters()) ckpt.params.push_back({p.name, p.value});
  return ckpt;
}

std::unique_ptr<LanguageModel<float>> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = make_model<float>(ckpt.architecture, ckpt.dims, InitOptions{});
  auto& params = model->parameters();
  if (params.size() != ckpt.params.size())
    throw Error(ErrorCode::kShapeMismatch, "checkpoint has " + std::to_string(ckpt.params.size()) +
                                               " arrays, architecture expects " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedArray& src = ckpt.params[i];
    if (src.name != params[i].name || !src.values.same_shape(params[i].value))
      throw Error(ErrorCode::kShapeMismatch, "checkpoint array " + src.name + " " + src.values.shape_string() +
                                                 " does not match " + params[i].name + " " +
                                                 params[i].value.shape_string());
    params[i].value = src.values;
  }
  return model;
}

}  // namespace hierolm
