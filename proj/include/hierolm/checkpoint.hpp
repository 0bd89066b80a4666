#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hierolm/corpus.hpp"
#include "hierolm/model.hpp"
#include "json.hpp"

namespace hierolm {

/// File layout, all integers little-endian:
///   "HLM1"  magic
///   u8      format version (1)
///   u32     header length N
///   N bytes UTF-8 JSON header: architecture, dims, vocab, config, params
///           (name, rows, cols) in storage order
///   f32[]   each parameter array, row-major, in header order
///   u32     CRC-32 of every preceding byte
inline constexpr std::string_view kCheckpointMagic = "HLM1";
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Matrix<float> values;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  Architecture architecture = Architecture::kLstm;
  ModelDims dims;
  Vocabulary vocab;
  nlohmann::json config = nlohmann::json::object();  // training config snapshot
  std::vector<NamedArray> params;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);

/// Checks magic, version, lengths and CRC in that order. Throws BadMagic,
/// VersionMismatch, TruncatedFile, ChecksumMismatch or ParseError.
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const LanguageModel<float>& model, const Vocabulary& vocab,
                           const nlohmann::json& config = nlohmann::json::object());

/// Rebuilds the model; parameter names and shapes must match the architecture.
std::unique_ptr<LanguageModel<float>> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace hierolm
