#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xcond/model.hpp"
#include "xcond/optimizer.hpp"
#include "xcond/training.hpp"

namespace xcond {

/// File layout:
///   8 bytes   magic "XCONDCK1"
///   8 bytes   manifest length n, little-endian
///   n bytes   manifest, UTF-8 JSON
///   rest      tensor blob: float32 little-endian, row-major, in index order
inline constexpr char kCheckpointMagic[8] = {'X', 'C', 'O', 'N', 'D', 'C', 'K', '1'};
inline constexpr int kCheckpointFormatVersion = 1;

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

/// Where a checkpoint came from. A fine-tuned checkpoint names its parent by
/// the parent file's SHA-256 and carries the parent's provenance, so the chain
/// can be read back from the child alone.
struct Provenance {
  /// "init", "pretrain" or "finetune".
  std::string stage = "init";
  std::uint64_t init_seed = 0;
  std::optional<TrainRunConfig> run;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::string stop_reason;
  std::optional<std::string> parent_sha256;
  /// The parent's provenance object, or null.
  nlohmann::json parent;
};

struct Checkpoint {
  EncoderConfig config;
  Parameters params;
  std::string vocab_sha256;
  /// File name of the vocabulary next to the checkpoint, informational.
  std::string vocab_file;
  Provenance provenance;
  /// Adam moments and step; stored when present.
  std::optional<OptimizerState> optimizer;
};

std::string serialize_checkpoint(const Checkpoint& ck);
/// Throws FormatError on a bad header or manifest and IntegrityError when the
/// blob is truncated, oversized, or fails its hash.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct CheckpointSummary {
  nlohmann::json manifest;
  std::vector<TensorEntry> tensors;
  std::string file_sha256;
  /// Outermost first: this checkpoint, then its parent, and so on.
  std::vector<nlohmann::json> provenance_chain;
};

/// Reads and verifies a checkpoint without materializing parameters.
CheckpointSummary inspect_checkpoint(const std::filesystem::path& path);
std::string format_summary(const CheckpointSummary& summary);

nlohmann::json to_json(const Provenance& p);

}  // namespace xcond
