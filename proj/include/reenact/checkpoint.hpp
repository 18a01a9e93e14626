#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace reenact {

/// Versioned binary container shared by every saved model.
///
/// Layout (little-endian):
///   "RNCKPT\0\0"  u32 version
///   str kind  str config_json  str config_hash  u64 epoch
///   u32 section_count, then per section:
///     str tag  u32 tensor_count, then per tensor:
///       str name  u8 dtype  u32 ndim  i64 dims[ndim]  raw bytes
/// where str is u32 length + bytes. dtype: 0 = f32, 1 = f64, 2 = i64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  torch::Tensor value;
};

struct CheckpointSection {
  std::string tag;
  std::vector<NamedTensor> tensors;
};

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::string config_hash;
  std::uint64_t epoch = 0;
  std::vector<CheckpointSection> sections;

  bool has_section(const std::string& tag) const;
  /// Throws a data error naming the missing tag.
  const CheckpointSection& section(const std::string& tag) const;
};

/// Hash of the canonical (sorted-key) config dump.
std::string config_hash(const nlohmann::json& config);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Validates magic, version and that the stored hash matches the stored config.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Also checks `kind` when non-empty.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& kind = {});

/// Parameters then buffers of `module`, under their registered names.
CheckpointSection module_section(const std::string& tag, const torch::nn::Module& module);
/// Copies values into `module`; every parameter and buffer must be present with a matching shape.
void restore_module(const CheckpointSection& section, torch::nn::Module& module);

/// Adam moments and step counts for the parameters of `owner`, keyed by parameter name.
/// `owner` must be the module whose parameters the optimizer was built from.
CheckpointSection adam_section(const std::string& tag, torch::optim::Adam& optimizer,
                               const torch::nn::Module& owner);
void restore_adam(const CheckpointSection& section, torch::optim::Adam& optimizer,
                  const torch::nn::Module& owner);

}  // namespace reenact
