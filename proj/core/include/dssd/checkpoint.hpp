#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dssd/graph.hpp"
#include "dssd/pyramid_spec.hpp"
#include "dssd/tensor.hpp"

namespace dssd {

enum class Stage { kSsd, kDssdStage1, kDssdStage2 };
std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kMomentumPrefix = "momentum/";

/// Everything needed to rebuild and resume a network. Tensors hold the graph
/// parameters (including running statistics) in graph order, followed by
/// optimizer velocity buffers named "momentum/<parameter>".
struct Checkpoint {
  Stage stage = Stage::kSsd;
  PyramidSpec spec;
  std::string fingerprint;
  std::int64_t iteration = 0;
  std::string rng_state;
  bool folded = false;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(std::string_view name) const;
};

/// Layout: "DSSDCKPT", u32 version, u32 manifest length, JSON manifest,
/// little-endian float32 tensor data, u32 CRC32 of all preceding bytes.
std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, version, manifest, length or CRC.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies all parameters and running statistics of `graph`.
Checkpoint capture(const NetworkGraph& graph, const PyramidSpec& spec, Stage stage);

/// Writes checkpoint tensors into `graph`. Every graph parameter must be
/// present with a matching shape; extra tensors other than momentum buffers
/// are rejected. Throws SpecError on fingerprint or parameter mismatch.
void load_into(NetworkGraph& graph, const Checkpoint& ckpt);

/// Rebuilds the graph the checkpoint was captured from (SSD or DSSD, folded
/// or not) and loads its tensors. DSSD stage-1 graphs come back with their
/// encoder frozen.
NetworkGraph build_graph(const Checkpoint& ckpt);

}  // namespace dssd
