#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cpga/model.hpp"

namespace cpga::train {

// On-disk layout: "CPGA" magic, u32 format version, u64 JSON header length,
// the JSON header (config, provenance, tensor directory with byte offsets),
// then the raw little-endian float32 payloads in directory order.
struct Checkpoint {
    model::CpgaConfig config;
    std::vector<std::pair<std::string, Tensor>> tensors;
    nlohmann::json provenance = nlohmann::json::array();
};

inline constexpr uint32_t kCheckpointVersion = 1;

nlohmann::json config_to_json(const model::CpgaConfig& cfg);
model::CpgaConfig config_from_json(const nlohmann::json& j);

// Copies the net's current weights into a checkpoint.
Checkpoint snapshot(const model::CpgaNet& net, nlohmann::json provenance);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Builds a net from the checkpoint's stored config and weights.
model::CpgaNet restore(const Checkpoint& ckpt, uint64_t seed = 0);

// Loads weights into an existing net. The net's config must match the
// checkpoint's in every architecture-affecting field (the DGF wrapper flags
// may differ: they do not change the parameter set).
void apply_weights(const Checkpoint& ckpt, model::CpgaNet& net);

} // namespace cpga::train
