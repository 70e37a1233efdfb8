#pragma once
// Checkpoint directory: manifest.json plus one binary file per parameter
// group (tables, encoders, denoiser, guessers, moe) and optimizer.bin.

#include <filesystem>

#include "lgcd/model.hpp"

namespace lgcd {

inline constexpr int kCheckpointVersion = 1;

/// `extra` is merged into the manifest (epoch, metrics, ...).
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const nn::Adam* adam,
                     const json& extra = json::object());

/// Restores parameters (and optimiser state when `adam` is given). Throws
/// IntegrityError on missing files, version or shape mismatch. Returns the manifest.
json load_checkpoint(const std::filesystem::path& dir, Model& model, nn::Adam* adam);

}  // namespace lgcd
