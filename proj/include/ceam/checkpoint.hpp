#pragma once
// Versioned text checkpoints. Floats are written as hex literals so a
// save/load cycle reproduces every bit.

#include <filesystem>
#include <stdexcept>
#include <string>

#include "ceam/gnn.hpp"

namespace ceam {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string serialize_params(const ModelParams& params);
ModelParams parse_params(const std::string& text);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace ceam
