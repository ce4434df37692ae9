#pragma once
// One JSON manifest per CLI run: command, config snapshot, seed, input
// digests, outputs and timing. Timestamps live only here.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ceam {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct RunManifest {
    std::string command;
    std::string config;  // canonical config text
    std::uint64_t seed = 0;
    std::map<std::string, std::string> inputs;  // path -> sha256
    std::vector<std::string> outputs;
    std::map<std::string, std::string> results;  // variant, learning_rate, ...
    std::string started_at;                       // UTC, ISO-8601
    double wall_seconds = 0;
    std::size_t batches = 0;
    double mean_batch_ms = 0;

    void add_input(const std::filesystem::path& path);
    std::string to_json() const;
    void write(const std::filesystem::path& path) const;
};

std::string utc_now_iso();

}  // namespace ceam
