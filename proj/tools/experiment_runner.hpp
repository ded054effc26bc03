#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stablemv/errors.hpp"

namespace stablemv::cli {

inline constexpr const char* kVersion = "0.1.0";

// Schema or assumption-window failure in a config file.
class ConfigError : public Error {
public:
    using Error::Error;
};

struct ExperimentInfo {
    std::string name;
    std::string summary;
};

const std::vector<ExperimentInfo>& experiments();

struct Overrides {
    std::optional<std::string> experiment;
    std::optional<std::filesystem::path> out;
    std::optional<std::uint64_t> seed;
};

// A config after defaults are filled in; `effective` echoes every value used.
struct LoadedConfig {
    std::string experiment;
    std::uint64_t seed = 1;
    nlohmann::json raw;
    nlohmann::json effective;
    std::vector<std::string> errors;
    std::filesystem::path config_dir;  // base for relative file references
};

nlohmann::json read_config_file(const std::filesystem::path& path);

// Parses and checks a config without running anything.
LoadedConfig load_config(const nlohmann::json& raw, const Overrides& ov = {});

std::uint64_t fnv1a(const std::string& bytes);

// Output directory: the override, else config "output", else runs/<experiment>;
// relative paths are resolved under $STABLEMV_OUT_ROOT when it is set.
std::filesystem::path output_directory(const LoadedConfig& cfg, const Overrides& ov);

// 0 success, 1 validation failure, 2 numerical failure (diagnostics.json written).
int run_experiment(const LoadedConfig& cfg, const std::filesystem::path& out_dir, unsigned threads);

}  // namespace stablemv::cli
