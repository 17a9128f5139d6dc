#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "freqclick/freqnet.h"
#include "freqclick/train.h"

namespace freqclick {

// `git describe` of the source tree at configure time, or "unknown".
const char* build_describe();

// Writes the parameters with the NetConfig in the checkpoint meta (net.*
// keys) plus `extra_meta`, so the file alone rebuilds the model.
void save_model(const std::filesystem::path& path, const SegModel<float>& model,
                const std::map<std::string, std::string>& extra_meta = {});

// Throws FormatError on a malformed file and ConfigError when the stored
// NetConfig is invalid or missing.
std::shared_ptr<SegModel<float>> load_model(const std::filesystem::path& path);

// JSON record of a training run: NetConfig, TrainConfig, seed, build describe.
void write_run_manifest(const std::filesystem::path& path, const NetConfig& net, const TrainConfig& train,
                        std::uint64_t seed);

}  // namespace freqclick
