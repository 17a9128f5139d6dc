#include "freqclick/model_io.h"

#include <fstream>

#include "freqclick/checkpoint.h"
#include "json.hpp"

#ifndef FREQCLICK_GIT_DESCRIBE
#define FREQCLICK_GIT_DESCRIBE "unknown"
#endif

namespace freqclick {

const char* build_describe() { return FREQCLICK_GIT_DESCRIBE; }

void save_model(const std::filesystem::path& path, const SegModel<float>& model,
                const std::map<std::string, std::string>& extra_meta) {
  auto meta = model.config().to_kv();
  for (const auto& [k, v] : extra_meta) meta[k] = v;
  write_checkpoint(path, make_checkpoint(model.params(), std::move(meta)));
}

std::shared_ptr<SegModel<float>> load_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  std::map<std::string, std::string> net_kv;
  for (const auto& [k, v] : ckpt.meta) {
    if (k.rfind("net.", 0) == 0) net_kv[k] = v;
  }
  if (net_kv.empty()) throw ConfigError("checkpoint " + path.string() + " carries no net.* configuration");
  const NetConfig cfg = NetConfig::from_kv(net_kv);
  cfg.validate();
  auto model = std::make_shared<SegModel<float>>(cfg, 0);
  load_parameters(ckpt, model->params());
  return model;
}

void write_run_manifest(const std::filesystem::path& path, const NetConfig& net, const TrainConfig& train,
                        std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["format"] = "freqclick-run 1";
  j["net"] = net.to_kv();
  j["train"] = train.to_kv();
  j["seed"] = seed;
  j["git_describe"] = build_describe();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

}  // namespace freqclick
