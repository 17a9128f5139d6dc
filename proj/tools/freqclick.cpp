// Command-line entry point: generate, train, evaluate, ablate, serve.
//
// Configuration precedence, lowest to highest: built-in defaults, the
// --config file (flat key=value lines, '#' comments), --set key=value, then
// dedicated flags. Exit codes: 0 success, 2 configuration error, 3 runtime
// or training error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "freqclick/ablate.h"
#include "freqclick/checkpoint.h"
#include "freqclick/model_io.h"
#include "freqclick/service.h"

namespace fs = std::filesystem;
using namespace freqclick;

namespace {

using KV = std::map<std::string, std::string>;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Keys that are not part of a library config struct.
const KV kRunDefaults = {
    {"run.out", ""},           {"run.data", ""},        {"run.checkpoint", ""}, {"run.split", "test"},
    {"run.n", "300"},          {"run.n_val", "0"},      {"run.n_test", "0"},    {"run.seeds", "1,2,3"},
    {"run.host", "127.0.0.1"}, {"run.port", "8080"},    {"run.max_height", "512"},
    {"run.max_width", "512"},  {"run.ttl_minutes", "30"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::pair<std::string, std::string> split_kv(const std::string& line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
    throw ConfigError(where + ": expected key=value, got '" + line + "'");
  }
  return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
}

KV read_config_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  KV kv;
  std::string line;
  for (int n = 1; std::getline(f, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto [k, v] = split_kv(line, path.string() + ":" + std::to_string(n));
    kv[k] = v;
  }
  return kv;
}

KV defaults() {
  KV kv = kRunDefaults;
  for (const auto& m : {GenConfig{}.to_kv(), TrainConfig{}.to_kv(), NetConfig{}.to_kv(), EvalConfig{}.to_kv()}) {
    kv.insert(m.begin(), m.end());
  }
  kv["eval.workers"] = "1";
  return kv;
}

KV with_prefix(const KV& kv, const std::string& prefix) {
  KV out;
  for (const auto& [k, v] : kv) {
    if (k.rfind(prefix, 0) == 0) out[k] = v;
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoull(trim(tok)));
    } catch (const std::exception&) {
      throw ConfigError("run.seeds must be comma-separated integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("run.seeds is empty");
  return out;
}

long long parse_long(const KV& kv, const std::string& key) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoll(kv.at(key), &pos);
    if (pos == kv.at(key).size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("bad value for " + key + ": '" + kv.at(key) + "'");
}

Split parse_split(const std::string& s) {
  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (s == split_name(sp)) return sp;
  }
  throw ConfigError("split must be train, val or test, got '" + s + "'");
}

// Output root: --out, else $FREQCLICK_OUT/<subcommand>, else ./freqclick-runs/<subcommand>.
fs::path out_dir(const KV& kv, const std::string& sub) {
  if (!kv.at("run.out").empty()) return kv.at("run.out");
  const char* env = std::getenv("FREQCLICK_OUT");
  return fs::path(env && *env ? env : "freqclick-runs") / sub;
}

fs::path data_dir(const KV& kv) {
  if (!kv.at("run.data").empty()) return kv.at("run.data");
  const char* env = std::getenv("FREQCLICK_OUT");
  return fs::path(env && *env ? env : "freqclick-runs") / "data";
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

void echo_config(std::ostream& os, const KV& kv) {
  for (const auto& [k, v] : kv) os << "config." << k << '=' << v << '\n';
}

// Flags, the --set list and the config file, folded in precedence order.
struct ConfigSources {
  std::string file;
  std::vector<std::string> sets;
  KV flags;

  KV resolve() const {
    KV kv = defaults();
    const std::set<std::string> known = [&] {
      std::set<std::string> s;
      for (const auto& [k, _] : kv) s.insert(k);
      return s;
    }();
    auto apply = [&](const std::string& k, const std::string& v, const std::string& from) {
      if (!known.count(k)) throw ConfigError("unknown configuration key '" + k + "' (" + from + ")");
      kv[k] = v;
    };
    if (!file.empty()) {
      for (const auto& [k, v] : read_config_file(file)) apply(k, v, file);
    }
    for (const auto& s : sets) {
      const auto [k, v] = split_kv(s, "--set");
      apply(k, v, "--set");
    }
    for (const auto& [k, v] : flags) apply(k, v, "flag");
    return kv;
  }
};

// Registers `flag` as an override of `key`.
void flag(CLI::App* app, ConfigSources& src, const std::string& name, const std::string& key,
          const std::string& help) {
  app->add_option_function<std::string>(name, [&src, key](const std::string& v) { src.flags[key] = v; }, help);
}

void common_flags(CLI::App* app, ConfigSources& src) {
  app->add_option("--config", src.file, "Flat key=value configuration file");
  app->add_option("--set", src.sets, "Override one configuration key (key=value), repeatable");
  flag(app, src, "--out", "run.out", "Output directory");
}

std::shared_ptr<const ModelRunner> load_runner(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  return std::make_shared<ModelRunner>(load_model(path));
}

// Refiner for evaluation; `holder` keeps the model-backed instance alive.
const Refiner& make_refiner(const KV& kv, RefinerMode mode, std::unique_ptr<Refiner>& holder) {
  const std::string& ckpt = kv.at("run.checkpoint");
  if (mode == RefinerMode::kModel) {
    if (ckpt.empty()) throw ConfigError("model refiner needs --checkpoint");
    holder = std::make_unique<ModelRefiner>(load_runner(ckpt));
  } else {
    holder = std::make_unique<OracleRefiner>(ckpt.empty() ? nullptr : load_runner(ckpt));
  }
  return *holder;
}

std::vector<Sample> load(const KV& kv, Split split) {
  const Dataset ds = read_dataset(data_dir(kv));
  auto samples = load_split(ds, split);
  if (samples.empty()) throw ConfigError(std::string("dataset has no ") + split_name(split) + " samples");
  return samples;
}

// Echoed configs describe what actually ran: gen.* comes from the dataset
// manifest, and net.* / train.* from the checkpoint when one is given.
KV adopt_inputs(KV kv) {
  if (fs::exists(data_dir(kv) / "manifest.json")) {
    for (const auto& [k, v] : read_dataset(data_dir(kv)).config.to_kv()) kv[k] = v;
  }
  if (const auto& ckpt = kv.at("run.checkpoint"); !ckpt.empty() && fs::exists(ckpt)) {
    for (const auto& [k, v] : read_checkpoint(ckpt).meta) {
      if (kv.count(k) && (k.rfind("net.", 0) == 0 || k.rfind("train.", 0) == 0)) kv[k] = v;
    }
  }
  return kv;
}

// A trained model's input extents follow its dataset.
void follow_dataset_extents(KV& kv) {
  kv["net.height"] = kv.at("gen.height");
  kv["net.width"] = kv.at("gen.width");
  kv["net.image_channels"] = kv.at("gen.channels");
}

int cmd_generate(const KV& kv) {
  const GenConfig cfg = GenConfig::from_kv(with_prefix(kv, "gen."));
  const long long n = parse_long(kv, "run.n"), n_val = parse_long(kv, "run.n_val"),
                  n_test = parse_long(kv, "run.n_test");
  if (n < 1 || n_val < 0 || n_test < 0 || n_val + n_test > n) {
    throw ConfigError("need n >= 1 and n_val + n_test <= n");
  }
  const fs::path dir = data_dir(kv);
  const auto ds = write_dataset(dir, cfg, static_cast<std::size_t>(n - n_val - n_test),
                                static_cast<std::size_t>(n_val), static_cast<std::size_t>(n_test));
  std::cout << "wrote " << ds.entries.size() << " samples to " << (dir / "manifest.json").string() << '\n';
  return 0;
}

int cmd_train(const KV& in) {
  KV kv = adopt_inputs(in);
  follow_dataset_extents(kv);
  const NetConfig net = NetConfig::from_kv(with_prefix(kv, "net."));
  const TrainConfig tc = TrainConfig::from_kv(with_prefix(kv, "train."));
  const auto data = load(kv, Split::kTrain);
  const fs::path dir = out_dir(kv, "train");
  fs::create_directories(dir);

  SegModel<float> model(net, tc.seed);
  auto loss_csv = open_out(dir / "loss.csv");
  loss_csv << "epoch,loss\n";
  const auto result = train(model, data, tc, [&](int epoch, double loss) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%d,%.8f", epoch, loss);
    loss_csv << buf << '\n' << std::flush;
    std::cerr << "epoch " << epoch << " loss " << loss << '\n';
  });

  save_model(dir / "model.ckpt", model, tc.to_kv());
  write_run_manifest(dir / "run.json", net, tc, tc.seed);
  std::cout << "trained " << result.steps << " steps; checkpoint " << (dir / "model.ckpt").string() << '\n';
  const Dataset ds = read_dataset(data_dir(kv));
  if (const auto val = load_split(ds, Split::kVal); !val.empty()) {
    std::cout << "val zero-click iou " << zero_click_iou(model, val) << '\n';
  }
  return 0;
}

int cmd_evaluate(const KV& in) {
  const KV kv = adopt_inputs(in);
  const EvalConfig cfg = EvalConfig::from_kv(with_prefix(kv, "eval."));
  const auto test = load(kv, parse_split(kv.at("run.split")));
  std::unique_ptr<Refiner> holder;
  const Refiner& refiner = make_refiner(kv, cfg.refiner, holder);
  const fs::path dir = out_dir(kv, "evaluate");
  fs::create_directories(dir);

  const EvalReport report = evaluate(test, refiner, cfg);
  auto csv = open_out(dir / "trajectories.csv");
  report.write_trajectories_csv(csv);
  auto summary = open_out(dir / "summary.txt");
  report.write_summary(summary, kv);
  const auto s = report.summary();
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    std::cout << "noc@" << static_cast<int>(s.thresholds[i] * 100 + 0.5) << " " << s.mean_noc[i] << " (failures "
              << s.failures[i] << ")\n";
  }
  return 0;
}

int cmd_ablate(const KV& in, const std::string& which) {
  KV kv = adopt_inputs(in);
  const fs::path dir = out_dir(kv, "ablate");
  AblationTable table;
  if (which == "sampling" || which == "acselect-metrics") {
    const EvalConfig cfg = EvalConfig::from_kv(with_prefix(kv, "eval."));
    const auto test = load(kv, parse_split(kv.at("run.split")));
    std::unique_ptr<Refiner> holder;
    const Refiner& refiner = make_refiner(kv, cfg.refiner, holder);
    table = which == "sampling" ? ablate_sampling(test, refiner, cfg) : ablate_metrics(test, refiner, cfg);
  } else if (which == "dft-branches") {
    follow_dataset_extents(kv);
    const NetConfig net = NetConfig::from_kv(with_prefix(kv, "net."));
    const TrainConfig tc = TrainConfig::from_kv(with_prefix(kv, "train."));
    const Dataset ds = read_dataset(data_dir(kv));
    const auto train_set = load_split(ds, Split::kTrain);
    auto val = load_split(ds, Split::kVal);
    if (val.empty()) val = load_split(ds, Split::kTest);
    if (train_set.empty() || val.empty()) throw ConfigError("dft-branches needs train and val (or test) samples");
    table = ablate_branches(train_set, val, net, tc, parse_seeds(kv.at("run.seeds")),
                            [](const std::string& what) { std::cerr << what << '\n'; });
  } else {
    throw ConfigError("unknown ablation '" + which + "' (acselect-metrics, dft-branches, sampling)");
  }
  fs::create_directories(dir);
  auto csv = open_out(dir / ("ablate-" + which + ".csv"));
  table.write_csv(csv);
  auto txt = open_out(dir / ("ablate-" + which + ".txt"));
  txt << "# freqclick ablation " << which << '\n';
  echo_config(txt, kv);
  table.write_csv(txt);
  table.write_csv(std::cout);
  return 0;
}

int cmd_serve(const KV& kv) {
  ServiceConfig cfg;
  cfg.host = kv.at("run.host");
  cfg.port = static_cast<int>(parse_long(kv, "run.port"));
  cfg.max_height = static_cast<std::size_t>(parse_long(kv, "run.max_height"));
  cfg.max_width = static_cast<std::size_t>(parse_long(kv, "run.max_width"));
  cfg.ttl = std::chrono::minutes(parse_long(kv, "run.ttl_minutes"));
  cfg.click_radius = static_cast<int>(parse_long(kv, "eval.click_radius"));
  if (const auto& ckpt = kv.at("run.checkpoint"); !ckpt.empty()) {
    const std::string id = fs::path(ckpt).stem().string();
    cfg.models[id] = load_runner(ckpt);
    cfg.default_model = id;
  }
  SessionService service(cfg);
  std::cerr << "serving on " << cfg.host << ":" << cfg.port << '\n';
  service.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"freqclick: interactive segmentation benchmark"};
  app.require_subcommand(1);
  ConfigSources src;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  common_flags(gen, src);
  flag(gen, src, "--data", "run.data", "Dataset directory");
  flag(gen, src, "--n", "run.n", "Total number of samples");
  flag(gen, src, "--n-val", "run.n_val", "Samples assigned to the val split");
  flag(gen, src, "--n-test", "run.n_test", "Samples assigned to the test split");
  flag(gen, src, "--seed", "gen.seed", "Generator seed");
  flag(gen, src, "--family", "gen.family", "ellipse-union, blob or ring");
  flag(gen, src, "--fg-mean", "gen.fg_mean", "Foreground intensity mean");
  flag(gen, src, "--bg-mean", "gen.bg_mean", "Background intensity mean");
  flag(gen, src, "--noise", "gen.noise", "Additive noise sigma");
  flag(gen, src, "--contrast-jitter", "gen.contrast_jitter", "Per-shape intensity jitter");
  flag(gen, src, "--jaggedness", "gen.jaggedness", "Boundary perturbation amplitude");
  flag(gen, src, "--height", "gen.height", "Image height");
  flag(gen, src, "--width", "gen.width", "Image width");

  auto* tr = app.add_subcommand("train", "Train a model on the train split");
  common_flags(tr, src);
  flag(tr, src, "--data", "run.data", "Dataset directory");
  flag(tr, src, "--seed", "train.seed", "Initialization and shuffling seed");
  flag(tr, src, "--epochs", "train.epochs", "Epochs");
  flag(tr, src, "--lr", "train.lr", "Adam learning rate");
  flag(tr, src, "--batch", "train.batch", "Batch size");
  flag(tr, src, "--branches", "net.branches", "Enabled spectral branches as three 0/1 flags");

  auto* ev = app.add_subcommand("evaluate", "Run the robot-user click loop");
  common_flags(ev, src);
  flag(ev, src, "--data", "run.data", "Dataset directory");
  flag(ev, src, "--split", "run.split", "Split to evaluate");
  flag(ev, src, "--checkpoint", "run.checkpoint", "Model checkpoint");
  flag(ev, src, "--refiner", "eval.refiner", "model or oracle");
  flag(ev, src, "--policy", "eval.policy", "acselect, random, entropy, least-confidence, largest-region");
  flag(ev, src, "--metrics", "eval.metrics", "AcSelect metrics, e.g. mpe+ape+rgu");
  flag(ev, src, "--thresholds", "eval.thresholds", "Comma-separated IoU thresholds");
  flag(ev, src, "--cap", "eval.click_cap", "Click cap per image");
  flag(ev, src, "--radius", "eval.click_radius", "Click disk radius");
  flag(ev, src, "--workers", "eval.workers", "Worker threads");
  ev->add_option_function<std::string>(
      "--seed",
      [&src](const std::string& v) {
        src.flags["eval.seed"] = v;
        src.flags["eval.policy_seed"] = v;
      },
      "Evaluation and Random-policy seed");

  auto* ab = app.add_subcommand("ablate", "Run one ablation table");
  std::string which;
  ab->add_option("which", which, "acselect-metrics, dft-branches or sampling")->required();
  common_flags(ab, src);
  flag(ab, src, "--data", "run.data", "Dataset directory");
  flag(ab, src, "--split", "run.split", "Split to evaluate");
  flag(ab, src, "--checkpoint", "run.checkpoint", "Model checkpoint");
  flag(ab, src, "--refiner", "eval.refiner", "model or oracle");
  flag(ab, src, "--seeds", "run.seeds", "Training seeds for dft-branches");
  flag(ab, src, "--epochs", "train.epochs", "Epochs for dft-branches");
  flag(ab, src, "--workers", "eval.workers", "Worker threads");
  ab->add_option_function<std::string>(
      "--seed",
      [&src](const std::string& v) {
        src.flags["eval.seed"] = v;
        src.flags["eval.policy_seed"] = v;
      },
      "Evaluation and Random-policy seed");

  auto* sv = app.add_subcommand("serve", "Serve interactive sessions over HTTP");
  common_flags(sv, src);
  flag(sv, src, "--host", "run.host", "Bind address");
  flag(sv, src, "--port", "run.port", "Port");
  flag(sv, src, "--checkpoint", "run.checkpoint", "Model checkpoint for model-mode sessions");
  flag(sv, src, "--max-height", "run.max_height", "Largest accepted image height");
  flag(sv, src, "--max-width", "run.max_width", "Largest accepted image width");
  flag(sv, src, "--ttl-minutes", "run.ttl_minutes", "Idle session lifetime");
  flag(sv, src, "--radius", "eval.click_radius", "Click disk radius");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    const KV kv = src.resolve();
    if (gen->parsed()) return cmd_generate(kv);
    if (tr->parsed()) return cmd_train(kv);
    if (ev->parsed()) return cmd_evaluate(kv);
    if (ab->parsed()) return cmd_ablate(kv, which);
    return cmd_serve(kv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
