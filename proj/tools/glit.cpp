// glit: command-line front end for the two-stage search pipeline.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
// 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "glit/analysis.hpp"
#include "glit/errors.hpp"
#include "glit/flops.hpp"
#include "glit/io.hpp"
#include "glit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace glit;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

constexpr const char* kDatasetFile = "dataset.glds";
constexpr const char* kConfigFile = "config.txt";
constexpr const char* kCommandLog = "commands.log";

struct Globals {
  std::string config_path;
  std::string profile = "desk";
  std::string out = "glit_out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> sets;
};

std::string quote(const std::string& arg) {
  if (!arg.empty() && arg.find_first_of(" \t\"'\\$`") == std::string::npos) return arg;
  std::string q = "'";
  for (char c : arg) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

std::string invocation(int argc, char** argv) {
  std::string line;
  for (int i = 0; i < argc; ++i) line += (i ? " " : "") + quote(argv[i]);
  return line;
}

// Profile, then the config file, then --seed and --set; later wins.
PipelineConfig resolve_config(const Globals& g) {
  KeyValues file;
  if (!g.config_path.empty()) file = parse_key_values(read_file(g.config_path));
  std::string profile = g.profile;
  if (auto it = file.find("profile"); it != file.end()) {
    profile = it->second;
    file.erase(it);
  }
  PipelineConfig cfg;
  if (profile == "desk") {
    cfg = PipelineConfig::desk();
  } else if (profile == "tiny") {
    cfg = PipelineConfig::tiny();
  } else {
    throw ConfigError("unknown profile '" + profile + "' (desk or tiny)");
  }
  cfg.apply(file);
  KeyValues flags;
  for (const std::string& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    flags[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (g.seed_set) flags["seed"] = std::to_string(g.seed);
  cfg.apply(flags);
  cfg.check();
  return cfg;
}

std::string out_file(const Globals& g, const char* name) { return (fs::path(g.out) / name).string(); }

// Steps in one output directory must share a configuration.
void pin_config(const Globals& g, const PipelineConfig& cfg) {
  const std::string path = out_file(g, kConfigFile);
  const std::string text = cfg.to_text();
  if (fs::exists(path)) {
    const std::string old = read_file(path);
    if (old != text) {
      throw ConfigError(path + " was written with a different configuration (hash " +
                        config_hash(old) + ", now " + config_hash(text) +
                        "); pass the same --config/--seed/--set flags or use a new --out directory");
    }
  } else {
    write_file_atomic(path, text);
  }
}

// A file (default <out>/final_genotype.txt) or a literal genotype string,
// checked against the configured search space.
Genotype genotype_arg(const Globals& g, const PipelineConfig& cfg, const std::string& text) {
  const std::string src = text.empty() ? out_file(g, artifact::kFinalGenotype) : text;
  Genotype geno;
  if (text.empty() || fs::exists(src)) {
    std::string s = read_file(src);
    geno = Genotype::parse(s.substr(0, s.find_first_of("\r\n")));
  } else {
    // A bad literal is a usage error, not a damaged file.
    try {
      geno = Genotype::parse(src);
    } catch (const FormatError& e) {
      throw ConfigError(std::string("--genotype: ") + e.what());
    }
  }
  require_valid(geno, cfg.space);
  return geno;
}

std::string fixed(double v, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

void run_pipeline_step(const Globals& g, const PipelineConfig& cfg, const std::string& step) {
  pin_config(g, cfg);
  const DatasetSplit data = load_pipeline_data(cfg);
  std::cerr << "running " << step << '\n';
  run_step(cfg, data, g.out, step);
  std::cout << step << " wrote " << out_file(g, step_output(step)) << '\n';
}

int exit_code_for(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const ConfigError& x) {
    std::cerr << "config error: " << x.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& x) {
    std::cerr << "config error: " << x.what() << '\n';
    return kExitConfig;
  } catch (const InfeasibleError& x) {
    std::cerr << "config error: " << x.what() << '\n';
    return kExitConfig;
  } catch (const MissingArtifactError& x) {
    std::cerr << "data error: " << x.what() << '\n';
    return kExitData;
  } catch (const FormatError& x) {
    std::cerr << "data error: " << x.what() << '\n';
    return kExitData;
  } catch (const DimensionError& x) {
    std::cerr << "data error: " << x.what() << '\n';
    return kExitData;
  } catch (const NumericError& x) {
    std::cerr << "numeric failure: " << x.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& x) {
    std::cerr << "error: " << x.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GLiT global-local transformer search"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "key=value config file (profile=desk|tiny selects the base)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_option("--profile", g.profile, "base profile: desk or tiny")
      ->capture_default_str()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_option("--out", g.out, "output directory")
      ->capture_default_str()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  auto* seed_opt = app.add_option("--seed", g.seed, "master seed")
                       ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_option("--set", g.sets, "override one config key: key=value (repeatable)");

  int stage = 0;
  std::string genotype_text;
  std::string model_path;
  std::string file_path;
  std::string stop_after;
  std::size_t index = 0;

  auto* gen_data = app.add_subcommand("gen-data", "generate the synthetic dataset file");
  gen_data->add_option("--file", file_path, "output file (default <out>/dataset.glds)");

  auto* train_sn = app.add_subcommand("train-supernet", "train the stage supernet");
  train_sn->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));

  auto* search = app.add_subcommand("search", "evolutionary search over a trained supernet");
  search->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));

  auto* retrain_cmd = app.add_subcommand("retrain", "retrain the stage's top-k from scratch and pick one");
  retrain_cmd->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));

  auto* eval = app.add_subcommand("eval", "val and test accuracy of a model checkpoint");
  eval->add_option("--model", model_path, "checkpoint (default <out>/final_model.ckpt)");

  auto* flops = app.add_subcommand("flops", "cost table of a genotype");
  flops->add_option("--genotype", genotype_text, "genotype string or file (default <out>/final_genotype.txt); must lie in the configured space");

  auto* describe = app.add_subcommand("describe", "architecture table and head bars");
  describe->add_option("--genotype", genotype_text, "genotype string or file (default <out>/final_genotype.txt); must lie in the configured space");

  auto* heat = app.add_subcommand("heatmap", "token heat map of one test image as PGM");
  heat->add_option("--model", model_path, "checkpoint (default <out>/final_model.ckpt)");
  heat->add_option("--index", index, "test-split image index")->capture_default_str();
  heat->add_option("--file", file_path, "output PGM (default <out>/heatmap_<index>.pgm)");

  auto* full = app.add_subcommand("full-pipeline", "run or resume every step");
  full->add_option("--stop-after", stop_after, "stop once this step has finished");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    const PipelineConfig cfg = resolve_config(g);
    fs::create_directories(g.out);
    const std::string line = invocation(argc, argv);
    write_manifest(g.out, line, cfg.to_text(), cfg.seed);
    std::ofstream(out_file(g, kCommandLog), std::ios::app) << line << '\n';

    const std::string model_file = model_path.empty() ? out_file(g, artifact::kFinalModel) : model_path;
    const std::string prefix = "stage" + std::to_string(stage) + "-";

    if (*gen_data) {
      SyntheticSpec spec{cfg.model.image.channels, cfg.model.image.width, cfg.model.image.height,
                         cfg.model.num_classes};
      const Dataset ds = gen_synthetic(cfg.data_kind, cfg.data_size, spec, cfg.seed);
      const std::string path = file_path.empty() ? out_file(g, kDatasetFile) : file_path;
      save_dataset(path, ds);
      std::cout << "wrote " << ds.size() << " " << synthetic_name(cfg.data_kind) << " images to " << path
                << "\nuse it with --set data=" << path << '\n';
    } else if (*train_sn) {
      run_pipeline_step(g, cfg, prefix + "supernet");
    } else if (*search) {
      run_pipeline_step(g, cfg, prefix + "search");
    } else if (*retrain_cmd) {
      run_pipeline_step(g, cfg, prefix + "retrain");
    } else if (*eval) {
      const GlitModel model = model_from_checkpoint(load_checkpoint(model_file));
      const DatasetSplit data = load_pipeline_data(cfg);
      std::cout << "genotype  " << model.genotype().to_string() << '\n'
                << "val_acc   " << fixed(evaluate_model(model, data.val)) << '\n'
                << "test_acc  " << fixed(evaluate_model(model, data.test)) << '\n';
    } else if (*flops) {
      const Genotype geno = genotype_arg(g, cfg, genotype_text);
      const CostReport report = cost_model(geno, cfg.model);
      std::cout << report.table() << report.machine_line() << '\n';
    } else if (*describe) {
      std::cout << describe_arch(genotype_arg(g, cfg, genotype_text));
    } else if (*heat) {
      const GlitModel model = model_from_checkpoint(load_checkpoint(model_file));
      const DatasetSplit data = load_pipeline_data(cfg);
      if (index >= data.test.size()) {
        throw ConfigError("--index " + std::to_string(index) + " but the test split has " +
                          std::to_string(data.test.size()) + " images");
      }
      std::vector<double> image;
      for (std::uint8_t p : data.test.image(index)) image.push_back(p / 255.0);
      const GrayImage map = heatmap(model, image);
      const std::string path =
          file_path.empty() ? out_file(g, ("heatmap_" + std::to_string(index) + ".pgm").c_str()) : file_path;
      write_file_atomic(path, encode_pgm(map));
      std::cout << "wrote " << map.width << "x" << map.height << " heat map to " << path << '\n';
    } else if (*full) {
      pin_config(g, cfg);
      PipelineOptions opts{g.out, stop_after, [](const std::string& msg) { std::cerr << msg << '\n'; }};
      const PipelineResult res = run_full_pipeline(cfg, opts);
      if (res.complete) {
        std::cout << "final_genotype " << res.final_genotype.to_string() << '\n'
                  << "val_acc        " << fixed(res.val_accuracy) << '\n'
                  << "test_acc       " << fixed(res.test_accuracy) << '\n'
                  << "report         " << out_file(g, artifact::kReport) << '\n';
      } else {
        std::cout << "stopped after " << stop_after << '\n';
      }
    }
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
  return 0;
}
