#include "glit/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "glit/errors.hpp"
#include "glit/flops.hpp"
#include "glit/io.hpp"
#include "glit/rng.hpp"

namespace glit {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<int> int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::istringstream is(value);
  for (std::string item; std::getline(is, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(trim(item), &used));
      if (used != trim(item).size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("bad integer list for '" + key + "': " + value);
    }
  }
  if (out.empty()) throw ConfigError("empty list for '" + key + "'");
  return out;
}

template <typename T>
T number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    T v{};
    if constexpr (std::is_same_v<T, double>) {
      v = std::stod(value, &used);
    } else if constexpr (std::is_same_v<T, int>) {
      v = std::stoi(value, &used);
    } else {
      if (!value.empty() && value[0] == '-') throw std::invalid_argument(value);
      v = static_cast<T>(std::stoull(value, &used));
    }
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad value for '" + key + "': '" + value + "'");
  }
}

bool boolean(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("bad boolean for '" + key + "': '" + value + "'");
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Seed offsets keep the random streams of the steps independent.
std::uint64_t step_seed(const PipelineConfig& cfg, int stage, int which) {
  return cfg.seed * 1000 + static_cast<std::uint64_t>(stage) * 10 + static_cast<std::uint64_t>(which);
}

Checkpoint stage_checkpoint(const PipelineConfig& cfg, const Supernet& sn, int stage) {
  Checkpoint c = supernet_checkpoint(sn);
  c.meta["epoch"] = std::to_string(cfg.supernet_train.epochs);
  c.meta["seed"] = std::to_string(step_seed(cfg, stage, 2));
  c.meta["stage"] = std::to_string(stage);
  return c;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  int lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " lacks '=': " + line);
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has no key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ConfigError("config key '" + key + "' given twice");
    }
  }
  return kv;
}

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.model.image = {3, 32, 32, 4};
  c.model.embed_dim = 48;
  c.model.num_heads = 3;
  c.model.num_blocks = 4;
  c.model.num_classes = 10;
  c.space.num_blocks = 4;
  c.space.num_heads = 3;
  c.space.qkv_dims = {24, 48, 96};
  c.space.ffn_ratios = {2, 4, 6};
  c.space.expansions = {1, 2, 4};
  c.space.kernels = {3, 5, 7};
  c.space.defaults = {48, 4, 2, 5};
  c.supernet_train.epochs = 10;
  c.supernet_train.batch_size = 64;
  c.supernet_train.lr = 0.1;
  c.supernet_train.grad_clip = 1.0;
  c.retrain = c.supernet_train;
  c.retrain.epochs = 20;
  c.ea.total_samples = 200;
  c.ea.population = 50;
  return c;
}

PipelineConfig PipelineConfig::tiny() {
  PipelineConfig c;
  c.data_size = 2480;
  c.val_size = 120;
  c.test_size = 120;
  c.model.image = {3, 16, 16, 4};
  c.model.embed_dim = 24;
  c.model.num_heads = 3;
  c.model.num_blocks = 2;
  c.model.num_classes = 4;
  c.space.num_blocks = 2;
  c.space.num_heads = 3;
  c.space.qkv_dims = {12, 24};
  c.space.ffn_ratios = {1, 2};
  c.space.expansions = {1, 2};
  c.space.kernels = {3, 5};
  c.space.defaults = {24, 2, 2, 3};
  c.supernet_train.epochs = 10;
  c.supernet_train.batch_size = 64;
  c.supernet_train.lr = 0.1;
  c.supernet_train.grad_clip = 1.0;
  c.retrain = c.supernet_train;
  c.retrain.epochs = 20;
  c.ea.total_samples = 100;
  c.ea.population = 10;
  c.ea.parents = 5;
  c.ea.mutants = 5;
  c.ea.crossovers = 5;
  c.ea.top_k = 3;
  c.ea.max_stall = 200;
  return c;
}

void PipelineConfig::apply(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "seed") seed = number<std::uint64_t>(key, value);
    else if (key == "data") data_path = value;
    else if (key == "data_kind") data_kind = parse_synthetic(value);
    else if (key == "data_size") data_size = number<std::size_t>(key, value);
    else if (key == "val_size") val_size = number<std::size_t>(key, value);
    else if (key == "test_size") test_size = number<std::size_t>(key, value);
    else if (key == "channels") model.image.channels = number<int>(key, value);
    else if (key == "width") model.image.width = number<int>(key, value);
    else if (key == "height") model.image.height = number<int>(key, value);
    else if (key == "grid") model.image.grid = number<int>(key, value);
    else if (key == "embed_dim") model.embed_dim = number<int>(key, value);
    else if (key == "heads") model.num_heads = space.num_heads = number<int>(key, value);
    else if (key == "blocks") model.num_blocks = space.num_blocks = number<int>(key, value);
    else if (key == "classes") model.num_classes = number<int>(key, value);
    else if (key == "dropout") model.dropout = number<double>(key, value);
    else if (key == "pos_emb") model.use_pos_emb = boolean(key, value);
    else if (key == "qkv_dims") space.qkv_dims = int_list(key, value);
    else if (key == "ffn_ratios") space.ffn_ratios = int_list(key, value);
    else if (key == "expansions") space.expansions = int_list(key, value);
    else if (key == "kernels") space.kernels = int_list(key, value);
    else if (key == "defaults") {
      const auto d = int_list(key, value);
      if (d.size() != 4) throw ConfigError("'defaults' needs d_k,d_z,E,K");
      space.defaults = {d[0], d[1], d[2], d[3]};
    }
    else if (key == "sn_epochs") supernet_train.epochs = number<int>(key, value);
    else if (key == "sn_batch") supernet_train.batch_size = number<std::size_t>(key, value);
    else if (key == "sn_lr") supernet_train.lr = number<double>(key, value);
    else if (key == "rt_epochs") retrain.epochs = number<int>(key, value);
    else if (key == "rt_batch") retrain.batch_size = number<std::size_t>(key, value);
    else if (key == "rt_lr") retrain.lr = number<double>(key, value);
    else if (key == "momentum") supernet_train.momentum = retrain.momentum = number<double>(key, value);
    else if (key == "nesterov") supernet_train.nesterov = retrain.nesterov = boolean(key, value);
    else if (key == "weight_decay")
      supernet_train.weight_decay = retrain.weight_decay = number<double>(key, value);
    else if (key == "label_smoothing")
      supernet_train.label_smoothing = retrain.label_smoothing = number<double>(key, value);
    else if (key == "flip") supernet_train.flip = retrain.flip = boolean(key, value);
    else if (key == "grad_clip")
      supernet_train.grad_clip = retrain.grad_clip = number<double>(key, value);
    else if (key == "ea_samples") ea.total_samples = number<std::size_t>(key, value);
    else if (key == "ea_population") ea.population = number<std::size_t>(key, value);
    else if (key == "ea_parents") ea.parents = number<std::size_t>(key, value);
    else if (key == "ea_mutation") ea.mutation_prob = number<double>(key, value);
    else if (key == "ea_mutants") ea.mutants = number<std::size_t>(key, value);
    else if (key == "ea_crossovers") ea.crossovers = number<std::size_t>(key, value);
    else if (key == "ea_top_k") ea.top_k = number<std::size_t>(key, value);
    else if (key == "ea_max_stall") ea.max_stall = number<std::size_t>(key, value);
    else if (key == "flops_budget") {
      ea.flops_budget = number<std::uint64_t>(key, value);
      if (ea.flops_budget == 0) ea.flops_budget = UINT64_MAX;
    }
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

KeyValues PipelineConfig::to_key_values() const {
  KeyValues kv;
  kv["seed"] = std::to_string(seed);
  kv["data"] = data_path;
  kv["data_kind"] = synthetic_name(data_kind);
  kv["data_size"] = std::to_string(data_size);
  kv["val_size"] = std::to_string(val_size);
  kv["test_size"] = std::to_string(test_size);
  kv["channels"] = std::to_string(model.image.channels);
  kv["width"] = std::to_string(model.image.width);
  kv["height"] = std::to_string(model.image.height);
  kv["grid"] = std::to_string(model.image.grid);
  kv["embed_dim"] = std::to_string(model.embed_dim);
  kv["heads"] = std::to_string(model.num_heads);
  kv["blocks"] = std::to_string(model.num_blocks);
  kv["classes"] = std::to_string(model.num_classes);
  kv["dropout"] = fmt(model.dropout);
  kv["pos_emb"] = model.use_pos_emb ? "1" : "0";
  kv["qkv_dims"] = join(space.qkv_dims);
  kv["ffn_ratios"] = join(space.ffn_ratios);
  kv["expansions"] = join(space.expansions);
  kv["kernels"] = join(space.kernels);
  kv["defaults"] = join({space.defaults.qkv_dim, space.defaults.ffn_ratio,
                         space.defaults.expansion, space.defaults.kernel});
  kv["sn_epochs"] = std::to_string(supernet_train.epochs);
  kv["sn_batch"] = std::to_string(supernet_train.batch_size);
  kv["sn_lr"] = fmt(supernet_train.lr);
  kv["rt_epochs"] = std::to_string(retrain.epochs);
  kv["rt_batch"] = std::to_string(retrain.batch_size);
  kv["rt_lr"] = fmt(retrain.lr);
  kv["momentum"] = fmt(retrain.momentum);
  kv["nesterov"] = retrain.nesterov ? "1" : "0";
  kv["weight_decay"] = fmt(retrain.weight_decay);
  kv["label_smoothing"] = fmt(retrain.label_smoothing);
  kv["flip"] = retrain.flip ? "1" : "0";
  kv["grad_clip"] = fmt(retrain.grad_clip);
  kv["ea_samples"] = std::to_string(ea.total_samples);
  kv["ea_population"] = std::to_string(ea.population);
  kv["ea_parents"] = std::to_string(ea.parents);
  kv["ea_mutation"] = fmt(ea.mutation_prob);
  kv["ea_mutants"] = std::to_string(ea.mutants);
  kv["ea_crossovers"] = std::to_string(ea.crossovers);
  kv["ea_top_k"] = std::to_string(ea.top_k);
  kv["ea_max_stall"] = std::to_string(ea.max_stall);
  kv["flops_budget"] = ea.flops_budget == UINT64_MAX ? "0" : std::to_string(ea.flops_budget);
  return kv;
}

std::string PipelineConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_key_values()) out += k + "=" + v + "\n";
  return out;
}

void PipelineConfig::check() const {
  model.check();
  space.check();
  supernet_train.check();
  retrain.check();
  ea.check();
  if (model.num_blocks != space.num_blocks || model.num_heads != space.num_heads) {
    throw ConfigError("model and search space disagree on blocks or heads");
  }
  if (val_size == 0) throw ConfigError("val_size must be > 0");
  if (data_path.empty() && val_size + test_size >= data_size) {
    throw ConfigError("data_size must exceed val_size + test_size");
  }
  // Defaults must be legal choices so every stage-1 genotype is buildable.
  Genotype probe;
  probe.blocks.assign(static_cast<std::size_t>(space.num_blocks),
                      BlockGene{space.num_heads, 0, space.defaults.qkv_dim, space.defaults.ffn_ratio,
                                space.defaults.expansion, space.defaults.kernel});
  require_valid(probe, stage_space(*this, 1));
}

DatasetSplit load_pipeline_data(const PipelineConfig& cfg) {
  Dataset all;
  if (cfg.data_path.empty()) {
    SyntheticSpec s{cfg.model.image.channels, cfg.model.image.width, cfg.model.image.height,
                    cfg.model.num_classes};
    all = gen_synthetic(cfg.data_kind, cfg.data_size, s, cfg.seed);
  } else {
    all = load_dataset(cfg.data_path);
  }
  all.require_shape(cfg.model.image);
  if (all.num_classes != cfg.model.num_classes) {
    throw DimensionError("dataset has " + std::to_string(all.num_classes) + " classes, model " +
                         std::to_string(cfg.model.num_classes));
  }
  return carve_split(all, cfg.val_size, cfg.test_size, cfg.seed);
}

SearchSpaceSpec stage_space(const PipelineConfig& cfg, int stage, const Genotype* high_star) {
  if (stage == 1) return stage1_space(cfg.space);
  if (stage == 2) {
    if (high_star == nullptr) throw ContractError("stage 2 needs the stage-1 genotype");
    return reduce_for_stage2(*high_star, cfg.space);
  }
  throw ConfigError("stage must be 1 or 2, got " + std::to_string(stage));
}

std::uint64_t genotype_cost(const Genotype& g, const ModelConfig& model) {
  return cost_model(g, model).flops;
}

Supernet build_stage_supernet(const PipelineConfig& cfg, const SearchSpaceSpec& space, int stage) {
  Rng rng(step_seed(cfg, stage, 1));
  return Supernet::build(cfg.model, space, rng);
}

TrainLog train_stage_supernet(const PipelineConfig& cfg, Supernet& sn, const DatasetSplit& data,
                              int stage, std::ostream* log) {
  TrainConfig tc = cfg.supernet_train;
  tc.seed = step_seed(cfg, stage, 2);
  return train_supernet(sn, data.train, tc, log);
}

SearchResult search_stage(const PipelineConfig& cfg, const Supernet& sn, const DatasetSplit& data,
                          int stage, std::ostream* log) {
  EAConfig ea = cfg.ea;
  ea.seed = step_seed(cfg, stage, 3);
  const ModelConfig model = cfg.model;
  return evolve(
      sn.space(), ea, [&](const Genotype& g) { return fitness(sn, g, data.val); },
      [model](const Genotype& g) { return genotype_cost(g, model); }, log);
}

std::vector<Retrained> retrain_candidates(const PipelineConfig& cfg,
                                          const std::vector<Candidate>& top,
                                          const DatasetSplit& data) {
  TrainConfig tc = cfg.retrain;
  tc.seed = step_seed(cfg, 0, 4);
  std::vector<Retrained> out;
  for (const Candidate& c : top) {
    RetrainResult r = retrain(c.genotype, cfg.model, data, tc);
    out.push_back({{c.genotype, r.val_accuracy, c.flops}, std::move(r.model)});
  }
  return out;
}

std::string format_candidates(const std::vector<Candidate>& cs) {
  std::ostringstream os;
  for (const Candidate& c : cs)
    os << c.genotype.to_string() << ' ' << fmt(c.fitness) << ' ' << c.flops << '\n';
  return os.str();
}

std::vector<Candidate> parse_candidates(const std::string& text) {
  std::vector<Candidate> out;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string g;
    Candidate c;
    if (!(ls >> g >> c.fitness >> c.flops)) throw FormatError("bad candidate line: " + line);
    c.genotype = Genotype::parse(g);
    out.push_back(std::move(c));
  }
  return out;
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::string& config_text, std::uint64_t seed) {
  std::ostringstream os;
  os << "command=" << command << '\n'
     << "config_hash=" << config_hash(config_text) << '\n'
     << "seed=" << seed << '\n'
     << "rng=" << Rng::kAlgorithm << '\n'
     << "checkpoint_version=" << kCheckpointVersion << '\n'
     << "dataset_version=" << kDatasetVersion << '\n'
     << "genotype_schema=" << static_cast<int>(kGenotypeSchema) << '\n'
     << "compiler=" << __VERSION__ << '\n'
     << "--- config\n"
     << config_text;
  write_file_atomic((fs::path(out_dir) / artifact::kManifest).string(), os.str());
}

const char* step_output(const std::string& step) {
  if (step == "stage1-supernet") return artifact::kStage1Supernet;
  if (step == "stage1-search") return artifact::kStage1Top;
  if (step == "stage1-retrain") return artifact::kStage1Best;
  if (step == "stage2-supernet") return artifact::kStage2Supernet;
  if (step == "stage2-search") return artifact::kStage2Top;
  if (step == "stage2-retrain") return artifact::kFinalGenotype;
  throw ConfigError("unknown pipeline step '" + step + "'");
}

void run_step(const PipelineConfig& cfg, const DatasetSplit& data, const std::string& out_dir,
              const std::string& step) {
  step_output(step);
  fs::create_directories(out_dir);
  const auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  const auto high_star = [&] {
    return Genotype::parse(trim(read_file(path(artifact::kStage1Best))));
  };
  const int stage = step.rfind("stage1", 0) == 0 ? 1 : 2;
  const std::string kind = step.substr(7);

  if (kind == "supernet") {
    // Stage 2 is built around the stage-1 pick, so that must exist first.
    Genotype hs;
    if (stage == 2) hs = high_star();
    Supernet sn = build_stage_supernet(cfg, stage_space(cfg, stage, stage == 2 ? &hs : nullptr), stage);
    std::ostringstream log;
    train_stage_supernet(cfg, sn, data, stage, &log);
    write_file_atomic(path(stage == 1 ? artifact::kStage1TrainLog : artifact::kStage2TrainLog), log.str());
    save_checkpoint(path(stage == 1 ? artifact::kStage1Supernet : artifact::kStage2Supernet),
                    stage_checkpoint(cfg, sn, stage));
  } else if (kind == "search") {
    const Supernet sn = supernet_from_checkpoint(
        load_checkpoint(path(stage == 1 ? artifact::kStage1Supernet : artifact::kStage2Supernet)));
    std::ostringstream log;
    const SearchResult sr = search_stage(cfg, sn, data, stage, &log);
    write_file_atomic(path(stage == 1 ? artifact::kStage1Log : artifact::kStage2Log), log.str());
    write_file_atomic(path(stage == 1 ? artifact::kStage1Top : artifact::kStage2Top),
                      format_candidates(sr.top));
  } else {
    const auto top = parse_candidates(read_file(path(stage == 1 ? artifact::kStage1Top : artifact::kStage2Top)));
    std::vector<Retrained> rt = retrain_candidates(cfg, top, data);
    std::vector<Candidate> scored;
    for (const auto& r : rt) scored.push_back(r.candidate);
    const Candidate best = select_final(scored, [](const Candidate& c) { return c.fitness; });
    if (stage == 1) {
      write_file_atomic(path(artifact::kStage1Retrain), format_candidates(scored));
      write_file_atomic(path(artifact::kStage1Best), best.genotype.to_string() + "\n");
    } else {
      for (const auto& r : rt)
        if (r.candidate.genotype == best.genotype) {
          save_checkpoint(path(artifact::kFinalModel), model_checkpoint(r.model));
          break;
        }
      write_file_atomic(path(artifact::kStage2Retrain), format_candidates(scored));
      write_file_atomic(path(artifact::kFinalGenotype), best.genotype.to_string() + "\n");
    }
  }
}

PipelineResult run_full_pipeline(const PipelineConfig& cfg, const PipelineOptions& opts) {
  cfg.check();
  if (opts.out_dir.empty()) throw ConfigError("pipeline needs an output directory");
  if (!opts.stop_after.empty()) step_output(opts.stop_after);
  fs::create_directories(opts.out_dir);
  const auto path = [&](const char* name) { return (fs::path(opts.out_dir) / name).string(); };
  const auto say = [&](const std::string& msg) {
    if (opts.progress) opts.progress(msg);
  };

  const DatasetSplit data = load_pipeline_data(cfg);
  PipelineResult res;
  for (const char* step : kSteps) {
    const bool ran = !fs::exists(path(step_output(step)));
    if (ran) {
      say(std::string("running ") + step);
      run_step(cfg, data, opts.out_dir, step);
    }
    (ran ? res.ran : res.resumed).push_back(step);
    say(std::string(ran ? "done " : "have ") + step);
    if (step == opts.stop_after) return res;
  }

  const GlitModel final_model = model_from_checkpoint(load_checkpoint(path(artifact::kFinalModel)));
  res.final_genotype = Genotype::parse(trim(read_file(path(artifact::kFinalGenotype))));
  res.val_accuracy = evaluate_model(final_model, data.val);
  res.test_accuracy = evaluate_model(final_model, data.test);
  res.complete = true;
  std::ostringstream report;
  report << "final_genotype=" << res.final_genotype.to_string() << '\n'
         << "val_accuracy=" << fmt(res.val_accuracy) << '\n'
         << "test_accuracy=" << fmt(res.test_accuracy) << '\n'
         << cost_model(res.final_genotype, cfg.model).machine_line() << '\n';
  write_file_atomic(path(artifact::kReport), report.str());
  return res;
}

}  // namespace glit
