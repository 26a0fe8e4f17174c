#pragma once

// Two-stage search pipeline: stage-1 supernet and search over the per-block
// (G, L) split, retraining of the top candidates, then stage-2 supernet and
// search over the module sizes with the split fixed, and a final retrain.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "glit/dataset.hpp"
#include "glit/evo_search.hpp"
#include "glit/model.hpp"
#include "glit/trainer.hpp"

namespace glit {

using KeyValues = std::map<std::string, std::string>;

// "key=value" lines; '#' starts a comment. Throws ConfigError on bad lines or
// duplicate keys.
KeyValues parse_key_values(const std::string& text);

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string data_path;  // empty: generate synthetic data
  SyntheticKind data_kind = SyntheticKind::kSeparable;
  std::size_t data_size = 1200;
  std::size_t val_size = 200;
  std::size_t test_size = 200;

  ModelConfig model;
  SearchSpaceSpec space;  // joint lists; the stages are derived from it
  TrainConfig supernet_train;
  TrainConfig retrain;
  EAConfig ea;

  // 32x32x3, m=4, d=48, N=3, M=4, small choice lists.
  static PipelineConfig desk();
  // M=2, d=24, 16x16 images: every stage fully enumerable, runs in seconds.
  static PipelineConfig tiny();

  // Overrides from key=value pairs; unknown keys throw ConfigError.
  void apply(const KeyValues& kv);
  KeyValues to_key_values() const;
  std::string to_text() const;
  void check() const;
};

// Artifact file names inside the output directory.
namespace artifact {
inline constexpr const char* kManifest = "manifest.txt";
inline constexpr const char* kStage1Supernet = "stage1_supernet.ckpt";
inline constexpr const char* kStage1TrainLog = "stage1_supernet_train.log";
inline constexpr const char* kStage1Log = "stage1_search.log";
inline constexpr const char* kStage1Top = "stage1_topk.txt";
inline constexpr const char* kStage1Retrain = "stage1_retrain.txt";
inline constexpr const char* kStage1Best = "stage1_best.txt";
inline constexpr const char* kStage2Supernet = "stage2_supernet.ckpt";
inline constexpr const char* kStage2TrainLog = "stage2_supernet_train.log";
inline constexpr const char* kStage2Log = "stage2_search.log";
inline constexpr const char* kStage2Top = "stage2_topk.txt";
inline constexpr const char* kStage2Retrain = "stage2_retrain.txt";
inline constexpr const char* kFinalModel = "final_model.ckpt";
inline constexpr const char* kFinalGenotype = "final_genotype.txt";
inline constexpr const char* kReport = "report.txt";
}  // namespace artifact

// Loads data_path or generates synthetic data, then carves val and test.
DatasetSplit load_pipeline_data(const PipelineConfig& cfg);

// Stage 1: (G, L) only. Stage 2: the reduced space around high_star.
SearchSpaceSpec stage_space(const PipelineConfig& cfg, int stage, const Genotype* high_star = nullptr);

std::uint64_t genotype_cost(const Genotype& g, const ModelConfig& model);

Supernet build_stage_supernet(const PipelineConfig& cfg, const SearchSpaceSpec& space, int stage);
TrainLog train_stage_supernet(const PipelineConfig& cfg, Supernet& sn, const DatasetSplit& data,
                              int stage, std::ostream* log = nullptr);
SearchResult search_stage(const PipelineConfig& cfg, const Supernet& sn, const DatasetSplit& data,
                          int stage, std::ostream* log = nullptr);

struct Retrained {
  Candidate candidate;  // fitness = retrained val accuracy
  GlitModel model;
};
// Retrains every candidate from scratch; results in input order.
std::vector<Retrained> retrain_candidates(const PipelineConfig& cfg,
                                          const std::vector<Candidate>& top,
                                          const DatasetSplit& data);

// "<genotype> <fitness> <flops>" per line.
std::string format_candidates(const std::vector<Candidate>& cs);
std::vector<Candidate> parse_candidates(const std::string& text);

// Pipeline steps in execution order.
inline constexpr std::array<const char*, 6> kSteps = {"stage1-supernet", "stage1-search",
                                                      "stage1-retrain",  "stage2-supernet",
                                                      "stage2-search",   "stage2-retrain"};
// The artifact whose presence marks the step complete. ConfigError for an
// unknown step.
const char* step_output(const std::string& step);
// Runs one step, reading its inputs from out_dir (MissingArtifactError naming
// the file when one is absent) and overwriting its outputs.
void run_step(const PipelineConfig& cfg, const DatasetSplit& data, const std::string& out_dir,
              const std::string& step);

struct PipelineOptions {
  std::string out_dir;
  // Stop once this step (one of kSteps) has finished; empty runs to the end.
  std::string stop_after;
  std::function<void(const std::string&)> progress;
};

struct PipelineResult {
  Genotype final_genotype;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  bool complete = false;
  std::vector<std::string> ran;      // steps executed in this call
  std::vector<std::string> resumed;  // steps whose artifacts already existed
};

// Runs every step whose artifacts are missing; completed steps are loaded.
PipelineResult run_full_pipeline(const PipelineConfig& cfg, const PipelineOptions& opts);

// FNV-1a 64 of the text, as 16 hex digits.
std::string config_hash(const std::string& text);
// Writes manifest.txt: command line, config hash, seed, format and build info.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::string& config_text, std::uint64_t seed);

}  // namespace glit
