#pragma once

// Single-path supernet training, standalone retraining and evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "glit/dataset.hpp"
#include "glit/model.hpp"
#include "glit/supernet.hpp"

namespace glit {

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 64;
  double lr = 0.2;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  double label_smoothing = 0.1;
  bool flip = false;  // random horizontal flips
  double grad_clip = 0.0;  // max global gradient L2 norm; 0 disables
  std::uint64_t seed = 0;

  void check() const;
};

// lr0 * (1 + cos(pi * step / total)) / 2
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

struct SgdState {
  std::vector<std::vector<double>> velocity;  // per parameter, lazily sized
};

// g' = g + wd * p; v = mu * v + g'; p -= lr * (g' + mu * v) (Nesterov) or
// lr * v. With `masks`, only elements whose mask is set are touched, velocity
// included. Parameters without a gradient are skipped.
void sgd_step(const ParamList& params, SgdState& state, double lr, const TrainConfig& cfg,
              const std::vector<SliceMask>* masks = nullptr);

// Scales every gradient by max_norm / ||g|| when the global L2 norm exceeds
// max_norm. Returns the norm before scaling.
double clip_grad_norm(const ParamList& params, double max_norm);

struct TrainStep {
  int epoch;
  std::size_t step;
  double lr;
  double loss;
  std::string genotype;  // empty for standalone training
};

struct TrainLog {
  std::vector<TrainStep> steps;
  std::vector<double> epoch_loss;  // mean loss per epoch

  // "epoch,step,lr,loss[,genotype]" per step.
  std::string to_csv() const;
};

using EpochHook = std::function<void(int epoch)>;

// Each step samples one genotype uniformly from the supernet's space and
// updates only its slices. `path_seed` drives the genotype sampling and is
// independent of the data order.
TrainLog train_supernet(Supernet& sn, const Dataset& train, const TrainConfig& cfg,
                        std::ostream* log = nullptr, const EpochHook& on_epoch = {});

TrainLog train_model(GlitModel& model, const Dataset& train, const TrainConfig& cfg,
                     std::ostream* log = nullptr);

struct RetrainResult {
  GlitModel model;
  double val_accuracy;
  TrainLog log;
};

// Fresh initialization from cfg.seed, full schedule, then val accuracy.
RetrainResult retrain(const Genotype& g, const ModelConfig& model_cfg, const DatasetSplit& data,
                      const TrainConfig& cfg, std::ostream* log = nullptr);

// Top-1 accuracy of logits [B x C]; ties go to the lowest class index.
std::size_t count_correct(const Tensor& logits, std::span<const int> labels);

using LogitsFn = std::function<Tensor(const Tensor& patches)>;
double evaluate(const LogitsFn& forward, const Dataset& data, const ImageSpec& image,
                std::size_t batch_size = 256);
double evaluate_model(const GlitModel& model, const Dataset& data, std::size_t batch_size = 256);

}  // namespace glit
