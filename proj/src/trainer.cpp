#include "glit/trainer.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "glit/errors.hpp"
#include "glit/rng.hpp"

namespace glit {

namespace {

constexpr std::uint64_t kPathStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kDropoutStream = 0xd1b54a32d192ed03ULL;

struct StepInput {
  Tensor logits;
  std::string genotype;
  const std::vector<SliceMask>* masks = nullptr;
};

using StepFn = std::function<StepInput(const Tensor& patches, Rng& dropout_rng)>;

TrainLog run_training(const ParamList& params, const Dataset& train, const ImageSpec& image,
                      const TrainConfig& cfg, const StepFn& step_fn, std::ostream* log,
                      const EpochHook& on_epoch) {
  cfg.check();
  if (train.size() == 0) throw ConfigError("training set is empty");
  train.require_shape(image);
  Rng data_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ kDropoutStream);
  SgdState state;
  TrainLog out;
  const std::size_t n = train.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[data_rng.index(i)]);
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
      const std::size_t begin = b * cfg.batch_size, count = std::min(cfg.batch_size, n - begin);
      const std::span<const std::size_t> idx(order.data() + begin, count);
      std::vector<std::uint8_t> flips;
      if (cfg.flip)
        for (std::size_t i = 0; i < count; ++i) flips.push_back(data_rng.uniform() < 0.5);
      const Tensor patches = train.patches(idx, image, flips);
      const std::vector<int> labels = train.labels_of(idx);

      StepInput in = step_fn(patches, dropout_rng);
      const Tensor loss = cross_entropy_smoothed(in.logits, labels, cfg.label_smoothing);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) +
                           (in.genotype.empty() ? std::string() : ", genotype " + in.genotype));
      }
      for (NamedTensor p : params) p.tensor.zero_grad();
      loss.backward();
      if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
      const double lr = cosine_lr(step, total, cfg.lr);
      sgd_step(params, state, lr, cfg, in.masks);
      epoch_sum += value;
      out.steps.push_back({epoch, step, lr, value, in.genotype});
      if (log != nullptr) {
        *log << epoch << ',' << step << ',' << lr << ',' << value;
        if (!in.genotype.empty()) *log << ',' << in.genotype;
        *log << '\n';
      }
    }
    out.epoch_loss.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
    if (on_epoch) on_epoch(epoch);
  }
  return out;
}

}  // namespace

void TrainConfig::check() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("label smoothing must lie in [0, 1)");
  }
  if (!(grad_clip >= 0.0)) throw ConfigError("gradient clip must be >= 0");
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0) return lr0;
  const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return lr0 * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

void sgd_step(const ParamList& params, SgdState& state, double lr, const TrainConfig& cfg,
              const std::vector<SliceMask>* masks) {
  if (masks != nullptr && masks->size() != params.size()) {
    throw DimensionError("sgd_step: " + std::to_string(masks->size()) + " masks for " +
                         std::to_string(params.size()) + " parameters");
  }
  state.velocity.resize(params.size());
  const double mu = cfg.momentum, wd = cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    const auto grad = p.grad();
    auto& v = state.velocity[i];
    if (v.empty()) v.assign(data.size(), 0.0);
    const SliceMask* mask = masks != nullptr ? &(*masks)[i] : nullptr;
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (mask != nullptr && !(*mask)[j]) continue;
      const double g = grad[j] + wd * data[j];
      v[j] = mu * v[j] + g;
      const double update = cfg.nesterov ? g + mu * v[j] : v[j];
      data[j] -= lr * update;
    }
  }
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const NamedTensor& p : params)
    if (p.tensor.has_grad())
      for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (NamedTensor p : params)
      if (p.tensor.has_grad())
        for (double& g : p.tensor.mutable_grad()) g *= scale;
  }
  return norm;
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  for (const TrainStep& s : steps) {
    os << s.epoch << ',' << s.step << ',' << s.lr << ',' << s.loss;
    if (!s.genotype.empty()) os << ',' << s.genotype;
    os << '\n';
  }
  return os.str();
}

TrainLog train_supernet(Supernet& sn, const Dataset& train, const TrainConfig& cfg,
                        std::ostream* log, const EpochHook& on_epoch) {
  Rng path_rng(cfg.seed ^ kPathStream);
  PathSample sample;
  const ModelConfig& mc = sn.config();
  const StepFn step = [&](const Tensor& patches, Rng& dropout_rng) {
    sample = sn.plan(sample_uniform(sn.space(), path_rng));
    StepInput in;
    in.logits = sn.forward_path(sample.genotype, patches, true, &dropout_rng);
    in.genotype = sample.genotype.to_string();
    in.masks = &sample.masks;
    return in;
  };
  return run_training(sn.params(), train, mc.image, cfg, step, log, on_epoch);
}

TrainLog train_model(GlitModel& model, const Dataset& train, const TrainConfig& cfg,
                     std::ostream* log) {
  const StepFn step = [&](const Tensor& patches, Rng& dropout_rng) {
    StepInput in;
    in.logits = model.forward(patches, true, &dropout_rng);
    return in;
  };
  return run_training(model.params(), train, model.config().image, cfg, step, log, {});
}

RetrainResult retrain(const Genotype& g, const ModelConfig& model_cfg, const DatasetSplit& data,
                      const TrainConfig& cfg, std::ostream* log) {
  Rng init_rng(cfg.seed);
  GlitModel model = GlitModel::init(model_cfg, g, init_rng);
  TrainLog tl = train_model(model, data.train, cfg, log);
  const double acc = evaluate_model(model, data.val);
  return {std::move(model), acc, std::move(tl)};
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("count_correct: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t c = logits.dim(1);
  const auto x = logits.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (x[i * c + j] > x[i * c + best]) best = j;
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return correct;
}

double evaluate(const LogitsFn& forward, const Dataset& data, const ImageSpec& image,
                std::size_t batch_size) {
  if (data.size() == 0) throw ConfigError("evaluation set is empty");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  NoGradGuard no_grad;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - begin);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), begin);
    correct += count_correct(forward(data.patches(idx, image)), data.labels_of(idx));
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double evaluate_model(const GlitModel& model, const Dataset& data, std::size_t batch_size) {
  return evaluate([&](const Tensor& p) { return model.forward(p); }, data, model.config().image,
                  batch_size);
}

}  // namespace glit
