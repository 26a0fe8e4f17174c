#include "glit/evo_search.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <unordered_set>

#include "glit/errors.hpp"
#include "glit/rng.hpp"
#include "glit/supernet.hpp"
#include "glit/trainer.hpp"

namespace glit {

namespace {

template <typename T>
T pick(const std::vector<T>& options, Rng& rng) {
  return options.size() == 1 ? options.front() : options[rng.index(options.size())];
}

template <typename Draw>
Genotype within_budget(const SearchSpaceSpec& spec, const EAConfig& cfg, const CostFn& cost,
                       Rng& rng, const char* what, Draw draw) {
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Genotype g = canonicalize(draw(rng), spec);
    if (cost(g) <= cfg.flops_budget) return g;
  }
  throw InfeasibleError(std::string(what) + ": no genotype within the FLOPs budget of " +
                        std::to_string(cfg.flops_budget) + " after " +
                        std::to_string(cfg.max_retries) + " tries");
}

}  // namespace

void EAConfig::check() const {
  if (population < 2) throw ConfigError("population must be >= 2");
  if (total_samples < population) throw ConfigError("total samples must be >= population");
  if (parents < 1) throw ConfigError("parent pool must be >= 1");
  if (!(mutation_prob >= 0.0 && mutation_prob <= 1.0)) {
    throw ConfigError("mutation probability must lie in [0, 1]");
  }
  if (flops_budget == 0) throw ConfigError("FLOPs budget must be > 0");
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (max_retries < 1) throw ConfigError("max_retries must be >= 1");
}

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.fitness != b.fitness) return a.fitness > b.fitness;
  if (a.flops != b.flops) return a.flops < b.flops;
  return a.genotype < b.genotype;
}

double fitness(const Supernet& sn, const Genotype& g, const Dataset& val, std::size_t batch_size) {
  require_valid(g, sn.space());
  const ModelWeights w = sn.path_weights(g);
  const ModelConfig& mc = sn.config();
  return evaluate([&](const Tensor& p) { return forward_logits(w, mc, g, p, {}); }, val, mc.image,
                  batch_size);
}

Genotype mutate(const Genotype& g, const SearchSpaceSpec& spec, const EAConfig& cfg,
                const CostFn& cost, Rng& rng) {
  require_valid(g, spec);
  const double p = cfg.mutation_prob;
  return within_budget(spec, cfg, cost, rng, "mutate", [&](Rng& r) {
    Genotype out = g;
    for (std::size_t m = 0; m < out.blocks.size(); ++m) {
      BlockGene& b = out.blocks[m];
      if (r.uniform() < p) std::tie(b.global_heads, b.local_heads) = pick(gl_choices(spec, m), r);
      const BlockChoices c = block_choices(spec, m, b.global_heads, b.local_heads);
      auto axis = [&](int& value, const std::vector<int>& options) {
        const bool legal = std::find(options.begin(), options.end(), value) != options.end();
        if (r.uniform() < p || !legal) value = pick(options, r);
      };
      axis(b.qkv_dim, c.qkv_dims);
      axis(b.ffn_ratio, c.ffn_ratios);
      axis(b.expansion, c.expansions);
      axis(b.kernel, c.kernels);
    }
    return out;
  });
}

Genotype crossover(const Genotype& a, const Genotype& b, const SearchSpaceSpec& spec,
                   const EAConfig& cfg, const CostFn& cost, Rng& rng) {
  require_valid(a, spec);
  require_valid(b, spec);
  return within_budget(spec, cfg, cost, rng, "crossover", [&](Rng& r) {
    Genotype out = a;
    for (std::size_t m = 0; m < out.blocks.size(); ++m)
      if (r.uniform() < 0.5) out.blocks[m] = b.blocks[m];
    return out;
  });
}

Genotype sample_feasible(const SearchSpaceSpec& spec, const EAConfig& cfg, const CostFn& cost,
                         Rng& rng) {
  return within_budget(spec, cfg, cost, rng, "sample",
                       [&](Rng& r) { return sample_uniform(spec, r); });
}

SearchResult evolve(const SearchSpaceSpec& spec, const EAConfig& cfg, const FitnessFn& fit,
                    const CostFn& cost, std::ostream* log) {
  cfg.check();
  spec.check();
  Rng rng(cfg.seed);
  SearchResult res;
  std::unordered_set<Genotype, GenotypeHash> seen;
  std::size_t stall = 0;
  std::size_t generation = 0;
  bool any_feasible = false;

  const auto done = [&] {
    return res.evaluated.size() >= cfg.total_samples || stall >= cfg.max_stall;
  };
  // Proposes through `op`; returns true when a new genotype was evaluated.
  const auto admit = [&](const std::function<Genotype()>& op) {
    Genotype g;
    try {
      g = op();
    } catch (const InfeasibleError&) {
      ++stall;
      return false;
    }
    any_feasible = true;
    ++res.proposals;
    if (!seen.insert(g).second) {
      ++stall;
      return false;
    }
    stall = 0;
    Candidate c{g, fit(g), cost(g)};
    if (c.flops > cfg.flops_budget) throw ContractError("candidate over budget was admitted");
    if (log != nullptr) {
      *log << generation << ' ' << c.genotype.to_string() << ' ' << std::setprecision(17)
           << c.fitness << ' ' << c.flops << '\n';
    }
    res.evaluated.push_back(std::move(c));
    return true;
  };
  const auto random_op = [&] { return sample_feasible(spec, cfg, cost, rng); };

  std::size_t filled = 0;
  while (filled < cfg.population && !done())
    if (admit(random_op)) ++filled;
  if (!any_feasible) {
    throw InfeasibleError("no genotype in the space fits the FLOPs budget of " +
                          std::to_string(cfg.flops_budget));
  }

  std::vector<Candidate> ranked;
  const auto best_so_far = [&] {
    ranked = res.evaluated;
    std::sort(ranked.begin(), ranked.end(), ranks_before);
    return ranked.empty() ? 0.0 : ranked.front().fitness;
  };
  res.best_trace.push_back(best_so_far());

  while (!done()) {
    ++generation;
    const std::size_t np = std::min(cfg.parents, ranked.size());
    const auto parent = [&]() -> const Genotype& { return ranked[rng.index(np)].genotype; };
    const auto fill = [&](std::size_t want, const std::function<Genotype()>& op) {
      std::size_t got = 0, misses = 0;
      while (got < want && !done()) {
        if (admit(misses < static_cast<std::size_t>(cfg.max_retries) ? op : random_op)) {
          ++got;
          misses = 0;
        } else {
          ++misses;
        }
      }
    };
    fill(cfg.mutants, [&] { return mutate(parent(), spec, cfg, cost, rng); });
    fill(cfg.crossovers, [&] {
      const Genotype& a = parent();
      const Genotype& b = parent();
      return crossover(a, b, spec, cfg, cost, rng);
    });
    res.best_trace.push_back(best_so_far());
  }

  ranked.resize(std::min(ranked.size(), cfg.top_k));
  res.top = ranked;
  return res;
}

Candidate select_final(const std::vector<Candidate>& top,
                       const std::function<double(const Candidate&)>& retrain_fn) {
  if (top.empty()) throw ConfigError("select_final: no candidates");
  std::vector<Candidate> scored;
  for (const Candidate& c : top) scored.push_back({c.genotype, retrain_fn(c), c.flops});
  return *std::min_element(scored.begin(), scored.end(), ranks_before);
}

}  // namespace glit
