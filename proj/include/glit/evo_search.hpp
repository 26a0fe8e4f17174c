#pragma once

// FLOPs-constrained evolutionary search over genotypes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "glit/search_space.hpp"

namespace glit {

class Rng;
class Supernet;
struct Dataset;

struct EAConfig {
  std::size_t total_samples = 1000;  // N_s distinct genotypes evaluated
  std::size_t population = 50;
  std::size_t parents = 10;
  double mutation_prob = 0.1;        // per axis
  std::size_t mutants = 25;          // per generation
  std::size_t crossovers = 25;       // per generation
  std::uint64_t flops_budget = UINT64_MAX;
  std::size_t top_k = 5;
  int max_retries = 100;             // budget retries per operator call
  std::size_t max_stall = 1000;      // consecutive proposals without a new genotype
  std::uint64_t seed = 0;

  void check() const;
};

struct Candidate {
  Genotype genotype;
  double fitness = 0.0;
  std::uint64_t flops = 0;
};

// Higher fitness first, then fewer FLOPs, then smaller genotype.
bool ranks_before(const Candidate& a, const Candidate& b);

using FitnessFn = std::function<double(const Genotype&)>;
using CostFn = std::function<std::uint64_t(const Genotype&)>;

// Top-1 accuracy of the supernet path for g on `val`.
double fitness(const Supernet& sn, const Genotype& g, const Dataset& val,
               std::size_t batch_size = 256);

// Each axis of each block is resampled with probability mutation_prob, the
// whole draw repeated until the cost fits the budget. Throws InfeasibleError
// after max_retries misses.
Genotype mutate(const Genotype& g, const SearchSpaceSpec& spec, const EAConfig& cfg,
                const CostFn& cost, Rng& rng);
// Each block copied from a uniformly chosen parent, budget-checked as mutate.
Genotype crossover(const Genotype& a, const Genotype& b, const SearchSpaceSpec& spec,
                   const EAConfig& cfg, const CostFn& cost, Rng& rng);
// Uniform sample within budget (same retry rule).
Genotype sample_feasible(const SearchSpaceSpec& spec, const EAConfig& cfg, const CostFn& cost,
                         Rng& rng);

struct SearchResult {
  std::vector<Candidate> top;        // best top_k, ranked
  std::vector<Candidate> evaluated;  // every evaluation in order
  std::vector<double> best_trace;    // best fitness after each generation
  std::size_t proposals = 0;         // operator outputs, duplicates included
};

// Random initial population, then generations of mutation and crossover from
// the best `parents`. Slots the operators cannot fill with unseen genotypes
// get uniform samples. Stops at total_samples evaluations or after max_stall
// consecutive proposals that add nothing new. One log line per evaluation:
// "<generation> <genotype> <fitness> <flops>".
SearchResult evolve(const SearchSpaceSpec& spec, const EAConfig& cfg, const FitnessFn& fit,
                    const CostFn& cost, std::ostream* log = nullptr);

// Retrains every candidate and returns the best by the retrained score.
Candidate select_final(const std::vector<Candidate>& top,
                       const std::function<double(const Candidate&)>& retrain_fn);

}  // namespace glit
