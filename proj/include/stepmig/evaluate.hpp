#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stepmig/credit.hpp"
#include "stepmig/policy_env.hpp"
#include "stepmig/rng.hpp"

namespace mig {

std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation of average ranks. nullopt when either side has zero
// rank variance (the correlation is undefined, reported distinctly rather
// than as an arbitrary number).
std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys);

// Probability a random positive outranks a random negative, ties at 1/2.
// Throws std::domain_error when labels are single-class.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Two-sided permutation p-value for the Spearman correlation.
double permutation_pvalue_spearman(std::span<const double> xs, std::span<const double> ys,
                                   int n_permutations, Rng& rng);

struct ValueEstimate {
  double v_hat = 0.0;
  int n_rollouts = 0;
  double temperature = 0.0;
};

// Flat Monte-Carlo value: fraction of policy continuations from the given
// mid-trajectory state that end at a correct answer.
ValueEstimate mc_value(const ToyPolicy& policy, const ChainTask& task,
                       std::span<const int> prefix_tokens, int n_rollouts, double temperature,
                       Rng& rng);

struct StudyConfig {
  int rollouts = 32;
  double temperature = 0.6;        // value-rollout temperature
  double state_temperature = 1.0;  // temperature generating the studied trajectories
  int n_permutations = 10000;
  int max_states = 400;
  double positive_threshold = 0.5;  // v_hat above this is a positive label
  int min_steps = 2;                // filter: trajectories need K >= 2 and a valid parse
  uint64_t seed = 0;
};

struct StudyRow {
  std::string name;
  std::optional<double> spearman;
  double auc = 0.0;
  double p_value = 1.0;
  int n_states = 0;
  uint64_t seed = 0;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  bool degenerate = false;  // value estimates carried no usable signal
  std::string note;
};

// Correlates candidate per-state metrics (step likelihood, likelihood gain,
// relative position, last-step flag, token count, random) against MC values
// over intermediate states of fresh rollouts.
StudyResult proxy_study(const ToyPolicy& policy, const std::vector<ChainTask>& tasks,
                        const StudyConfig& cfg);

// Correlates each trace-aggregation strategy against the MC value of the
// trajectory's terminal reasoning state.
StudyResult aggregation_study(const ToyPolicy& policy, const std::vector<ChainTask>& tasks,
                              const StudyConfig& cfg);

std::string study_csv(const StudyResult& result);

}  // namespace mig
