#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stepmig/credit.hpp"
#include "stepmig/policy_env.hpp"
#include "stepmig/schema.hpp"
#include "stepmig/scoring.hpp"

namespace mig {

// Loss weights and update hyperparameters. The three loss weights and the
// accuracy coefficient keep distinct names because the source formulas reuse
// symbols across roles. Defaults are unvalidated conventions, not tuned
// constants.
struct WeightsConfig {
  double w_mig = 1.0;
  double w_out = 1.0;
  double w_sft = 0.1;
  double gamma_acc = 1.0;
  double eta = 0.05;
  double momentum = 0.0;
  std::optional<double> clip_epsilon;  // PPO-style symmetric ratio clip; off by default
  enum class RefPolicy { Snapshot, Frozen } ref_policy = RefPolicy::Snapshot;
};

enum class TrainMode { MigFull, MigNoSft, GrpoBaseline };

std::string mode_name(TrainMode m);
bool mode_from_name(const std::string& name, TrainMode* out);

struct TrajectoryRecord {
  TokenSeq tokens;               // sampled completion
  std::vector<double> logp_ref;  // per-token log pi_ref (rollout-time reference)
  ParsedTrajectory parsed;
  LikelihoodTrace trace;
  CreditVector credit;
  double r_acc = 0.0;  // == omega_acc
  double r_fmt = 0.0;  // == omega_struct
};

struct GroupBatch {
  int64_t prompt_id = 0;
  TokenSeq prompt_tokens;
  std::vector<TrajectoryRecord> trajectories;

  int size() const { return static_cast<int>(trajectories.size()); }
};

// (v - mean) / (std + 1e-8) with population std; an all-equal group maps to
// all zeros.
std::vector<double> group_norm(std::span<const double> values);

// A_outcome_i = group_norm(r_fmt)_i + gamma_acc * group_norm(r_acc)_i.
std::vector<double> outcome_advantage(const GroupBatch& batch, const WeightsConfig& cfg);

// Ratio-weighted masked losses. Advantages and the reference policy are
// constants; gradients flow only through the current policy. Each returns
// the loss and accumulates `weight * d loss / d params` into grad (when grad
// is non-null).
double mig_loss(const GroupBatch& batch, std::span<const double> a_step, const ToyPolicy& policy,
                const WeightsConfig& cfg, double weight, std::vector<double>* grad);

double outcome_loss(const GroupBatch& batch, std::span<const double> a_outcome,
                    const ToyPolicy& policy, const WeightsConfig& cfg, double weight,
                    std::vector<double>* grad);

// Sequence NLL over the full span of trajectories passing both gates.
double gated_sft_loss(const GroupBatch& batch, const ToyPolicy& policy, double weight,
                      std::vector<double>* grad);

struct LossBreakdown {
  double l_mig = 0.0;
  double l_outcome = 0.0;
  double l_sft = 0.0;
  double l_total = 0.0;
};

struct IterationMetrics {
  int iteration = 0;
  double rollout_accuracy = 0.0;
  double mean_r_mig = 0.0;
  LossBreakdown losses;
  double sft_gate_rate = 0.0;
};

// Thrown when a loss or parameter goes non-finite; carries a diagnostic dump
// of the offending batch.
class NumericDivergenceError : public std::runtime_error {
 public:
  NumericDivergenceError(const std::string& what, std::string dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

struct TrainerConfig {
  TrainMode mode = TrainMode::MigFull;
  int group_size = 8;     // G
  int batch_prompts = 4;  // prompts per iteration
  int iterations = 2000;
  uint64_t seed = 1;
  double temperature = 1.0;
  WeightsConfig weights;
};

// Runs the three-phase loop: rollout, valuation (traces, credits, rewards,
// gates), and one gradient step per iteration. Mode adjusts loss weights:
// the baseline zeroes the step and SFT terms, the ablation zeroes SFT only.
// Deterministic for a fixed seed regardless of worker count: every
// trajectory draws from its own stream keyed by (seed, iteration, prompt
// slot, member) and reductions run in fixed order.
class Trainer {
 public:
  Trainer(TrainerConfig cfg, EnvConfig env, std::vector<ChainTask> tasks);

  IterationMetrics run_iteration(int iteration);

  const ToyPolicy& policy() const { return policy_; }
  ToyPolicy& policy() { return policy_; }
  const TrainerConfig& config() const { return cfg_; }
  // Effective loss weights after mode adjustment.
  const WeightsConfig& effective_weights() const { return weights_; }

  GroupBatch rollout_group(const ChainTask& task, int iteration, int prompt_slot);

 private:
  TrainerConfig cfg_;
  WeightsConfig weights_;
  EnvConfig env_;
  std::vector<ChainTask> tasks_;
  ToyPolicy policy_;
  ToyPolicy ref_;
  std::vector<double> grad_;
  std::vector<double> velocity_;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const IterationMetrics& m);

}  // namespace mig
