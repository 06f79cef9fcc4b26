#include "stepmig/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stepmig/io.hpp"

namespace mig {

std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::MigFull: return "mig-full";
    case TrainMode::MigNoSft: return "mig-no-sft";
    case TrainMode::GrpoBaseline: return "grpo-baseline";
  }
  return "unknown";
}

bool mode_from_name(const std::string& name, TrainMode* out) {
  if (name == "mig-full") *out = TrainMode::MigFull;
  else if (name == "mig-no-sft") *out = TrainMode::MigNoSft;
  else if (name == "grpo-baseline") *out = TrainMode::GrpoBaseline;
  else return false;
  return true;
}

std::vector<double> group_norm(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  bool all_equal = std::all_of(values.begin(), values.end(),
                               [&](double v) { return v == values.front(); });
  if (all_equal) return out;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  double sd = std::sqrt(var / static_cast<double>(n));
  for (size_t i = 0; i < n; ++i) out[i] = (values[i] - mean) / (sd + 1e-8);
  return out;
}

std::vector<double> outcome_advantage(const GroupBatch& batch, const WeightsConfig& cfg) {
  std::vector<double> fmt, acc;
  fmt.reserve(batch.trajectories.size());
  acc.reserve(batch.trajectories.size());
  for (const auto& t : batch.trajectories) {
    fmt.push_back(t.r_fmt);
    acc.push_back(t.r_acc);
  }
  auto fmt_n = group_norm(fmt);
  auto acc_n = group_norm(acc);
  std::vector<double> out(fmt_n.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fmt_n[i] + cfg.gamma_acc * acc_n[i];
  return out;
}

namespace {

// Shared core of the two ratio-weighted masked losses.
double masked_ratio_loss(const GroupBatch& batch, std::span<const double> advantages,
                         const ToyPolicy& policy, const WeightsConfig& cfg,
                         bool use_cot_mask, double weight, std::vector<double>* grad) {
  const int G = batch.size();
  if (G == 0) return 0.0;
  double loss = 0.0;
  std::vector<int> feats;
  std::vector<double> probs;
  TokenSeq ctx;
  for (int i = 0; i < G; ++i) {
    const auto& traj = batch.trajectories[i];
    TokenSpan span = use_cot_mask ? traj.parsed.cot_span : traj.parsed.full_span;
    span.begin = std::clamp(span.begin, 0, static_cast<int>(traj.tokens.size()));
    span.end = std::clamp(span.end, span.begin, static_cast<int>(traj.tokens.size()));
    const int n_tokens = span.size();
    if (n_tokens == 0) continue;  // empty mask contributes nothing
    const double a = advantages[i];
    const double inv = 1.0 / (static_cast<double>(G) * n_tokens);
    for (int t = span.begin; t < span.end; ++t) {
      ctx.assign(batch.prompt_tokens.begin(), batch.prompt_tokens.end());
      ctx.insert(ctx.end(), traj.tokens.begin(), traj.tokens.begin() + t);
      double lp = policy.logprob_cached(ctx, traj.tokens[t], &feats, &probs);
      double ratio = std::exp(lp - traj.logp_ref[t]);
      double obj = ratio * a;
      bool grad_through_ratio = true;
      if (cfg.clip_epsilon) {
        double clipped = std::clamp(ratio, 1.0 - *cfg.clip_epsilon, 1.0 + *cfg.clip_epsilon) * a;
        if (clipped < obj) {
          obj = clipped;
          grad_through_ratio = false;
        }
      }
      loss -= inv * obj;
      if (grad && grad_through_ratio) {
        // d(-inv * ratio * a)/d lp = -inv * a * ratio
        policy.accumulate_grad(feats, probs, traj.tokens[t], -weight * inv * a * ratio, grad);
      }
    }
  }
  return loss;
}

}  // namespace

double mig_loss(const GroupBatch& batch, std::span<const double> a_step, const ToyPolicy& policy,
                const WeightsConfig& cfg, double weight, std::vector<double>* grad) {
  return masked_ratio_loss(batch, a_step, policy, cfg, /*use_cot_mask=*/true, weight, grad);
}

double outcome_loss(const GroupBatch& batch, std::span<const double> a_outcome,
                    const ToyPolicy& policy, const WeightsConfig& cfg, double weight,
                    std::vector<double>* grad) {
  return masked_ratio_loss(batch, a_outcome, policy, cfg, /*use_cot_mask=*/false, weight, grad);
}

double gated_sft_loss(const GroupBatch& batch, const ToyPolicy& policy, double weight,
                      std::vector<double>* grad) {
  const int G = batch.size();
  if (G == 0) return 0.0;
  double loss = 0.0;
  std::vector<int> feats;
  std::vector<double> probs;
  TokenSeq ctx;
  for (const auto& traj : batch.trajectories) {
    if (traj.r_fmt != 1.0 || traj.r_acc != 1.0) continue;  // dual gate
    TokenSpan span = traj.parsed.full_span;
    span.begin = std::clamp(span.begin, 0, static_cast<int>(traj.tokens.size()));
    span.end = std::clamp(span.end, span.begin, static_cast<int>(traj.tokens.size()));
    for (int t = span.begin; t < span.end; ++t) {
      ctx.assign(batch.prompt_tokens.begin(), batch.prompt_tokens.end());
      ctx.insert(ctx.end(), traj.tokens.begin(), traj.tokens.begin() + t);
      double lp = policy.logprob_cached(ctx, traj.tokens[t], &feats, &probs);
      loss -= lp / G;
      if (grad) policy.accumulate_grad(feats, probs, traj.tokens[t], -weight / G, grad);
    }
  }
  return loss;
}

Trainer::Trainer(TrainerConfig cfg, EnvConfig env, std::vector<ChainTask> tasks)
    : cfg_(cfg), weights_(cfg.weights), env_(env), tasks_(std::move(tasks)),
      policy_(env), ref_(env) {
  if (tasks_.empty()) throw std::invalid_argument("trainer needs at least one task");
  if (cfg_.group_size < 2)
    throw std::invalid_argument("group size must be >= 2 for group normalization");
  switch (cfg_.mode) {
    case TrainMode::MigFull: break;
    case TrainMode::MigNoSft: weights_.w_sft = 0.0; break;
    case TrainMode::GrpoBaseline:
      weights_.w_mig = 0.0;
      weights_.w_sft = 0.0;
      break;
  }
  policy_.warm_start();
  ref_ = policy_;
  grad_.assign(policy_.param_count(), 0.0);
  velocity_.assign(policy_.param_count(), 0.0);
}

GroupBatch Trainer::rollout_group(const ChainTask& task, int iteration, int prompt_slot) {
  GroupBatch batch;
  batch.prompt_id = task.task_id;
  batch.prompt_tokens = task.prompt_tokens;
  const bool frozen_ref = weights_.ref_policy == WeightsConfig::RefPolicy::Frozen;
  for (int g = 0; g < cfg_.group_size; ++g) {
    Rng rng = make_rng(cfg_.seed, static_cast<uint64_t>(iteration),
                       static_cast<uint64_t>(prompt_slot), static_cast<uint64_t>(g));
    auto sampled = policy_.sample_completion(task.prompt_tokens, cfg_.temperature,
                                             env_.max_completion, rng);
    TrajectoryRecord rec;
    rec.tokens = std::move(sampled.tokens);
    if (frozen_ref) {
      rec.logp_ref.reserve(rec.tokens.size());
      TokenSeq ctx = task.prompt_tokens;
      for (int tok : rec.tokens) {
        rec.logp_ref.push_back(ref_.logprob(ctx, tok));
        ctx.push_back(tok);
      }
    } else {
      rec.logp_ref = std::move(sampled.logp);
    }
    rec.parsed = parse_completion({policy_.vocab().render_text(rec.tokens)});
    auto steps = steps_from_parsed(rec.parsed, rec.tokens);
    rec.trace = full_trace(policy_, task.prompt_tokens, steps, task.variant_tokens);
    rec.credit = hwm_credit(rec.trace);
    rec.r_fmt = format_reward(rec.parsed);
    rec.r_acc = check_answer(task, rec.parsed.answer.value_or(""));
    batch.trajectories.push_back(std::move(rec));
  }
  return batch;
}

namespace {
std::string dump_batches(const std::vector<GroupBatch>& batches) {
  std::ostringstream os;
  for (const auto& b : batches) {
    os << "prompt " << b.prompt_id << ":\n";
    for (const auto& t : b.trajectories) {
      os << "  K=" << t.parsed.step_count() << " fmt=" << t.r_fmt << " acc=" << t.r_acc
         << " R=" << fmt_double(t.credit.total) << " ell0=" << fmt_double(t.trace.ell0) << " ells=[";
      for (size_t i = 0; i < t.trace.ells.size(); ++i)
        os << (i ? "," : "") << fmt_double(t.trace.ells[i]);
      os << "] tokens=" << t.tokens.size() << "\n";
    }
  }
  return os.str();
}
}  // namespace

IterationMetrics Trainer::run_iteration(int iteration) {
  if (weights_.ref_policy == WeightsConfig::RefPolicy::Snapshot) ref_.params() = policy_.params();

  std::vector<GroupBatch> batches;
  batches.reserve(cfg_.batch_prompts);
  for (int b = 0; b < cfg_.batch_prompts; ++b) {
    const ChainTask& task =
        tasks_[(static_cast<size_t>(iteration) * cfg_.batch_prompts + b) % tasks_.size()];
    batches.push_back(rollout_group(task, iteration, b));
  }

  std::fill(grad_.begin(), grad_.end(), 0.0);
  const double inv_b = 1.0 / cfg_.batch_prompts;
  LossBreakdown losses;
  for (const auto& batch : batches) {
    std::vector<double> r_mig;
    r_mig.reserve(batch.trajectories.size());
    for (const auto& t : batch.trajectories) r_mig.push_back(t.credit.total);
    auto a_step = group_norm(r_mig);
    auto a_out = outcome_advantage(batch, weights_);

    losses.l_mig += inv_b * mig_loss(batch, a_step, policy_, weights_,
                                     weights_.w_mig * inv_b,
                                     weights_.w_mig != 0.0 ? &grad_ : nullptr);
    losses.l_outcome += inv_b * outcome_loss(batch, a_out, policy_, weights_,
                                             weights_.w_out * inv_b,
                                             weights_.w_out != 0.0 ? &grad_ : nullptr);
    losses.l_sft += inv_b * gated_sft_loss(batch, policy_, weights_.w_sft * inv_b,
                                           weights_.w_sft != 0.0 ? &grad_ : nullptr);
  }
  losses.l_total = weights_.w_mig * losses.l_mig + weights_.w_out * losses.l_outcome +
                   weights_.w_sft * losses.l_sft;

  if (!std::isfinite(losses.l_total) || !std::isfinite(losses.l_mig) ||
      !std::isfinite(losses.l_outcome) || !std::isfinite(losses.l_sft)) {
    throw NumericDivergenceError(
        "non-finite loss at iteration " + std::to_string(iteration), dump_batches(batches));
  }

  auto& w = policy_.params();
  if (weights_.momentum != 0.0) {
    for (size_t i = 0; i < w.size(); ++i) {
      velocity_[i] = weights_.momentum * velocity_[i] + grad_[i];
      w[i] -= weights_.eta * velocity_[i];
    }
  } else {
    for (size_t i = 0; i < w.size(); ++i) w[i] -= weights_.eta * grad_[i];
  }
  for (double v : w) {
    if (!std::isfinite(v))
      throw NumericDivergenceError(
          "non-finite parameter after update at iteration " + std::to_string(iteration),
          dump_batches(batches));
  }

  IterationMetrics m;
  m.iteration = iteration;
  m.losses = losses;
  int n = 0, gated = 0;
  double acc = 0.0, mean_r = 0.0;
  for (const auto& batch : batches) {
    for (const auto& t : batch.trajectories) {
      ++n;
      acc += t.r_acc;
      mean_r += t.credit.total;
      gated += (t.r_acc == 1.0 && t.r_fmt == 1.0) ? 1 : 0;
    }
  }
  m.rollout_accuracy = n ? acc / n : 0.0;
  m.mean_r_mig = n ? mean_r / n : 0.0;
  m.sft_gate_rate = n ? static_cast<double>(gated) / n : 0.0;
  return m;
}

std::string metrics_csv_header() {
  return "iteration,rollout_accuracy,mean_R_MIG,l_mig,l_outcome,l_sft,l_total,sft_gate_rate";
}

std::string metrics_csv_row(const IterationMetrics& m) {
  std::string row = std::to_string(m.iteration);
  row += ',' + fmt_double(m.rollout_accuracy);
  row += ',' + fmt_double(m.mean_r_mig);
  row += ',' + fmt_double(m.losses.l_mig);
  row += ',' + fmt_double(m.losses.l_outcome);
  row += ',' + fmt_double(m.losses.l_sft);
  row += ',' + fmt_double(m.losses.l_total);
  row += ',' + fmt_double(m.sft_gate_rate);
  return row;
}

}  // namespace mig
