#include "stepmig/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stepmig/io.hpp"
#include "stepmig/scoring.hpp"

namespace mig {

std::vector<double> average_ranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("spearman: need at least 2 points");
  auto rx = average_ranks(xs);
  auto ry = average_ranks(ys);
  const size_t n = rx.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: length mismatch");
  size_t n_pos = 0;
  for (int l : labels) n_pos += (l != 0);
  size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::domain_error("roc_auc: needs both classes");
  auto ranks = average_ranks(scores);
  double pos_rank_sum = 0.0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != 0) pos_rank_sum += ranks[i];
  double n_pos_d = static_cast<double>(n_pos);
  return (pos_rank_sum - n_pos_d * (n_pos_d + 1.0) / 2.0) / (n_pos_d * static_cast<double>(n_neg));
}

double permutation_pvalue_spearman(std::span<const double> xs, std::span<const double> ys,
                                   int n_permutations, Rng& rng) {
  auto observed = spearman(xs, ys);
  if (!observed) return 1.0;
  std::vector<double> shuffled(ys.begin(), ys.end());
  int at_least = 0;
  for (int p = 0; p < n_permutations; ++p) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto rho = spearman(xs, shuffled);
    if (rho && std::abs(*rho) >= std::abs(*observed) - 1e-15) ++at_least;
  }
  return (1.0 + at_least) / (1.0 + n_permutations);
}

ValueEstimate mc_value(const ToyPolicy& policy, const ChainTask& task,
                       std::span<const int> prefix_tokens, int n_rollouts, double temperature,
                       Rng& rng) {
  if (n_rollouts < 1) throw std::invalid_argument("mc_value: need at least one rollout");
  TokenSeq ctx(task.prompt_tokens.begin(), task.prompt_tokens.end());
  ctx.insert(ctx.end(), prefix_tokens.begin(), prefix_tokens.end());
  const int budget =
      std::max(1, policy.config().max_completion - static_cast<int>(prefix_tokens.size()));
  int correct = 0;
  for (int r = 0; r < n_rollouts; ++r) {
    auto cont = policy.sample_completion(ctx, temperature, budget, rng);
    TokenSeq full(prefix_tokens.begin(), prefix_tokens.end());
    full.insert(full.end(), cont.tokens.begin(), cont.tokens.end());
    auto parsed = parse_completion({policy.vocab().render_text(full)});
    correct += check_answer(task, parsed.answer.value_or("")) == 1.0 ? 1 : 0;
  }
  return {static_cast<double>(correct) / n_rollouts, n_rollouts, temperature};
}

namespace {

struct StateRecord {
  double v_hat = 0.0;
  double ell_k = 0.0;
  double ell_gain = 0.0;
  double rel_pos = 0.0;
  double is_last = 0.0;
  double token_count = 0.0;
  double random = 0.0;
};

struct TrajRecord {
  LikelihoodTrace trace;
  double v_hat_terminal = 0.0;
};

// Samples trajectories, filters short/invalid parses, and estimates MC
// values for every intermediate state.
void collect_states(const ToyPolicy& policy, const std::vector<ChainTask>& tasks,
                    const StudyConfig& cfg, std::vector<StateRecord>* states,
                    std::vector<TrajRecord>* trajs) {
  Rng meta = make_rng(cfg.seed, 0x57a7e5);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  int made = 0;
  for (size_t ti = 0; ti < tasks.size(); ++ti) {
    if (states && static_cast<int>(states->size()) >= cfg.max_states) break;
    if (trajs && static_cast<int>(trajs->size()) >= cfg.max_states) break;
    const ChainTask& task = tasks[ti];
    Rng rng = make_rng(cfg.seed, 0x9e11, ti);
    auto sampled = policy.sample_completion(task.prompt_tokens, cfg.state_temperature,
                                            policy.config().max_completion, rng);
    auto parsed = parse_completion({policy.vocab().render_text(sampled.tokens)});
    if (!parsed.format_valid || parsed.step_count() < cfg.min_steps) continue;
    auto steps = steps_from_parsed(parsed, sampled.tokens);
    auto trace = full_trace(policy, task.prompt_tokens, steps, task.variant_tokens);
    const int K = parsed.step_count();
    if (trajs) {
      const auto& last = parsed.steps.back().span;
      std::span<const int> prefix(sampled.tokens.data(), static_cast<size_t>(last.end));
      Rng vr = make_rng(cfg.seed, 0x7e2a, ti, 0xffff);
      TrajRecord tr;
      tr.trace = trace;
      tr.v_hat_terminal = mc_value(policy, task, prefix, cfg.rollouts, cfg.temperature, vr).v_hat;
      trajs->push_back(std::move(tr));
    }
    if (states) {
      for (int k = 1; k <= K; ++k) {
        if (static_cast<int>(states->size()) >= cfg.max_states) break;
        const auto& span = parsed.steps[k - 1].span;
        std::span<const int> prefix(sampled.tokens.data(), static_cast<size_t>(span.end));
        Rng vr = make_rng(cfg.seed, 0xab5, ti, static_cast<uint64_t>(k));
        StateRecord rec;
        rec.v_hat = mc_value(policy, task, prefix, cfg.rollouts, cfg.temperature, vr).v_hat;
        rec.ell_k = trace.ells[k - 1];
        rec.ell_gain = trace.ells[k - 1] - trace.ell0;
        rec.rel_pos = static_cast<double>(k) / K;
        rec.is_last = k == K ? 1.0 : 0.0;
        rec.token_count = static_cast<double>(span.end);
        rec.random = uni(meta);
        states->push_back(rec);
      }
    }
    ++made;
  }
  (void)made;
}

bool degenerate_values(const std::vector<double>& v_hats, double threshold, std::string* note) {
  bool all_equal = std::all_of(v_hats.begin(), v_hats.end(),
                               [&](double v) { return v == v_hats.front(); });
  if (v_hats.size() < 4 || all_equal) {
    *note = "value estimates are constant or too few; study skipped";
    return true;
  }
  int pos = 0;
  for (double v : v_hats) pos += v > threshold ? 1 : 0;
  if (pos == 0 || pos == static_cast<int>(v_hats.size())) {
    *note = "single-class labels at threshold; study skipped";
    return true;
  }
  return false;
}

StudyRow make_row(const std::string& name, std::span<const double> metric,
                  std::span<const double> v_hats, std::span<const int> labels,
                  const StudyConfig& cfg, uint64_t perm_tag) {
  StudyRow row;
  row.name = name;
  row.spearman = spearman(metric, v_hats);
  row.auc = roc_auc(metric, labels);
  Rng rng = make_rng(cfg.seed, 0xbead, perm_tag);
  row.p_value = permutation_pvalue_spearman(metric, v_hats, cfg.n_permutations, rng);
  row.n_states = static_cast<int>(metric.size());
  row.seed = cfg.seed;
  return row;
}

}  // namespace

StudyResult proxy_study(const ToyPolicy& policy, const std::vector<ChainTask>& tasks,
                        const StudyConfig& cfg) {
  StudyResult result;
  std::vector<StateRecord> states;
  collect_states(policy, tasks, cfg, &states, nullptr);
  std::vector<double> v_hats;
  for (const auto& s : states) v_hats.push_back(s.v_hat);
  if (degenerate_values(v_hats, cfg.positive_threshold, &result.note)) {
    result.degenerate = true;
    return result;
  }
  std::vector<int> labels;
  for (double v : v_hats) labels.push_back(v > cfg.positive_threshold ? 1 : 0);

  auto column = [&](auto member) {
    std::vector<double> col;
    col.reserve(states.size());
    for (const auto& s : states) col.push_back(s.*member);
    return col;
  };
  const std::pair<std::string, double StateRecord::*> metrics[] = {
      {"ell_k", &StateRecord::ell_k},       {"ell_gain", &StateRecord::ell_gain},
      {"rel_pos", &StateRecord::rel_pos},   {"is_last_step", &StateRecord::is_last},
      {"token_count", &StateRecord::token_count}, {"random", &StateRecord::random}};
  uint64_t tag = 0;
  for (const auto& [name, member] : metrics)
    result.rows.push_back(make_row(name, column(member), v_hats, labels, cfg, ++tag));
  return result;
}

StudyResult aggregation_study(const ToyPolicy& policy, const std::vector<ChainTask>& tasks,
                              const StudyConfig& cfg) {
  StudyResult result;
  std::vector<TrajRecord> trajs;
  collect_states(policy, tasks, cfg, nullptr, &trajs);
  std::vector<double> v_hats;
  for (const auto& t : trajs) v_hats.push_back(t.v_hat_terminal);
  if (degenerate_values(v_hats, cfg.positive_threshold, &result.note)) {
    result.degenerate = true;
    return result;
  }
  std::vector<int> labels;
  for (double v : v_hats) labels.push_back(v > cfg.positive_threshold ? 1 : 0);

  uint64_t tag = 100;
  for (auto strategy : kAllStrategies) {
    std::vector<double> rewards;
    rewards.reserve(trajs.size());
    for (const auto& t : trajs) rewards.push_back(aggregate(t.trace, strategy));
    result.rows.push_back(
        make_row(strategy_name(strategy), rewards, v_hats, labels, cfg, ++tag));
  }
  return result;
}

std::string study_csv(const StudyResult& result) {
  std::string out = "metric_or_strategy,spearman,auc,p_value,n_states,seed\n";
  for (const auto& row : result.rows) {
    out += row.name;
    out += ',';
    out += row.spearman ? fmt_double(*row.spearman) : "nan";
    out += ',' + fmt_double(row.auc);
    out += ',' + fmt_double(row.p_value);
    out += ',' + std::to_string(row.n_states);
    out += ',' + std::to_string(row.seed);
    out += '\n';
  }
  return out;
}

}  // namespace mig
