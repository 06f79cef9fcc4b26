#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stepmig/rng.hpp"
#include "stepmig/scoring.hpp"

namespace mig {

// Synthetic chain-arithmetic environment. A task is a start value and a list
// of modular operations; the canonical completion works the chain one step
// per "### Step j" header and restates the final value inside the answer
// tags, so the parser and the environment share one format. Every token
// renders as exactly one whitespace-delimited word, which keeps parse spans
// aligned with policy token indices.
struct WarmStartConfig {
  double template_w = 8.0;   // structural transitions (tags, headers)
  double op_copy = 7.0;      // copy the j-th prompt operation at step j
  double op_gate = 2.0;      // "an operation comes after a step number"
  double num_gate = 2.0;     // "a value comes after an operation"
  double ans_gate = 6.0;     // "a value comes after <answer>"
  double hnum_gate = 6.0;    // "a step number comes after Step"
  double ans_copy = 6.0;     // copy the last chain value into the answer slot
  double bag_copy = 1.5;     // weak copy head over the whole window
  double arith = 3.4;        // (op, value) -> result table; sets initial per-hop fidelity
  double protect = 8.0;      // suppression of off-template token kinds
};

struct EnvConfig {
  int m_mod = 23;
  int chain_len = 4;
  int max_completion = 96;
  int window = 24;
  int pos_buckets = 8;
  int bucket_width = 4;
  int max_step_headers = 5;
  WarmStartConfig warm;
  double posterior_q = 0.6;      // per-hop execution fidelity of the reference scorer
  double posterior_slip = 1e-3;  // terminal slip keeping log-probs finite

  std::string to_json() const;
  static EnvConfig from_json(const std::string& json);
};

// Fixed symbolic vocabulary: value tokens, op tokens (+a, -a, xa for a=1..5),
// header pieces ("###", "Step", step numbers), the four delimiters, and the
// prompt terminator.
class Vocab {
 public:
  enum OpKind { Add = 0, Sub = 1, Mul = 2 };
  static constexpr int kOpOperands = 5;
  static constexpr int kOpCount = 3 * kOpOperands;

  Vocab(int m_mod, int max_step_headers);

  int size() const { return size_; }
  int m_mod() const { return m_mod_; }

  int num(int v) const { return v; }
  bool is_num(int t) const { return t >= 0 && t < m_mod_; }
  int num_value(int t) const { return t; }

  int op(OpKind kind, int operand) const { return m_mod_ + kind * kOpOperands + (operand - 1); }
  bool is_op(int t) const { return t >= m_mod_ && t < m_mod_ + kOpCount; }
  int op_index(int t) const { return t - m_mod_; }
  int apply_op(int op_token, int v) const;

  int hash3() const { return m_mod_ + kOpCount; }
  int stepw() const { return hash3() + 1; }
  int hnum(int j) const { return stepw() + j; }  // j = 1..max_step_headers
  bool is_hnum(int t) const { return t > stepw() && t <= stepw() + max_hdr_; }
  int think_open() const { return stepw() + max_hdr_ + 1; }
  int think_close() const { return think_open() + 1; }
  int ans_open() const { return think_open() + 2; }
  int ans_close() const { return think_open() + 3; }
  int go() const { return think_open() + 4; }

  std::string word(int t) const;
  std::string render_text(std::span<const int> tokens) const;

 private:
  int m_mod_;
  int max_hdr_;
  int size_;
};

struct ChainTask {
  int64_t task_id = 0;
  int v0 = 0;
  std::vector<int> ops;     // op tokens, in application order
  std::vector<int> values;  // v_1..v_L
  int answer_value = 0;
  TokenSeq prompt_tokens;   // [v0, ops..., go]
  std::vector<std::string> variants;  // answer texts; [0] canonical
  VariantSet variant_tokens;
};

ChainTask make_task(const Vocab& vocab, const EnvConfig& cfg, Rng& rng);
std::vector<ChainTask> generate_tasks(const EnvConfig& cfg, int count, uint64_t seed);

double check_answer(const ChainTask& task, const std::string& answer_text);  // r_acc in {0,1}

TokenSeq oracle_completion(const Vocab& vocab, const ChainTask& task);

std::string task_to_json(const ChainTask& task);
bool task_from_json(const std::string& line, const EnvConfig& cfg, ChainTask* task,
                    std::string* error);

// Linear-softmax policy over sparse context features: ordered one-hot window
// slots, a bag of window tokens, a coarse position bucket, and an
// (operation x operand-value) interaction active when the previous token is
// an operation. Gradients are analytic throughout.
class ToyPolicy final : public PolicyScorer {
 public:
  explicit ToyPolicy(EnvConfig cfg);

  const EnvConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  int vocab_size() const { return vocab_.size(); }
  int feature_count() const { return n_features_; }
  int param_count() const { return n_features_ * vocab_.size(); }

  std::vector<double>& params() { return w_; }
  const std::vector<double>& params() const { return w_; }
  void zero_params();
  void warm_start();

  void active_features(std::span<const int> context, std::vector<int>* out) const;

  double logprob(std::span<const int> context, int token) const;

  // Computes logprob and caches features/probabilities for gradient reuse.
  double logprob_cached(std::span<const int> context, int token, std::vector<int>* feats,
                        std::vector<double>* probs) const;

  // grad += scale * d logprob / d params for a token whose feats/probs were
  // produced by logprob_cached. d logprob / d w[f][v] = [v == token] - p_v.
  void accumulate_grad(std::span<const int> feats, std::span<const double> probs, int token,
                       double scale, std::vector<double>* grad) const;

  // Dense convenience used by gradient-check tests.
  std::pair<double, std::vector<double>> logprob_and_grad(std::span<const int> context,
                                                          int token) const;

  double score(std::span<const int> context, std::span<const int> continuation) const override;

  int sample_token(std::span<const int> context, double temperature, Rng& rng) const;

  struct Sampled {
    TokenSeq tokens;
    std::vector<double> logp;  // per-token log-prob at temperature 1
  };
  // Autoregressive sampling until </answer> or max_len. temperature == 0
  // means greedy argmax.
  Sampled sample_completion(std::span<const int> prompt, double temperature, int max_len,
                            Rng& rng) const;

  std::string to_json() const;
  static ToyPolicy from_json(const std::string& json);

 private:
  void logits_into(std::span<const int> feats, std::vector<double>* out) const;

  int slot_feature(int distance, int token) const;  // distance 1..window
  int bag_feature(int token) const;
  int bucket_feature(int bucket) const;
  int cross_feature(int op_index, int value) const;

  EnvConfig cfg_;
  Vocab vocab_;
  int n_features_;
  int bag_base_, bucket_base_, cross_base_;
  std::vector<double> w_;
};

// Task-aware reference scorer: models the remaining chain as executed with
// per-hop fidelity q (uniform slip otherwise) from the last value mentioned
// in the context. On the oracle trajectory its answer likelihood rises
// strictly with every completed step, which is the environment's
// "each step narrows the answer" property in executable form.
class PosteriorScorer final : public PolicyScorer {
 public:
  PosteriorScorer(const ChainTask& task, const EnvConfig& cfg);
  double score(std::span<const int> context, std::span<const int> continuation) const override;

 private:
  const ChainTask& task_;
  EnvConfig cfg_;
  Vocab vocab_;
};

}  // namespace mig
