#include "stepmig/policy_env.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace mig {

namespace {
using nlohmann::json;

json warm_to_json(const WarmStartConfig& w) {
  return json{{"template_w", w.template_w}, {"op_copy", w.op_copy},   {"op_gate", w.op_gate},
              {"num_gate", w.num_gate},     {"ans_gate", w.ans_gate}, {"hnum_gate", w.hnum_gate},
              {"ans_copy", w.ans_copy},     {"bag_copy", w.bag_copy}, {"arith", w.arith},
              {"protect", w.protect}};
}

WarmStartConfig warm_from_json(const json& j) {
  WarmStartConfig w;
  w.template_w = j.value("template_w", w.template_w);
  w.op_copy = j.value("op_copy", w.op_copy);
  w.op_gate = j.value("op_gate", w.op_gate);
  w.num_gate = j.value("num_gate", w.num_gate);
  w.ans_gate = j.value("ans_gate", w.ans_gate);
  w.hnum_gate = j.value("hnum_gate", w.hnum_gate);
  w.ans_copy = j.value("ans_copy", w.ans_copy);
  w.bag_copy = j.value("bag_copy", w.bag_copy);
  w.arith = j.value("arith", w.arith);
  w.protect = j.value("protect", w.protect);
  return w;
}
}  // namespace

std::string EnvConfig::to_json() const {
  json j{{"m_mod", m_mod},
         {"chain_len", chain_len},
         {"max_completion", max_completion},
         {"window", window},
         {"pos_buckets", pos_buckets},
         {"bucket_width", bucket_width},
         {"max_step_headers", max_step_headers},
         {"warm", warm_to_json(warm)},
         {"posterior_q", posterior_q},
         {"posterior_slip", posterior_slip}};
  return j.dump();
}

EnvConfig EnvConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  EnvConfig cfg;
  cfg.m_mod = j.value("m_mod", cfg.m_mod);
  cfg.chain_len = j.value("chain_len", cfg.chain_len);
  cfg.max_completion = j.value("max_completion", cfg.max_completion);
  cfg.window = j.value("window", cfg.window);
  cfg.pos_buckets = j.value("pos_buckets", cfg.pos_buckets);
  cfg.bucket_width = j.value("bucket_width", cfg.bucket_width);
  cfg.max_step_headers = j.value("max_step_headers", cfg.max_step_headers);
  if (j.contains("warm")) cfg.warm = warm_from_json(j["warm"]);
  cfg.posterior_q = j.value("posterior_q", cfg.posterior_q);
  cfg.posterior_slip = j.value("posterior_slip", cfg.posterior_slip);
  if (cfg.m_mod < 2 || cfg.m_mod > 99) throw std::invalid_argument("env.m_mod must be in [2, 99]");
  if (cfg.chain_len < 1 || cfg.chain_len > cfg.max_step_headers)
    throw std::invalid_argument("env.chain_len must be in [1, max_step_headers]");
  return cfg;
}

Vocab::Vocab(int m_mod, int max_step_headers) : m_mod_(m_mod), max_hdr_(max_step_headers) {
  size_ = m_mod_ + kOpCount + 2 + max_hdr_ + 4 + 1;
}

int Vocab::apply_op(int op_token, int v) const {
  int idx = op_index(op_token);
  int kind = idx / kOpOperands;
  int a = idx % kOpOperands + 1;
  int r = 0;
  switch (static_cast<OpKind>(kind)) {
    case Add: r = v + a; break;
    case Sub: r = v - a; break;
    case Mul: r = v * a; break;
  }
  return ((r % m_mod_) + m_mod_) % m_mod_;
}

std::string Vocab::word(int t) const {
  if (is_num(t)) return std::to_string(t);
  if (is_op(t)) {
    int idx = op_index(t);
    int kind = idx / kOpOperands;
    int a = idx % kOpOperands + 1;
    const char* sym = kind == Add ? "+" : (kind == Sub ? "-" : "x");
    return std::string(sym) + std::to_string(a);
  }
  if (t == hash3()) return "###";
  if (t == stepw()) return "Step";
  if (is_hnum(t)) return std::to_string(t - stepw());
  if (t == think_open()) return "<think>";
  if (t == think_close()) return "</think>";
  if (t == ans_open()) return "<answer>";
  if (t == ans_close()) return "</answer>";
  if (t == go()) return "solve";
  return "?";
}

std::string Vocab::render_text(std::span<const int> tokens) const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) {
      int t = tokens[i];
      bool newline = t == hash3() || t == think_close() || t == ans_open();
      out += newline ? '\n' : ' ';
    }
    out += word(tokens[i]);
  }
  return out;
}

ChainTask make_task(const Vocab& vocab, const EnvConfig& cfg, Rng& rng) {
  ChainTask task;
  std::uniform_int_distribution<int> value_dist(0, cfg.m_mod - 1);
  std::uniform_int_distribution<int> kind_dist(0, 2);
  std::uniform_int_distribution<int> operand_dist(1, Vocab::kOpOperands);
  task.v0 = value_dist(rng);
  int v = task.v0;
  for (int j = 0; j < cfg.chain_len; ++j) {
    int op = vocab.op(static_cast<Vocab::OpKind>(kind_dist(rng)), operand_dist(rng));
    task.ops.push_back(op);
    v = vocab.apply_op(op, v);
    task.values.push_back(v);
  }
  task.answer_value = v;
  task.prompt_tokens.push_back(vocab.num(task.v0));
  for (int op : task.ops) task.prompt_tokens.push_back(op);
  task.prompt_tokens.push_back(vocab.go());
  // The closed vocabulary has exactly one rendering per value, so the
  // variant set is the canonical decimal text alone.
  task.variants = {std::to_string(task.answer_value)};
  task.variant_tokens.variants = {{vocab.num(task.answer_value)}};
  return task;
}

std::vector<ChainTask> generate_tasks(const EnvConfig& cfg, int count, uint64_t seed) {
  Vocab vocab(cfg.m_mod, cfg.max_step_headers);
  std::vector<ChainTask> tasks;
  tasks.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, 0x7a51, static_cast<uint64_t>(i));
    ChainTask t = make_task(vocab, cfg, rng);
    t.task_id = i;
    tasks.push_back(std::move(t));
  }
  return tasks;
}

double check_answer(const ChainTask& task, const std::string& answer_text) {
  auto strip = [](const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return std::string{};
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  };
  std::string a = strip(answer_text);
  for (const auto& v : task.variants)
    if (a == v) return 1.0;
  return 0.0;
}

TokenSeq oracle_completion(const Vocab& vocab, const ChainTask& task) {
  TokenSeq out;
  out.push_back(vocab.think_open());
  for (size_t j = 0; j < task.ops.size(); ++j) {
    out.push_back(vocab.hash3());
    out.push_back(vocab.stepw());
    out.push_back(vocab.hnum(static_cast<int>(j) + 1));
    out.push_back(task.ops[j]);
    out.push_back(vocab.num(task.values[j]));
  }
  out.push_back(vocab.think_close());
  out.push_back(vocab.ans_open());
  out.push_back(vocab.num(task.answer_value));
  out.push_back(vocab.ans_close());
  return out;
}

std::string task_to_json(const ChainTask& task) {
  json j;
  j["task_id"] = task.task_id;
  j["prompt_tokens"] = task.prompt_tokens;
  j["answer"] = task.variants.empty() ? "" : task.variants[0];
  j["variants"] = task.variants;
  return j.dump();
}

bool task_from_json(const std::string& line, const EnvConfig& cfg, ChainTask* task,
                    std::string* error) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("task_id") ||
      !j.contains("prompt_tokens") || !j.contains("variants")) {
    if (error) *error = "task record needs task_id, prompt_tokens, variants";
    return false;
  }
  Vocab vocab(cfg.m_mod, cfg.max_step_headers);
  ChainTask t;
  t.task_id = j["task_id"].get<int64_t>();
  for (const auto& tok : j["prompt_tokens"]) {
    int id = tok.get<int>();
    if (id < 0 || id >= vocab.size()) {
      if (error) *error = "prompt token out of vocabulary";
      return false;
    }
    t.prompt_tokens.push_back(id);
  }
  // Reconstruct chain structure from the prompt: value, ops..., go.
  if (t.prompt_tokens.size() < 3 || !vocab.is_num(t.prompt_tokens.front()) ||
      t.prompt_tokens.back() != vocab.go()) {
    if (error) *error = "prompt must be [value, ops..., solve]";
    return false;
  }
  t.v0 = vocab.num_value(t.prompt_tokens.front());
  int v = t.v0;
  for (size_t i = 1; i + 1 < t.prompt_tokens.size(); ++i) {
    int op = t.prompt_tokens[i];
    if (!vocab.is_op(op)) {
      if (error) *error = "prompt interior must be op tokens";
      return false;
    }
    t.ops.push_back(op);
    v = vocab.apply_op(op, v);
    t.values.push_back(v);
  }
  t.answer_value = v;
  for (const auto& s : j["variants"]) t.variants.push_back(s.get<std::string>());
  if (t.variants.empty()) {
    if (error) *error = "variants must be nonempty";
    return false;
  }
  t.variant_tokens.variants = {{vocab.num(t.answer_value)}};
  *task = std::move(t);
  return true;
}

ToyPolicy::ToyPolicy(EnvConfig cfg)
    : cfg_(cfg), vocab_(cfg.m_mod, cfg.max_step_headers) {
  const int V = vocab_.size();
  bag_base_ = 1 + cfg_.window * V;
  bucket_base_ = bag_base_ + V;
  cross_base_ = bucket_base_ + cfg_.pos_buckets;
  n_features_ = cross_base_ + Vocab::kOpCount * cfg_.m_mod;
  w_.assign(static_cast<size_t>(n_features_) * V, 0.0);
}

void ToyPolicy::zero_params() { std::fill(w_.begin(), w_.end(), 0.0); }

int ToyPolicy::slot_feature(int distance, int token) const {
  return 1 + (distance - 1) * vocab_.size() + token;
}
int ToyPolicy::bag_feature(int token) const { return bag_base_ + token; }
int ToyPolicy::bucket_feature(int bucket) const { return bucket_base_ + bucket; }
int ToyPolicy::cross_feature(int op_index, int value) const {
  return cross_base_ + op_index * cfg_.m_mod + value;
}

void ToyPolicy::active_features(std::span<const int> context, std::vector<int>* out) const {
  out->clear();
  out->push_back(0);  // bias
  const int len = static_cast<int>(context.size());
  const int depth = std::min(cfg_.window, len);
  for (int d = 1; d <= depth; ++d) out->push_back(slot_feature(d, context[len - d]));
  // bag: distinct window tokens
  {
    static thread_local std::vector<int> seen;
    seen.assign(vocab_.size(), 0);
    for (int d = 1; d <= depth; ++d) {
      int t = context[len - d];
      if (!seen[t]) {
        seen[t] = 1;
        out->push_back(bag_feature(t));
      }
    }
  }
  out->push_back(bucket_feature(std::min(len / cfg_.bucket_width, cfg_.pos_buckets - 1)));
  if (len > 0 && vocab_.is_op(context[len - 1])) {
    for (int d = 2; d <= depth; ++d) {
      int t = context[len - d];
      if (vocab_.is_num(t)) {
        out->push_back(cross_feature(vocab_.op_index(context[len - 1]), vocab_.num_value(t)));
        break;
      }
    }
  }
}

void ToyPolicy::logits_into(std::span<const int> feats, std::vector<double>* out) const {
  const int V = vocab_.size();
  out->assign(V, 0.0);
  for (int f : feats) {
    const double* row = w_.data() + static_cast<size_t>(f) * V;
    for (int v = 0; v < V; ++v) (*out)[v] += row[v];
  }
}

namespace {
void log_softmax_inplace(std::vector<double>* logits) {
  double mx = *std::max_element(logits->begin(), logits->end());
  double sum = 0.0;
  for (double v : *logits) sum += std::exp(v - mx);
  double lz = mx + std::log(sum);
  for (double& v : *logits) v -= lz;
}
}  // namespace

double ToyPolicy::logprob(std::span<const int> context, int token) const {
  static thread_local std::vector<int> feats;
  static thread_local std::vector<double> logits;
  active_features(context, &feats);
  logits_into(feats, &logits);
  log_softmax_inplace(&logits);
  return logits[token];
}

double ToyPolicy::logprob_cached(std::span<const int> context, int token, std::vector<int>* feats,
                                 std::vector<double>* probs) const {
  active_features(context, feats);
  logits_into(*feats, probs);
  log_softmax_inplace(probs);
  double lp = (*probs)[token];
  for (double& v : *probs) v = std::exp(v);
  return lp;
}

void ToyPolicy::accumulate_grad(std::span<const int> feats, std::span<const double> probs,
                                int token, double scale, std::vector<double>* grad) const {
  const int V = vocab_.size();
  for (int f : feats) {
    double* row = grad->data() + static_cast<size_t>(f) * V;
    for (int v = 0; v < V; ++v) row[v] -= scale * probs[v];
    row[token] += scale;
  }
}

std::pair<double, std::vector<double>> ToyPolicy::logprob_and_grad(std::span<const int> context,
                                                                   int token) const {
  std::vector<int> feats;
  std::vector<double> probs;
  double lp = logprob_cached(context, token, &feats, &probs);
  std::vector<double> grad(w_.size(), 0.0);
  accumulate_grad(feats, probs, token, 1.0, &grad);
  return {lp, std::move(grad)};
}

double ToyPolicy::score(std::span<const int> context, std::span<const int> continuation) const {
  if (continuation.empty()) throw std::invalid_argument("cannot score an empty continuation");
  static thread_local TokenSeq ctx;
  ctx.assign(context.begin(), context.end());
  double total = 0.0;
  for (int t : continuation) {
    total += logprob(ctx, t);
    ctx.push_back(t);
  }
  return total / static_cast<double>(continuation.size());
}

int ToyPolicy::sample_token(std::span<const int> context, double temperature, Rng& rng) const {
  static thread_local std::vector<int> feats;
  static thread_local std::vector<double> logits;
  active_features(context, &feats);
  logits_into(feats, &logits);
  if (temperature <= 0.0) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  static thread_local std::vector<double> expv;
  expv.assign(logits.size(), 0.0);
  for (size_t v = 0; v < logits.size(); ++v) {
    expv[v] = std::exp((logits[v] - mx) / temperature);
    sum += expv[v];
  }
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double u = uni(rng) * sum;
  double acc = 0.0;
  for (size_t v = 0; v < expv.size(); ++v) {
    acc += expv[v];
    if (u <= acc) return static_cast<int>(v);
  }
  return static_cast<int>(expv.size()) - 1;
}

ToyPolicy::Sampled ToyPolicy::sample_completion(std::span<const int> prompt, double temperature,
                                                int max_len, Rng& rng) const {
  Sampled out;
  TokenSeq ctx(prompt.begin(), prompt.end());
  while (static_cast<int>(out.tokens.size()) < max_len) {
    int tok = sample_token(ctx, temperature, rng);
    out.tokens.push_back(tok);
    out.logp.push_back(logprob(ctx, tok));  // temperature-1 log-prob for ratios
    ctx.push_back(tok);
    if (tok == vocab_.ans_close()) break;
  }
  return out;
}

void ToyPolicy::warm_start() {
  zero_params();
  const WarmStartConfig& ws = cfg_.warm;
  const Vocab& vb = vocab_;
  const int V = vb.size();
  auto at = [&](int feat, int tok) -> double& { return w_[static_cast<size_t>(feat) * V + tok]; };

  // Structural skeleton, keyed on nearby slots.
  at(slot_feature(1, vb.go()), vb.think_open()) += ws.template_w;
  at(slot_feature(1, vb.think_open()), vb.hash3()) += ws.template_w;
  at(slot_feature(1, vb.hash3()), vb.stepw()) += ws.template_w;
  at(slot_feature(3, vb.think_open()), vb.hnum(1)) += ws.template_w;
  for (int j = 1; j < cfg_.max_step_headers; ++j)
    at(slot_feature(5, vb.hnum(j)), vb.hnum(j + 1)) += ws.template_w;
  for (int j = 1; j < cfg_.chain_len; ++j)
    at(slot_feature(3, vb.hnum(j)), vb.hash3()) += ws.template_w;
  at(slot_feature(3, vb.hnum(cfg_.chain_len)), vb.think_close()) += ws.template_w;
  at(slot_feature(1, vb.think_close()), vb.ans_open()) += ws.template_w;
  at(slot_feature(2, vb.ans_open()), vb.ans_close()) += ws.template_w;

  // Token-kind gates.
  for (int j = 1; j <= cfg_.max_step_headers; ++j) {
    at(slot_feature(1, vb.stepw()), vb.hnum(j)) += ws.hnum_gate;
    for (int k = 0; k < Vocab::kOpCount; ++k)
      at(slot_feature(1, vb.hnum(j)), vb.m_mod() + k) += ws.op_gate;
  }
  for (int k = 0; k < Vocab::kOpCount; ++k)
    for (int v = 0; v < vb.m_mod(); ++v) at(slot_feature(1, vb.m_mod() + k), v) += ws.num_gate;
  for (int v = 0; v < vb.m_mod(); ++v) at(slot_feature(1, vb.ans_open()), v) += ws.ans_gate;

  // Copy the j-th prompt operation at step j. In the canonical layout the
  // prompt op for step j sits exactly 4j+5 tokens back at the op slot.
  for (int j = 1; j <= cfg_.chain_len; ++j) {
    int d = 4 * j + 5;
    if (d > cfg_.window) break;
    for (int k = 0; k < Vocab::kOpCount; ++k)
      at(slot_feature(d, vb.m_mod() + k), vb.m_mod() + k) += ws.op_copy;
  }

  // Noisy arithmetic table: (op, value) -> correct successor.
  for (int k = 0; k < Vocab::kOpCount; ++k)
    for (int v = 0; v < vb.m_mod(); ++v)
      at(cross_feature(k, v), vb.apply_op(vb.m_mod() + k, v)) += ws.arith;

  // Copy heads: strong slot copy for the answer, weak bag copy everywhere
  // (the bag head is what step-conditioned scoring reads).
  for (int v = 0; v < vb.m_mod(); ++v) {
    at(slot_feature(3, v), v) += ws.ans_copy;
    at(bag_feature(v), v) += ws.bag_copy;
  }

  // Suppress off-template token kinds where the copy heads would otherwise
  // leak: ops never follow ops/values/"###", values never follow "Step".
  for (int k = 0; k < Vocab::kOpCount; ++k) {
    int opk = vb.m_mod() + k;
    for (int k2 = 0; k2 < Vocab::kOpCount; ++k2)
      at(slot_feature(1, opk), vb.m_mod() + k2) -= ws.protect;
    at(slot_feature(1, vb.hash3()), opk) -= ws.protect;
    for (int v = 0; v < vb.m_mod(); ++v) at(slot_feature(1, v), opk) -= ws.protect;
  }
  for (int v = 0; v < vb.m_mod(); ++v) at(slot_feature(1, vb.stepw()), v) -= ws.protect;
}

std::string ToyPolicy::to_json() const {
  json j;
  j["env"] = json::parse(cfg_.to_json());
  j["params"] = w_;
  return j.dump();
}

ToyPolicy ToyPolicy::from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.contains("env") || !j.contains("params"))
    throw std::invalid_argument("policy checkpoint needs env and params");
  ToyPolicy p(EnvConfig::from_json(j["env"].dump()));
  auto params = j["params"].get<std::vector<double>>();
  if (params.size() != p.w_.size())
    throw std::invalid_argument("policy checkpoint has wrong parameter count");
  p.w_ = std::move(params);
  return p;
}

PosteriorScorer::PosteriorScorer(const ChainTask& task, const EnvConfig& cfg)
    : task_(task), cfg_(cfg), vocab_(cfg.m_mod, cfg.max_step_headers) {}

double PosteriorScorer::score(std::span<const int> context,
                              std::span<const int> continuation) const {
  if (continuation.empty()) throw std::invalid_argument("cannot score an empty continuation");
  // Steps completed = header marks seen; current value = last value token.
  int steps = 0;
  int value = task_.v0;
  for (int t : context) {
    if (t == vocab_.hash3()) ++steps;
    if (vocab_.is_num(t)) value = vocab_.num_value(t);
  }
  steps = std::min<int>(steps, static_cast<int>(task_.ops.size()));

  const int M = cfg_.m_mod;
  std::vector<double> dist(M, 0.0);
  dist[value] = 1.0;
  for (size_t j = steps; j < task_.ops.size(); ++j) {
    std::vector<double> next(M, (1.0 - cfg_.posterior_q) / M);
    for (int v = 0; v < M; ++v)
      next[vocab_.apply_op(task_.ops[j], v)] += cfg_.posterior_q * dist[v];
    dist.swap(next);
  }

  double total = 0.0;
  for (size_t i = 0; i < continuation.size(); ++i) {
    int t = continuation[i];
    double p;
    if (i == 0 && vocab_.is_num(t))
      p = (1.0 - cfg_.posterior_slip) * dist[vocab_.num_value(t)] + cfg_.posterior_slip / M;
    else
      p = 1.0 / vocab_.size();
    total += std::log(p);
  }
  return total / static_cast<double>(continuation.size());
}

}  // namespace mig
