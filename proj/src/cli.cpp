#include "stepmig/cli.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "stepmig/io.hpp"

namespace mig {

namespace fs = std::filesystem;
using nlohmann::json;

std::string ConfigError::join(const std::vector<std::string>& issues) {
  std::string out = "invalid configuration:";
  for (const auto& i : issues) out += "\n  - " + i;
  return out;
}

CliConfig config_from_json(const std::string& json_text) {
  std::vector<std::string> issues;
  json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw ConfigError({"config is not a JSON object"});

  CliConfig cfg;
  auto& t = cfg.trainer;

  std::string mode = j.value("mode", std::string("mig-full"));
  if (!mode_from_name(mode, &t.mode))
    issues.push_back("mode: expected mig-full | mig-no-sft | grpo-baseline, got '" + mode + "'");

  t.group_size = j.value("G", t.group_size);
  if (t.group_size < 2) issues.push_back("G: group size must be >= 2");
  t.batch_prompts = j.value("batch_prompts", t.batch_prompts);
  if (t.batch_prompts < 1) issues.push_back("batch_prompts: must be >= 1");
  t.iterations = j.value("iterations", t.iterations);
  if (t.iterations < 1) issues.push_back("iterations: must be >= 1");
  t.seed = j.value("seed", t.seed);
  t.temperature = j.value("temperature", t.temperature);
  if (!(t.temperature > 0.0)) issues.push_back("temperature: must be > 0 for rollouts");

  auto& w = t.weights;
  w.w_mig = j.value("w_mig", w.w_mig);
  w.w_out = j.value("w_out", w.w_out);
  w.w_sft = j.value("w_sft", w.w_sft);
  w.gamma_acc = j.value("gamma_acc", w.gamma_acc);
  w.eta = j.value("eta", w.eta);
  w.momentum = j.value("momentum", w.momentum);
  for (auto [name, v] : {std::pair<const char*, double>{"w_mig", w.w_mig},
                         {"w_out", w.w_out},
                         {"w_sft", w.w_sft}})
    if (!(v >= 0.0) || !std::isfinite(v))
      issues.push_back(std::string(name) + ": must be a finite nonnegative number");
  if (!std::isfinite(w.gamma_acc)) issues.push_back("gamma_acc: must be finite");
  if (!std::isfinite(w.eta) || w.eta < 0.0) issues.push_back("eta: must be finite and >= 0");
  if (j.contains("clip_epsilon") && !j["clip_epsilon"].is_null()) {
    double eps = j["clip_epsilon"].get<double>();
    if (!(eps > 0.0)) issues.push_back("clip_epsilon: must be > 0 when present");
    w.clip_epsilon = eps;
  }
  std::string ref = j.value("ref_policy", std::string("snapshot"));
  if (ref == "snapshot") w.ref_policy = WeightsConfig::RefPolicy::Snapshot;
  else if (ref == "frozen") w.ref_policy = WeightsConfig::RefPolicy::Frozen;
  else issues.push_back("ref_policy: expected snapshot | frozen, got '" + ref + "'");

  cfg.task_seed = j.value("task_seed", cfg.task_seed);
  cfg.num_tasks = j.value("num_tasks", cfg.num_tasks);
  if (cfg.num_tasks < 1) issues.push_back("num_tasks: must be >= 1");
  if (j.contains("checkpoint_iters")) {
    cfg.checkpoint_iters.clear();
    for (const auto& it : j["checkpoint_iters"]) cfg.checkpoint_iters.push_back(it.get<int>());
  }

  try {
    cfg.env = EnvConfig::from_json(j.value("env", json::object()).dump());
  } catch (const std::exception& e) {
    issues.push_back(std::string("env: ") + e.what());
  }

  if (j.contains("study")) {
    const auto& s = j["study"];
    cfg.study.rollouts = s.value("rollouts", cfg.study.rollouts);
    cfg.study.temperature = s.value("temperature", cfg.study.temperature);
    cfg.study.state_temperature = s.value("state_temperature", cfg.study.state_temperature);
    cfg.study.n_permutations = s.value("n_permutations", cfg.study.n_permutations);
    cfg.study.max_states = s.value("max_states", cfg.study.max_states);
    cfg.study.positive_threshold = s.value("positive_threshold", cfg.study.positive_threshold);
    cfg.study.min_steps = s.value("min_steps", cfg.study.min_steps);
    cfg.study.seed = s.value("seed", cfg.study.seed);
    if (cfg.study.rollouts < 1) issues.push_back("study.rollouts: must be >= 1");
    if (cfg.study.n_permutations < 1) issues.push_back("study.n_permutations: must be >= 1");
  }

  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

std::string config_to_json(const CliConfig& cfg) {
  json j;
  j["mode"] = mode_name(cfg.trainer.mode);
  j["G"] = cfg.trainer.group_size;
  j["batch_prompts"] = cfg.trainer.batch_prompts;
  j["iterations"] = cfg.trainer.iterations;
  j["seed"] = cfg.trainer.seed;
  j["temperature"] = cfg.trainer.temperature;
  const auto& w = cfg.trainer.weights;
  j["w_mig"] = w.w_mig;
  j["w_out"] = w.w_out;
  j["w_sft"] = w.w_sft;
  j["gamma_acc"] = w.gamma_acc;
  j["eta"] = w.eta;
  j["momentum"] = w.momentum;
  if (w.clip_epsilon) j["clip_epsilon"] = *w.clip_epsilon;
  else j["clip_epsilon"] = nullptr;
  j["ref_policy"] = w.ref_policy == WeightsConfig::RefPolicy::Snapshot ? "snapshot" : "frozen";
  j["task_seed"] = cfg.task_seed;
  j["num_tasks"] = cfg.num_tasks;
  j["checkpoint_iters"] = cfg.checkpoint_iters;
  j["env"] = json::parse(cfg.env.to_json());
  j["study"] = {{"rollouts", cfg.study.rollouts},
                {"temperature", cfg.study.temperature},
                {"state_temperature", cfg.study.state_temperature},
                {"n_permutations", cfg.study.n_permutations},
                {"max_states", cfg.study.max_states},
                {"positive_threshold", cfg.study.positive_threshold},
                {"min_steps", cfg.study.min_steps},
                {"seed", cfg.study.seed}};
  return j.dump(2);
}

int steps_to_threshold(const std::vector<double>& accuracy, double threshold, int window) {
  if (window < 1) window = 1;
  double acc = 0.0;
  for (int i = 0; i < static_cast<int>(accuracy.size()); ++i) {
    acc += accuracy[i];
    if (i >= window) acc -= accuracy[i - window];
    if (i + 1 >= window && acc / window >= threshold) return i + 1;
  }
  return -1;
}

namespace {

double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  return xs[xs.size() / 2];
}

int median_steps(std::vector<int> xs) {
  if (xs.empty()) return -1;
  for (int& x : xs)
    if (x < 0) x = std::numeric_limits<int>::max();
  std::sort(xs.begin(), xs.end());
  int m = xs[xs.size() / 2];
  return m == std::numeric_limits<int>::max() ? -1 : m;
}

SeedOutcome train_one_seed(const CliConfig& cfg, uint64_t seed,
                           const std::vector<ChainTask>& tasks, const fs::path& run_dir) {
  TrainerConfig tcfg = cfg.trainer;
  tcfg.seed = seed;
  Trainer trainer(tcfg, cfg.env, tasks);

  std::string csv = metrics_csv_header() + "\n";
  SeedOutcome outcome;
  outcome.seed = seed;
  for (int it = 1; it <= tcfg.iterations; ++it) {
    IterationMetrics m = trainer.run_iteration(it);
    csv += metrics_csv_row(m) + "\n";
    outcome.accuracy_curve.push_back(m.rollout_accuracy);
    outcome.r_mig_curve.push_back(m.mean_r_mig);
    if (std::find(cfg.checkpoint_iters.begin(), cfg.checkpoint_iters.end(), it) !=
        cfg.checkpoint_iters.end()) {
      write_text_file((run_dir / "checkpoints" /
                       ("seed" + std::to_string(seed) + "_iter" + std::to_string(it) + ".json"))
                          .string(),
                      trainer.policy().to_json());
    }
  }
  write_text_file(
      (run_dir / "checkpoints" / ("seed" + std::to_string(seed) + "_final.json")).string(),
      trainer.policy().to_json());
  write_text_file((run_dir / ("metrics_seed" + std::to_string(seed) + ".csv")).string(), csv);

  const auto& acc = outcome.accuracy_curve;
  int tail = std::min<int>(100, static_cast<int>(acc.size()));
  double fin = 0.0;
  for (int i = static_cast<int>(acc.size()) - tail; i < static_cast<int>(acc.size()); ++i)
    fin += acc[i];
  outcome.final_accuracy = tail ? fin / tail : 0.0;
  outcome.steps_to_80 = steps_to_threshold(acc, 0.8);
  outcome.steps_to_90 = steps_to_threshold(acc, 0.9);
  return outcome;
}

}  // namespace

TrainRunResult run_train(const CliConfig& cfg, const std::vector<uint64_t>& seeds,
                         const std::string& out_root, bool parallel_seeds, std::ostream& log) {
  auto tasks = generate_tasks(cfg.env, cfg.num_tasks, cfg.task_seed);
  std::string task_blob;
  for (const auto& t : tasks) task_blob += task_to_json(t) + "\n";

  json manifest;
  manifest["version"] = "stepmig 0.1.0";
  manifest["config"] = json::parse(config_to_json(cfg));
  manifest["seeds"] = seeds;
  manifest["task_set_hash"] = hex64(fnv1a64(task_blob));
  manifest["layout"] = {"manifest.json", "metrics_seed<seed>.csv", "summary.json", "checkpoints/"};
  std::string manifest_text = manifest.dump(2);
  std::string run_id = hex64(fnv1a64(manifest_text));

  fs::path run_dir = fs::path(out_root) / run_id;
  fs::create_directories(run_dir / "checkpoints");
  write_text_file((run_dir / "manifest.json").string(), manifest_text);

  TrainRunResult result;
  result.run_dir = run_dir.string();
  result.seeds.resize(seeds.size());

  if (parallel_seeds && seeds.size() > 1) {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(seeds.size());
    for (size_t i = 0; i < seeds.size(); ++i) {
      threads.emplace_back([&, i] {
        try {
          result.seeds[i] = train_one_seed(cfg, seeds[i], tasks, run_dir);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (size_t i = 0; i < seeds.size(); ++i) {
      result.seeds[i] = train_one_seed(cfg, seeds[i], tasks, run_dir);
      log << "seed " << seeds[i] << ": final_accuracy=" << fmt_double(result.seeds[i].final_accuracy)
          << " steps_to_80=" << result.seeds[i].steps_to_80 << "\n";
    }
  }

  json summary;
  summary["mode"] = mode_name(cfg.trainer.mode);
  summary["seeds"] = seeds;
  summary["per_seed"] = json::array();
  std::vector<double> finals;
  std::vector<int> s80, s90;
  for (const auto& s : result.seeds) {
    summary["per_seed"].push_back({{"seed", s.seed},
                                   {"final_accuracy", s.final_accuracy},
                                   {"steps_to_80", s.steps_to_80},
                                   {"steps_to_90", s.steps_to_90}});
    finals.push_back(s.final_accuracy);
    s80.push_back(s.steps_to_80);
    s90.push_back(s.steps_to_90);
  }
  summary["median_final_accuracy"] = median(finals);
  summary["median_steps_to_80"] = median_steps(s80);
  summary["median_steps_to_90"] = median_steps(s90);
  write_text_file((run_dir / "summary.json").string(), summary.dump(2));
  log << "run " << run_id << " written to " << result.run_dir << "\n";
  return result;
}

AuditSummary run_audit(const std::string& trace_path,
                       const std::vector<AggregationStrategy>& strategies,
                       const std::string& report_path, const std::string& summary_path,
                       std::ostream& log) {
  std::string text = read_text_file(trace_path);
  AuditSummary summary;
  std::string report;
  double total_sum = 0.0;
  double total_min = std::numeric_limits<double>::infinity();
  double total_max = -std::numeric_limits<double>::infinity();

  for (const auto& line : split_lines(text)) {
    if (line.empty()) continue;
    ++summary.n_lines;
    TraceRecord rec;
    std::string err;
    if (!trace_record_from_json(line, &rec, &err)) {
      ++summary.n_skipped;
      log << "skipping line " << summary.n_lines << ": " << err << "\n";
      continue;
    }
    LikelihoodTrace trace{rec.ell0, rec.ells};
    CreditReportRecord out;
    out.prompt_id = rec.prompt_id;
    CreditVector cv = hwm_credit(trace);
    out.gains = cv.gains;
    out.total = cv.total;
    for (auto s : strategies) {
      try {
        out.strategy_totals[strategy_name(s)] = aggregate(trace, s);
      } catch (const std::domain_error&) {
        // step-normalized strategies are undefined for step-free traces
      }
    }
    report += credit_report_to_json(out) + "\n";
    ++summary.n_ok;
    total_sum += cv.total;
    total_min = std::min(total_min, cv.total);
    total_max = std::max(total_max, cv.total);
  }

  write_text_file(report_path, report);
  std::string csv = "n_lines,n_ok,n_skipped,mean_total,min_total,max_total\n";
  csv += std::to_string(summary.n_lines) + ',' + std::to_string(summary.n_ok) + ',' +
         std::to_string(summary.n_skipped) + ',';
  if (summary.n_ok > 0) {
    csv += fmt_double(total_sum / summary.n_ok) + ',' + fmt_double(total_min) + ',' +
           fmt_double(total_max);
  } else {
    csv += "0,0,0";
  }
  csv += '\n';
  write_text_file(summary_path, csv);
  return summary;
}

StudyResult run_study(const std::string& kind, const CliConfig& cfg,
                      const std::string& checkpoint_path, const std::string& out_csv,
                      std::ostream& log) {
  if (kind != "proxy" && kind != "aggregation")
    throw ConfigError({"study kind must be proxy | aggregation, got '" + kind + "'"});
  ToyPolicy policy = ToyPolicy::from_json(read_text_file(checkpoint_path));
  auto tasks = generate_tasks(policy.config(), cfg.num_tasks, cfg.task_seed);
  StudyResult result = kind == "proxy" ? proxy_study(policy, tasks, cfg.study)
                                       : aggregation_study(policy, tasks, cfg.study);
  if (result.degenerate) log << "warning: " << result.note << "\n";
  write_text_file(out_csv, study_csv(result));
  return result;
}

void run_gen_tasks(const CliConfig& cfg, int count, const std::string& out_path) {
  auto tasks = generate_tasks(cfg.env, count, cfg.task_seed);
  std::string out;
  for (const auto& t : tasks) out += task_to_json(t) + "\n";
  write_text_file(out_path, out);
}

namespace {

std::vector<std::string> validate_csv(const std::string& text, const std::string& header,
                                      int n_fields) {
  std::vector<std::string> issues;
  auto lines = split_lines(text);
  if (lines.empty() || lines[0] != header) {
    issues.push_back("bad header; expected: " + header);
    return issues;
  }
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    int commas = static_cast<int>(std::count(lines[i].begin(), lines[i].end(), ','));
    if (commas != n_fields - 1)
      issues.push_back("line " + std::to_string(i + 1) + ": expected " +
                       std::to_string(n_fields) + " fields");
  }
  return issues;
}

}  // namespace

std::vector<std::string> validate_schema_file(const std::string& kind, const std::string& path) {
  std::string text = read_text_file(path);
  std::vector<std::string> issues;
  if (kind == "config") {
    try {
      config_from_json(text);
    } catch (const ConfigError& e) {
      issues = e.issues();
    }
  } else if (kind == "tasks") {
    EnvConfig env;  // defaults; vocabulary bounds are what matter
    int ln = 0;
    for (const auto& line : split_lines(text)) {
      ++ln;
      if (line.empty()) continue;
      ChainTask task;
      std::string err;
      if (!task_from_json(line, env, &task, &err))
        issues.push_back("line " + std::to_string(ln) + ": " + err);
    }
  } else if (kind == "traces") {
    int ln = 0;
    for (const auto& line : split_lines(text)) {
      ++ln;
      if (line.empty()) continue;
      TraceRecord rec;
      std::string err;
      if (!trace_record_from_json(line, &rec, &err))
        issues.push_back("line " + std::to_string(ln) + ": " + err);
    }
  } else if (kind == "credit-report") {
    int ln = 0;
    for (const auto& line : split_lines(text)) {
      ++ln;
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("prompt_id") ||
          !j.contains("gains") || !j["gains"].is_array() || !j.contains("total") ||
          !j.contains("strategy_totals") || !j["strategy_totals"].is_object())
        issues.push_back("line " + std::to_string(ln) +
                         ": needs prompt_id, gains[], total, strategy_totals{}");
    }
  } else if (kind == "metrics") {
    issues = validate_csv(text, metrics_csv_header(), 8);
  } else if (kind == "study") {
    issues = validate_csv(text, "metric_or_strategy,spearman,auc,p_value,n_states,seed", 6);
  } else if (kind == "fixture") {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("steps") || !j["steps"].is_array() ||
        !j.contains("answer") || !j.contains("format_valid") || !j["format_valid"].is_boolean())
      issues.push_back("fixture needs steps[], answer, format_valid");
  } else {
    issues.push_back("unknown schema kind '" + kind + "'");
  }
  return issues;
}

}  // namespace mig
