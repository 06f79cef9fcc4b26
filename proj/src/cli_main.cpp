#include <CLI11.hpp>
#include <iostream>

#include "stepmig/cli.hpp"
#include "stepmig/io.hpp"

namespace mig {

namespace {

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  std::string cur;
  for (char c : text + ",") {
    if (c == ',') {
      if (!cur.empty()) seeds.push_back(std::stoull(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return seeds;
}

CliConfig load_config(const std::string& path) { return config_from_json(read_text_file(path)); }

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"stepmig: step-wise information-gain credit assignment on a synthetic reasoning environment"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run the training loop for one mode over seeds");
  std::string train_config, train_mode, train_seeds, train_out = "out", train_ref;
  int train_iters = -1, train_g = -1, train_num_tasks = -1;
  double train_eta = -1.0;
  uint64_t train_task_seed = 0;
  bool parallel_seeds = false;
  train->add_option("--config", train_config, "config JSON path")->required();
  train->add_option("--mode", train_mode, "mig-full | mig-no-sft | grpo-baseline");
  train->add_option("--seeds", train_seeds, "comma-separated seed list (default: config seed)");
  train->add_option("--iterations", train_iters, "override iterations");
  train->add_option("--g", train_g, "override group size G");
  train->add_option("--eta", train_eta, "override learning rate");
  train->add_option("--ref-policy", train_ref, "snapshot | frozen");
  train->add_option("--task-seed", train_task_seed, "override task-set seed");
  train->add_option("--num-tasks", train_num_tasks, "override task-set size");
  train->add_option("--out", train_out, "output root directory");
  train->add_flag("--parallel-seeds", parallel_seeds, "run seeds on separate threads");

  // audit
  auto* audit = app.add_subcommand("audit", "offline credit audit of a likelihood-trace JSONL");
  std::string audit_traces, audit_report = "credit_report.jsonl", audit_summary = "credit_summary.csv";
  std::string audit_strategies;
  audit->add_option("--traces", audit_traces, "trace JSONL path")->required();
  audit->add_option("--out-report", audit_report, "report JSONL output");
  audit->add_option("--out-summary", audit_summary, "summary CSV output");
  audit->add_option("--strategies", audit_strategies, "comma-separated strategy names (default: all)");

  // study
  auto* study = app.add_subcommand("study", "proxy or aggregation validation study");
  std::string study_kind, study_config, study_checkpoint, study_out = "study.csv";
  uint64_t study_seed = 0;
  bool study_seed_set = false;
  study->add_option("--kind", study_kind, "proxy | aggregation")->required();
  study->add_option("--config", study_config, "config JSON path")->required();
  study->add_option("--checkpoint", study_checkpoint, "policy checkpoint JSON")->required();
  study->add_option("--out", study_out, "study CSV output");
  study->add_option("--seed", study_seed, "override study seed")->each([&](const std::string&) {
    study_seed_set = true;
  });

  // gen-tasks
  auto* gen = app.add_subcommand("gen-tasks", "emit a replayable task-set JSONL");
  std::string gen_config, gen_out;
  int gen_count = -1;
  uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  gen->add_option("--config", gen_config, "config JSON path")->required();
  gen->add_option("--out", gen_out, "output JSONL path")->required();
  gen->add_option("--count", gen_count, "number of tasks (default: config num_tasks)");
  gen->add_option("--task-seed", gen_seed, "override task-set seed")->each([&](const std::string&) {
    gen_seed_set = true;
  });

  // validate-schemas
  auto* validate = app.add_subcommand("validate-schemas", "check a file against its documented schema");
  std::string val_kind, val_file;
  validate->add_option("--kind", val_kind,
                       "config | tasks | traces | credit-report | metrics | study | fixture")
      ->required();
  validate->add_option("--file", val_file, "file to validate")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) {
      CliConfig cfg = load_config(train_config);
      if (!train_mode.empty() && !mode_from_name(train_mode, &cfg.trainer.mode))
        throw ConfigError({"--mode: unknown mode '" + train_mode + "'"});
      if (train_iters > 0) cfg.trainer.iterations = train_iters;
      if (train_g > 0) cfg.trainer.group_size = train_g;
      if (train_eta >= 0.0) cfg.trainer.weights.eta = train_eta;
      if (!train_ref.empty()) {
        if (train_ref == "snapshot") cfg.trainer.weights.ref_policy = WeightsConfig::RefPolicy::Snapshot;
        else if (train_ref == "frozen") cfg.trainer.weights.ref_policy = WeightsConfig::RefPolicy::Frozen;
        else throw ConfigError({"--ref-policy: expected snapshot | frozen"});
      }
      if (train->count("--task-seed")) cfg.task_seed = train_task_seed;
      if (train_num_tasks > 0) cfg.num_tasks = train_num_tasks;
      std::vector<uint64_t> seeds =
          train_seeds.empty() ? std::vector<uint64_t>{cfg.trainer.seed} : parse_seed_list(train_seeds);
      if (seeds.empty()) throw ConfigError({"--seeds: empty seed list"});
      run_train(cfg, seeds, train_out, parallel_seeds, std::cout);
    } else if (*audit) {
      std::vector<AggregationStrategy> strategies;
      if (audit_strategies.empty()) {
        strategies.assign(std::begin(kAllStrategies), std::end(kAllStrategies));
      } else {
        std::string cur;
        for (char c : audit_strategies + ",") {
          if (c == ',') {
            if (!cur.empty()) {
              AggregationStrategy s;
              if (!strategy_from_name(cur, &s))
                throw ConfigError({"--strategies: unknown strategy '" + cur + "'"});
              strategies.push_back(s);
              cur.clear();
            }
          } else {
            cur += c;
          }
        }
      }
      AuditSummary s = run_audit(audit_traces, strategies, audit_report, audit_summary, std::cout);
      std::cout << "audit: " << s.n_ok << " ok, " << s.n_skipped << " skipped\n";
    } else if (*study) {
      CliConfig cfg = load_config(study_config);
      if (study_seed_set) cfg.study.seed = study_seed;
      run_study(study_kind, cfg, study_checkpoint, study_out, std::cout);
    } else if (*gen) {
      CliConfig cfg = load_config(gen_config);
      if (gen_seed_set) cfg.task_seed = gen_seed;
      run_gen_tasks(cfg, gen_count > 0 ? gen_count : cfg.num_tasks, gen_out);
    } else if (*validate) {
      auto issues = validate_schema_file(val_kind, val_file);
      if (!issues.empty()) {
        for (const auto& i : issues) std::cerr << i << "\n";
        return kExitConfig;
      }
      std::cout << "ok\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericDivergenceError& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n" << e.dump();
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

}  // namespace mig
