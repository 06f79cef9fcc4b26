#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stepmig/evaluate.hpp"
#include "stepmig/optimize.hpp"
#include "stepmig/policy_env.hpp"

namespace mig {

// Process exit codes shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> issues)
      : std::runtime_error(join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues);
  std::vector<std::string> issues_;
};

struct CliConfig {
  TrainerConfig trainer;
  EnvConfig env;
  uint64_t task_seed = 7;
  int num_tasks = 32;
  std::vector<int> checkpoint_iters = {100, 500, 1000, 2000};
  StudyConfig study;
};

CliConfig config_from_json(const std::string& json_text);  // throws ConfigError
std::string config_to_json(const CliConfig& cfg);          // canonical round-trip form

struct SeedOutcome {
  uint64_t seed = 0;
  double final_accuracy = 0.0;  // mean rollout accuracy over the last 100 iterations
  int steps_to_80 = -1;         // first iteration whose trailing-20 mean crosses; -1 = never
  int steps_to_90 = -1;
  std::vector<double> accuracy_curve;
  std::vector<double> r_mig_curve;
};

// First iteration (1-based) whose trailing `window` mean reaches `threshold`.
int steps_to_threshold(const std::vector<double>& accuracy, double threshold, int window = 20);

struct TrainRunResult {
  std::string run_dir;
  std::vector<SeedOutcome> seeds;
};

TrainRunResult run_train(const CliConfig& cfg, const std::vector<uint64_t>& seeds,
                         const std::string& out_root, bool parallel_seeds, std::ostream& log);

struct AuditSummary {
  int n_lines = 0;
  int n_ok = 0;
  int n_skipped = 0;
};

AuditSummary run_audit(const std::string& trace_path,
                       const std::vector<AggregationStrategy>& strategies,
                       const std::string& report_path, const std::string& summary_path,
                       std::ostream& log);

StudyResult run_study(const std::string& kind, const CliConfig& cfg,
                      const std::string& checkpoint_path, const std::string& out_csv,
                      std::ostream& log);

void run_gen_tasks(const CliConfig& cfg, int count, const std::string& out_path);

// Returns a list of problems; empty means the file validates.
std::vector<std::string> validate_schema_file(const std::string& kind, const std::string& path);

int cli_main(int argc, const char* const* argv);

}  // namespace mig
