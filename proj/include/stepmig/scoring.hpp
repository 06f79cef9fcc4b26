#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stepmig/schema.hpp"

namespace mig {

using TokenSeq = std::vector<int>;

// Capability contract: mean per-token log-probability of `continuation`
// given `context` under teacher forcing. Must be deterministic for fixed
// parameters and return a finite value <= 0. Implementations must be safe
// for concurrent read-only scoring against a fixed parameter snapshot.
class PolicyScorer {
 public:
  virtual ~PolicyScorer() = default;
  virtual double score(std::span<const int> context, std::span<const int> continuation) const = 0;
};

// Reference-answer variants; variants[0] is the canonical ground truth.
struct VariantSet {
  std::vector<TokenSeq> variants;

  void validate() const;  // throws std::invalid_argument on empty set / empty variant
};

struct LikelihoodTrace {
  double ell0 = 0.0;
  std::vector<double> ells;  // ell_1..ell_K

  int step_count() const { return static_cast<int>(ells.size()); }
};

// ell_k: best variant likelihood given prompt ++ steps[0..k). k = 0 scores
// the bare prompt.
double step_likelihood(const PolicyScorer& scorer, std::span<const int> prompt,
                       const std::vector<TokenSeq>& steps, int k, const VariantSet& variants);

LikelihoodTrace full_trace(const PolicyScorer& scorer, std::span<const int> prompt,
                           const std::vector<TokenSeq>& steps, const VariantSet& variants);

// Step token sequences (header included, delimiters excluded) for scoring
// contexts, materialized from parse spans over the completion tokens.
std::vector<TokenSeq> steps_from_parsed(const ParsedTrajectory& parsed,
                                        std::span<const int> completion_tokens);

// Trace export record, one JSONL object per trajectory.
struct TraceRecord {
  int64_t prompt_id = 0;
  double ell0 = 0.0;
  std::vector<double> ells;
  std::string answer;
  int variants_used = 1;
};

std::string trace_record_to_json(const TraceRecord& rec);
// Returns false (and fills `error`) when the line is not a valid record.
bool trace_record_from_json(const std::string& line, TraceRecord* rec, std::string* error);

}  // namespace mig
