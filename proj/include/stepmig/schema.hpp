#pragma once

#include <optional>
#include <string>
#include <vector>

namespace mig {

// Half-open range of whitespace-delimited token indices into a completion.
struct TokenSpan {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool operator==(const TokenSpan&) const = default;
};

struct RawCompletion {
  std::string text;
};

struct ParsedStep {
  int number = 0;        // the literal N in "### Step N"
  std::string text;      // trimmed span following the header
  TokenSpan span;        // header + text, in completion token indices
};

// A completion segmented into ordered reasoning steps plus the extracted
// answer. Parsing never fails: malformed input yields format_valid=false
// with best-effort steps so downstream diagnostics can still run.
//
// format_valid means all of:
//   - exactly one <think>...</think> region,
//   - exactly one <answer>...</answer> region after it,
//   - nothing but whitespace outside the two regions,
//   - every "### Step N" header sits at the start of its line,
//   - header numbers run 1..K consecutively.
struct ParsedTrajectory {
  std::vector<ParsedStep> steps;
  std::optional<std::string> answer;   // surrounding whitespace stripped
  TokenSpan cot_span;                  // think-region content (headers included, tags excluded)
  TokenSpan full_span;                 // reasoning plus answer, delimiters included
  bool format_valid = false;
  int token_count = 0;                 // whitespace tokens in the whole completion

  int step_count() const { return static_cast<int>(steps.size()); }
};

ParsedTrajectory parse_completion(const RawCompletion& raw);

// 1 iff format_valid; doubles as the structural gate.
double format_reward(const ParsedTrajectory& traj);

// Re-serialize through the canonical template (parse ∘ render is identity on
// steps/answer for format_valid input).
std::string canonical_render(const ParsedTrajectory& traj);

std::vector<std::string> tokenize_words(const std::string& text);

// Golden-fixture record {steps, answer, format_valid} as a JSON string.
std::string fixture_record_json(const ParsedTrajectory& traj);
bool fixture_record_matches(const ParsedTrajectory& traj, const std::string& record_json,
                            std::string* why = nullptr);

}  // namespace mig
