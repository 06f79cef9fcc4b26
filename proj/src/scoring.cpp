#include "stepmig/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace mig {

void VariantSet::validate() const {
  if (variants.empty())
    throw std::invalid_argument("variant set is empty; at least one reference answer required");
  for (size_t i = 0; i < variants.size(); ++i)
    if (variants[i].empty())
      throw std::invalid_argument("variant " + std::to_string(i) +
                                  " is empty; length-normalization needs |y| >= 1");
}

double step_likelihood(const PolicyScorer& scorer, std::span<const int> prompt,
                       const std::vector<TokenSeq>& steps, int k, const VariantSet& variants) {
  variants.validate();
  if (k < 0 || k > static_cast<int>(steps.size()))
    throw std::invalid_argument("step index out of range: " + std::to_string(k));

  TokenSeq context(prompt.begin(), prompt.end());
  for (int i = 0; i < k; ++i) context.insert(context.end(), steps[i].begin(), steps[i].end());

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& y : variants.variants)
    best = std::max(best, scorer.score(context, y));
  return best;
}

LikelihoodTrace full_trace(const PolicyScorer& scorer, std::span<const int> prompt,
                           const std::vector<TokenSeq>& steps, const VariantSet& variants) {
  LikelihoodTrace trace;
  trace.ell0 = step_likelihood(scorer, prompt, steps, 0, variants);
  trace.ells.reserve(steps.size());
  for (int k = 1; k <= static_cast<int>(steps.size()); ++k)
    trace.ells.push_back(step_likelihood(scorer, prompt, steps, k, variants));
  return trace;
}

std::vector<TokenSeq> steps_from_parsed(const ParsedTrajectory& parsed,
                                        std::span<const int> completion_tokens) {
  std::vector<TokenSeq> out;
  out.reserve(parsed.steps.size());
  for (const auto& step : parsed.steps) {
    int b = std::clamp(step.span.begin, 0, static_cast<int>(completion_tokens.size()));
    int e = std::clamp(step.span.end, b, static_cast<int>(completion_tokens.size()));
    out.emplace_back(completion_tokens.begin() + b, completion_tokens.begin() + e);
  }
  return out;
}

std::string trace_record_to_json(const TraceRecord& rec) {
  nlohmann::json j;
  j["prompt_id"] = rec.prompt_id;
  j["ell0"] = rec.ell0;
  j["ells"] = rec.ells;
  j["answer"] = rec.answer;
  j["variants_used"] = rec.variants_used;
  return j.dump();
}

bool trace_record_from_json(const std::string& line, TraceRecord* rec, std::string* error) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) {
    if (error) *error = "not valid JSON";
    return false;
  }
  if (!j.is_object() || !j.contains("ell0") || !j.contains("ells") ||
      !j["ell0"].is_number() || !j["ells"].is_array()) {
    if (error) *error = "missing or mistyped ell0/ells";
    return false;
  }
  TraceRecord out;
  out.prompt_id = j.value("prompt_id", int64_t{0});
  out.ell0 = j["ell0"].get<double>();
  for (const auto& e : j["ells"]) {
    if (!e.is_number()) {
      if (error) *error = "non-numeric entry in ells";
      return false;
    }
    out.ells.push_back(e.get<double>());
  }
  if (!std::isfinite(out.ell0) ||
      !std::all_of(out.ells.begin(), out.ells.end(), [](double v) { return std::isfinite(v); })) {
    if (error) *error = "non-finite likelihood";
    return false;
  }
  out.answer = j.value("answer", std::string{});
  out.variants_used = j.value("variants_used", 1);
  *rec = std::move(out);
  return true;
}

}  // namespace mig
