#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stepmig/scoring.hpp"

namespace mig {

// Per-step rectified gains above the running-maximum watermark.
// Invariants: watermarks nondecreasing, gains >= 0, and
// total == max(ell_0..ell_K) - ell_0 exactly (telescoping).
struct CreditVector {
  std::vector<double> watermarks;  // h_0..h_K
  std::vector<double> gains;       // g_1..g_K
  double total = 0.0;              // sum of gains
};

// h_0 = ell_0, h_k = max(h_{k-1}, ell_k), g_k = max(0, ell_k - h_{k-1}).
// Throws std::invalid_argument naming the offending index on non-finite input.
CreditVector hwm_credit(const LikelihoodTrace& trace);

enum class AggregationStrategy {
  FinalEll,
  DeltaSum,
  MeanEll,
  SumEll,
  PositionWeightedMean,
  ClippedDelta,
  HWM,
};

inline constexpr AggregationStrategy kAllStrategies[] = {
    AggregationStrategy::FinalEll,     AggregationStrategy::DeltaSum,
    AggregationStrategy::MeanEll,      AggregationStrategy::SumEll,
    AggregationStrategy::PositionWeightedMean,
    AggregationStrategy::ClippedDelta, AggregationStrategy::HWM};

std::string strategy_name(AggregationStrategy s);
bool strategy_from_name(const std::string& name, AggregationStrategy* out);

// Collapses a trace into one scalar reward R. Strategies that average over
// T reject K=0 with std::domain_error. clip_floor is ClippedDelta's lower
// cap on per-step regressions.
double aggregate(const LikelihoodTrace& trace, AggregationStrategy strategy,
                 double clip_floor = -0.1);

// Credit report record, one JSONL object per trajectory.
struct CreditReportRecord {
  int64_t prompt_id = 0;
  std::vector<double> gains;
  double total = 0.0;
  std::map<std::string, double> strategy_totals;
};

std::string credit_report_to_json(const CreditReportRecord& rec);

}  // namespace mig
