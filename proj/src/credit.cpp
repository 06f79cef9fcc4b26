#include "stepmig/credit.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace mig {

CreditVector hwm_credit(const LikelihoodTrace& trace) {
  if (!std::isfinite(trace.ell0))
    throw std::invalid_argument("non-finite likelihood at index 0 (ell0)");
  for (size_t i = 0; i < trace.ells.size(); ++i)
    if (!std::isfinite(trace.ells[i]))
      throw std::invalid_argument("non-finite likelihood at index " + std::to_string(i + 1));

  CreditVector cv;
  cv.watermarks.reserve(trace.ells.size() + 1);
  cv.gains.reserve(trace.ells.size());
  double h = trace.ell0;
  cv.watermarks.push_back(h);
  for (double ell : trace.ells) {
    cv.gains.push_back(std::max(0.0, ell - h));
    h = std::max(h, ell);
    cv.watermarks.push_back(h);
  }
  // h_K - h_0; equals the gain sum exactly because each positive gain is the
  // literal watermark increment.
  cv.total = cv.watermarks.back() - cv.watermarks.front();
  return cv;
}

std::string strategy_name(AggregationStrategy s) {
  switch (s) {
    case AggregationStrategy::FinalEll: return "final_ell";
    case AggregationStrategy::DeltaSum: return "delta_sum";
    case AggregationStrategy::MeanEll: return "mean_ell";
    case AggregationStrategy::SumEll: return "sum_ell";
    case AggregationStrategy::PositionWeightedMean: return "pwm";
    case AggregationStrategy::ClippedDelta: return "clipped_delta";
    case AggregationStrategy::HWM: return "hwm";
  }
  return "unknown";
}

bool strategy_from_name(const std::string& name, AggregationStrategy* out) {
  for (auto s : kAllStrategies) {
    if (strategy_name(s) == name) {
      *out = s;
      return true;
    }
  }
  return false;
}

double aggregate(const LikelihoodTrace& trace, AggregationStrategy strategy, double clip_floor) {
  const auto& ells = trace.ells;
  const int T = static_cast<int>(ells.size());
  switch (strategy) {
    case AggregationStrategy::FinalEll:
      return T == 0 ? trace.ell0 : ells.back();
    case AggregationStrategy::DeltaSum:
      return (T == 0 ? trace.ell0 : ells.back()) - trace.ell0;
    case AggregationStrategy::MeanEll: {
      if (T == 0) throw std::domain_error("mean_ell undefined for a trace with no steps");
      double s = 0.0;
      for (double e : ells) s += e;
      return s / T;
    }
    case AggregationStrategy::SumEll: {
      double s = 0.0;
      for (double e : ells) s += e;
      return s;
    }
    case AggregationStrategy::PositionWeightedMean: {
      if (T == 0) throw std::domain_error("pwm undefined for a trace with no steps");
      double s = 0.0;
      for (int k = 1; k <= T; ++k) s += ells[k - 1] * (static_cast<double>(k) / T);
      return s / T;
    }
    case AggregationStrategy::ClippedDelta: {
      double s = 0.0;
      double prev = trace.ell0;
      for (double e : ells) {
        s += std::max(clip_floor, e - prev);
        prev = e;
      }
      return s;
    }
    case AggregationStrategy::HWM:
      return hwm_credit(trace).total;
  }
  throw std::logic_error("unreachable aggregation strategy");
}

std::string credit_report_to_json(const CreditReportRecord& rec) {
  nlohmann::json j;
  j["prompt_id"] = rec.prompt_id;
  j["gains"] = rec.gains;
  j["total"] = rec.total;
  j["strategy_totals"] = rec.strategy_totals;
  return j.dump();
}

}  // namespace mig
