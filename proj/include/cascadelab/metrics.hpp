#pragma once

// Normalized entropy, calibration ratio and relative change.

#include <cstddef>
#include <span>
#include <string>

#include "json.hpp"

namespace cascadelab::metrics {

enum class TargetKind { ground_truth, teacher_prediction };
enum class ReferenceKind { ground_truth, reference_model };

struct NEReport {
  double ne = 0.0;
  // Percent change against `baseline`; 0 when no baseline is attached.
  double ne_relative_change = 0.0;
  std::string baseline;
  std::size_t num_examples = 0;
  TargetKind target_kind = TargetKind::ground_truth;
};

struct CalibrationReport {
  double ratio = 0.0;
  double numerator_mean = 0.0;
  double denominator_mean = 0.0;
  ReferenceKind reference_kind = ReferenceKind::reference_model;
};

/// sum BCE(y_i, p_i) / sum BCE(y_i, mean y). Targets may be soft; predictions
/// are clipped to [1e-7, 1 - 1e-7]. Throws DimensionError on length mismatch
/// or empty input and DegenerateError when mean y is 0 or 1.
NEReport normalized_entropy(std::span<const double> targets, std::span<const double> predictions,
                            TargetKind kind = TargetKind::ground_truth);

/// mean(test) / mean(reference). Throws DegenerateError on a zero reference mean.
CalibrationReport calibration_ratio(std::span<const double> test, std::span<const double> reference,
                                    ReferenceKind kind = ReferenceKind::reference_model);

/// 100 (candidate - baseline) / baseline. Throws DegenerateError when baseline is 0.
double relative_change(double candidate, double baseline);

/// Copy of `report` with its relative change against `baseline` filled in.
NEReport compared_to(NEReport report, const NEReport& baseline, std::string baseline_name);

/// Signed percentage with `decimals` places, e.g. "-1.980%" or "0.000%".
std::string format_pct(double pct, int decimals = 3);

std::string to_string(TargetKind kind);
std::string to_string(ReferenceKind kind);

nlohmann::json to_json(const NEReport& report);
nlohmann::json to_json(const CalibrationReport& report);

}  // namespace cascadelab::metrics
