#include "cascadelab/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "cascadelab/error.hpp"
#include "cascadelab/predictor.hpp"

namespace cascadelab::metrics {

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw DimensionError(std::string(what) + ": sequences differ in length");
  if (a.empty()) throw DimensionError(std::string(what) + ": empty input");
}

}  // namespace

NEReport normalized_entropy(std::span<const double> targets, std::span<const double> predictions,
                            TargetKind kind) {
  check_lengths(targets, predictions, "normalized_entropy");
  double mean = 0.0;
  for (double y : targets) {
    if (!(y >= 0.0 && y <= 1.0)) throw ConfigError("normalized_entropy: targets must lie in [0, 1]");
    mean += y;
  }
  mean /= static_cast<double>(targets.size());
  if (!(mean > 0.0 && mean < 1.0)) {
    throw DegenerateError("normalized_entropy: base rate is 0 or 1, so the reference entropy vanishes");
  }
  double model_loss = 0.0;
  double base_loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    model_loss += model::bce_loss(targets[i], predictions[i]);
    base_loss += model::bce_loss(targets[i], mean);
  }
  NEReport report;
  report.ne = model_loss / base_loss;
  report.num_examples = targets.size();
  report.target_kind = kind;
  return report;
}

CalibrationReport calibration_ratio(std::span<const double> test, std::span<const double> reference,
                                    ReferenceKind kind) {
  check_lengths(test, reference, "calibration_ratio");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    num += test[i];
    den += reference[i];
  }
  CalibrationReport report;
  report.numerator_mean = num / static_cast<double>(test.size());
  report.denominator_mean = den / static_cast<double>(test.size());
  if (report.denominator_mean == 0.0) throw DegenerateError("calibration_ratio: reference mean is zero");
  report.ratio = report.numerator_mean / report.denominator_mean;
  report.reference_kind = kind;
  return report;
}

double relative_change(double candidate, double baseline) {
  if (baseline == 0.0) throw DegenerateError("relative_change: baseline is zero");
  return 100.0 * (candidate - baseline) / baseline;
}

NEReport compared_to(NEReport report, const NEReport& baseline, std::string baseline_name) {
  report.ne_relative_change = relative_change(report.ne, baseline.ne);
  report.baseline = std::move(baseline_name);
  return report;
}

std::string format_pct(double pct, int decimals) {
  char buf[64];
  // Avoid printing "-0.000%".
  const double scale = std::pow(10.0, decimals);
  if (std::round(pct * scale) == 0.0) pct = 0.0;
  std::snprintf(buf, sizeof buf, "%.*f%%", decimals, pct);
  return buf;
}

std::string to_string(TargetKind kind) {
  return kind == TargetKind::ground_truth ? "ground_truth" : "teacher_prediction";
}

std::string to_string(ReferenceKind kind) {
  return kind == ReferenceKind::ground_truth ? "ground_truth" : "reference_model";
}

nlohmann::json to_json(const NEReport& report) {
  nlohmann::json j{{"ne", report.ne},
                   {"ne_relative_change_pct", report.ne_relative_change},
                   {"n", report.num_examples},
                   {"target_kind", to_string(report.target_kind)}};
  if (!report.baseline.empty()) j["baseline"] = report.baseline;
  return j;
}

nlohmann::json to_json(const CalibrationReport& report) {
  return {{"calibration_ratio", report.ratio},
          {"numerator_mean", report.numerator_mean},
          {"denominator_mean", report.denominator_mean},
          {"reference_kind", to_string(report.reference_kind)}};
}

}  // namespace cascadelab::metrics
