#include "cascadelab/cascade_sim.hpp"

#include <algorithm>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "cascadelab/error.hpp"
#include "cascadelab/parallel.hpp"
#include "cascadelab/random.hpp"
#include "cascadelab/selection.hpp"

namespace cascadelab::sim {

namespace {

// Accumulation happens in fixed-size chunks of trials that are reduced in chunk
// order, so results do not depend on the thread count.
constexpr std::size_t kChunk = 1024;

std::size_t chunk_count(std::size_t trials) { return (trials + kChunk - 1) / kChunk; }

struct Moments {
  std::vector<double> sum;
  std::vector<double> sum_sq;

  explicit Moments(std::size_t size = 0) : sum(size, 0.0), sum_sq(size, 0.0) {}

  void add(std::size_t i, double x) {
    sum[i] += x;
    sum_sq[i] += x * x;
  }
  void merge(const Moments& other) {
    for (std::size_t i = 0; i < sum.size(); ++i) {
      sum[i] += other.sum[i];
      sum_sq[i] += other.sum_sq[i];
    }
  }
  double mean(std::size_t i, std::size_t n) const { return sum[i] / static_cast<double>(n); }
  double stderr_of_mean(std::size_t i, std::size_t n) const {
    if (n < 2) return 0.0;
    const double nd = static_cast<double>(n);
    const double var = std::max(0.0, (sum_sq[i] - sum[i] * sum[i] / nd) / (nd - 1.0));
    return std::sqrt(var / nd);
  }
};

void draw_normals(SplitMix64& rng, std::span<double> out) {
  boost::random::normal_distribution<double> normal;
  for (double& x : out) x = normal(rng);
}

// Descending sort of roughly standard normal values: counting pass over linear
// buckets on [-4.5, 4.5] (out-of-range values land in the end buckets), then an
// insertion pass that only moves values within a bucket.
class NormalSorter {
 public:
  explicit NormalSorter(std::size_t n) : bucket_(n), count_(n + 1), scratch_(n) {}

  void sort_descending(std::span<double> values) {
    const std::size_t n = values.size();
    const double lo = -4.5;
    const double scale = static_cast<double>(n) / 9.0;
    const double top = static_cast<double>(n - 1);
    std::fill(count_.begin(), count_.end(), 0u);
    for (std::size_t j = 0; j < n; ++j) {
      const double f = std::clamp((values[j] - lo) * scale, 0.0, top);
      const auto b = static_cast<std::uint32_t>(n - 1 - static_cast<std::size_t>(f));
      bucket_[j] = b;
      ++count_[b + 1];
    }
    for (std::size_t b = 0; b < n; ++b) count_[b + 1] += count_[b];
    for (std::size_t j = 0; j < n; ++j) scratch_[count_[bucket_[j]]++] = values[j];
    for (std::size_t j = 1; j < n; ++j) {
      const double v = scratch_[j];
      std::size_t m = j;
      while (m > 0 && scratch_[m - 1] < v) {
        scratch_[m] = scratch_[m - 1];
        --m;
      }
      scratch_[m] = v;
    }
    std::copy(scratch_.begin(), scratch_.end(), values.begin());
  }

 private:
  std::vector<std::uint32_t> bucket_;
  std::vector<std::uint32_t> count_;
  std::vector<double> scratch_;
};

std::string annotate(std::string_view name, double value, const char* what) {
  return "sweep " + std::string(name) + " = " + format_sig6(value) + ": " + what;
}

}  // namespace

OneStageReport simulate_one_stage(const order_stats::GaussianRankingSpec& spec, std::size_t k,
                                  std::size_t trials, std::uint64_t seed, std::size_t threads) {
  spec.validate();
  if (k < 1 || k > spec.n) throw ConfigError("simulate_one_stage: k must lie in 1..n");
  if (trials < 1) throw ConfigError("simulate_one_stage: trials must be >= 1");

  const std::size_t n = spec.n;
  const std::size_t chunks = chunk_count(trials);
  // Slots 0..k-1 predicted by rank, k..2k-1 truth by rank, 2k and 2k+1 totals.
  std::vector<Moments> partial(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Moments acc(2 * k + 2);
    std::vector<double> truth(n);
    std::vector<double> error(n);
    std::vector<double> pred(n);
    const std::size_t end = std::min(trials, (c + 1) * kChunk);
    for (std::size_t t = c * kChunk; t < end; ++t) {
      SplitMix64 rng(derive_seed(seed, t));
      draw_normals(rng, truth);
      draw_normals(rng, error);
      for (std::size_t i = 0; i < n; ++i) {
        truth[i] = spec.mu + spec.sigma * truth[i];
        pred[i] = truth[i] + spec.sigma_model * error[i];
      }
      const auto selected = top_k(pred, k);
      double total_pred = 0.0;
      double total_true = 0.0;
      for (std::size_t r = 0; r < k; ++r) {
        // Shifted by mu to keep the second moments well conditioned.
        const double p = pred[selected[r]] - spec.mu;
        const double y = truth[selected[r]] - spec.mu;
        acc.add(r, p);
        acc.add(k + r, y);
        total_pred += p;
        total_true += y;
      }
      acc.add(2 * k, total_pred);
      acc.add(2 * k + 1, total_true);
    }
    partial[c] = std::move(acc);
  });
  Moments all(2 * k + 2);
  for (const auto& p : partial) all.merge(p);

  OneStageReport report;
  report.k = k;
  report.trials = trials;
  for (std::size_t r = 0; r < k; ++r) {
    report.mean_pred.push_back(spec.mu + all.mean(r, trials));
    report.mean_true.push_back(spec.mu + all.mean(k + r, trials));
    report.stderr_pred.push_back(all.stderr_of_mean(r, trials));
    report.stderr_true.push_back(all.stderr_of_mean(k + r, trials));
  }
  const double shift = spec.mu * static_cast<double>(k);
  report.total_pred = shift + all.mean(2 * k, trials);
  report.total_true = shift + all.mean(2 * k + 1, trials);
  report.total_pred_stderr = all.stderr_of_mean(2 * k, trials);
  report.total_true_stderr = all.stderr_of_mean(2 * k + 1, trials);
  return report;
}

RankMoments standard_normal_order_stats(std::size_t n, std::size_t trials, std::uint64_t seed,
                                        std::size_t threads) {
  if (n < 1) throw ConfigError("standard_normal_order_stats: n must be >= 1");
  if (trials < 1) throw ConfigError("standard_normal_order_stats: trials must be >= 1");
  const std::size_t chunks = chunk_count(trials);
  std::vector<Moments> partial(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Moments acc(n);
    std::vector<double> values(n);
    NormalSorter sorter(n);
    const std::size_t end = std::min(trials, (c + 1) * kChunk);
    for (std::size_t t = c * kChunk; t < end; ++t) {
      SplitMix64 rng(derive_seed(seed, t));
      draw_normals(rng, values);
      sorter.sort_descending(values);
      for (std::size_t r = 0; r < n; ++r) acc.add(r, values[r]);
    }
    partial[c] = std::move(acc);
  });
  Moments all(n);
  for (const auto& p : partial) all.merge(p);
  RankMoments out;
  out.trials = trials;
  for (std::size_t r = 0; r < n; ++r) {
    out.mean.push_back(all.mean(r, trials));
    out.stderr.push_back(all.stderr_of_mean(r, trials));
  }
  return out;
}

void TwoStageSpec::validate() const {
  if (n < 1) throw ConfigError("TwoStageSpec: n must be >= 1");
  if (k1 < 1 || k1 > n) throw ConfigError("TwoStageSpec: k1 must lie in 1..n");
  if (k2 < 1 || k2 > k1) throw ConfigError("TwoStageSpec: k2 must lie in 1..k1");
  if (trials < 1) throw ConfigError("TwoStageSpec: trials must be >= 1");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("TwoStageSpec: sigma must be >= 0");
  if (!(sigma1 >= 0.0) || !std::isfinite(sigma1)) throw ConfigError("TwoStageSpec: sigma1 must be >= 0");
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw ConfigError("TwoStageSpec: sigma2 must be >= 0");
  if (!std::isfinite(mu)) throw ConfigError("TwoStageSpec: mu must be finite");
}

TwoStageTrial sample_two_stage_trial(const TwoStageSpec& spec, std::uint64_t trial) {
  const std::size_t n = spec.n;
  TwoStageTrial out;
  out.truth.resize(n);
  out.pred1.resize(n);
  out.pred2.resize(n);
  SplitMix64 rng(derive_seed(spec.seed, trial));
  // Truths, then stage-1 errors, then stage-2 errors: fixed draw order keeps
  // the random numbers common across sweep points.
  draw_normals(rng, out.truth);
  draw_normals(rng, out.pred1);
  draw_normals(rng, out.pred2);
  for (std::size_t i = 0; i < n; ++i) {
    out.truth[i] = spec.mu + spec.sigma * out.truth[i];
    out.pred1[i] = out.truth[i] + spec.sigma1 * out.pred1[i];
    out.pred2[i] = out.truth[i] + spec.sigma2 * out.pred2[i];
  }
  out.stage1 = top_k(out.pred1, spec.k1);
  std::vector<double> second(spec.k1);
  std::vector<std::uint64_t> keys(spec.k1);
  for (std::size_t r = 0; r < spec.k1; ++r) {
    second[r] = out.pred2[out.stage1[r]];
    keys[r] = out.stage1[r];
  }
  for (std::size_t pos : top_k(second, spec.k2, keys)) out.stage2.push_back(out.stage1[pos]);
  return out;
}

CalibrationEstimate simulate_two_stage(const TwoStageSpec& spec, std::size_t threads) {
  spec.validate();
  const std::size_t trials = spec.trials;
  std::vector<double> sum_true(trials);
  std::vector<double> sum_p1(trials);
  std::vector<double> sum_p2(trials);
  parallel_for(chunk_count(trials), threads, [&](std::size_t c) {
    const std::size_t end = std::min(trials, (c + 1) * kChunk);
    for (std::size_t t = c * kChunk; t < end; ++t) {
      const TwoStageTrial draw = sample_two_stage_trial(spec, t);
      double y = 0.0, p1 = 0.0, p2 = 0.0;
      for (std::size_t i : draw.stage1) {
        y += draw.truth[i];
        p1 += draw.pred1[i];
        p2 += draw.pred2[i];
      }
      sum_true[t] = y;
      sum_p1[t] = p1;
      sum_p2[t] = p2;
    }
  });

  double total_true = 0.0, total_p1 = 0.0, total_p2 = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    total_true += sum_true[t];
    total_p1 += sum_p1[t];
    total_p2 += sum_p2[t];
  }
  const double items = static_cast<double>(trials) * static_cast<double>(spec.k1);
  CalibrationEstimate est;
  est.mean_true_topk = total_true / items;
  est.mean_pred_stage1 = total_p1 / items;
  est.mean_pred_stage2 = total_p2 / items;
  if (std::fabs(est.mean_true_topk) < 1e-12) {
    throw DegenerateError("simulate_two_stage: mean truth on S1 is zero; choose mu away from 0");
  }
  if (std::fabs(est.mean_pred_stage2) < 1e-12) {
    throw DegenerateError("simulate_two_stage: mean stage-2 prediction on S1 is zero; choose mu away from 0");
  }
  est.cal_1_2 = est.mean_pred_stage1 / est.mean_pred_stage2;
  est.cal_1_0 = est.mean_pred_stage1 / est.mean_true_topk;
  est.cal_2_0 = est.mean_pred_stage2 / est.mean_true_topk;

  // Trial-level bootstrap of the three ratios.
  SplitMix64 rng(derive_seed(spec.seed, "bootstrap"));
  boost::random::uniform_int_distribution<std::size_t> pick_trial(0, trials - 1);
  Moments boot(3);
  for (std::size_t b = 0; b < kBootstrapResamples; ++b) {
    double y = 0.0, p1 = 0.0, p2 = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t pick = pick_trial(rng);
      y += sum_true[pick];
      p1 += sum_p1[pick];
      p2 += sum_p2[pick];
    }
    boot.add(0, p1 / p2);
    boot.add(1, p1 / y);
    boot.add(2, p2 / y);
  }
  // stderr_of_mean divides by sqrt(resamples); the bootstrap SE is the
  // standard deviation itself.
  const double root = std::sqrt(static_cast<double>(kBootstrapResamples));
  est.stderr_1_2 = boot.stderr_of_mean(0, kBootstrapResamples) * root;
  est.stderr_1_0 = boot.stderr_of_mean(1, kBootstrapResamples) * root;
  est.stderr_2_0 = boot.stderr_of_mean(2, kBootstrapResamples) * root;
  return est;
}

CalibrationCurve sweep_two_stage(const TwoStageSpec& base, std::string_view sweep_name,
                                 std::span<const double> sweep_values, std::size_t threads) {
  if (sweep_name != "k1" && sweep_name != "sigma1" && sweep_name != "sigma2") {
    throw ConfigError("sweep_two_stage: unknown sweep parameter '" + std::string(sweep_name) +
                      "' (expected k1, sigma1 or sigma2)");
  }
  if (sweep_values.empty()) throw ConfigError("sweep_two_stage: no sweep values");
  for (std::size_t i = 1; i < sweep_values.size(); ++i) {
    if (!(sweep_values[i] > sweep_values[i - 1])) {
      throw ConfigError("sweep_two_stage: sweep values must be strictly increasing");
    }
  }
  CalibrationCurve curve;
  curve.sweep_name = std::string(sweep_name);
  for (double value : sweep_values) {
    TwoStageSpec spec = base;
    if (sweep_name == "k1") {
      if (value < 1.0 || value != std::floor(value)) {
        throw ConfigError(annotate(sweep_name, value, "k1 must be a positive integer"));
      }
      spec.k1 = static_cast<std::size_t>(value);
    } else if (sweep_name == "sigma1") {
      spec.sigma1 = value;
    } else {
      spec.sigma2 = value;
    }
    try {
      curve.estimates.push_back(simulate_two_stage(spec, threads));
    } catch (const ConfigError& e) {
      throw ConfigError(annotate(sweep_name, value, e.what()));
    } catch (const DegenerateError& e) {
      throw DegenerateError(annotate(sweep_name, value, e.what()));
    }
    curve.sweep_values.push_back(value);
  }
  return curve;
}

std::string format_sig6(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

void write_curve_csv(std::ostream& out, const CalibrationCurve& curve) {
  out << "sweep_value,cal_1_2,cal_1_0,cal_2_0,stderr_1_2,stderr_1_0,stderr_2_0\n";
  for (std::size_t i = 0; i < curve.sweep_values.size(); ++i) {
    const auto& e = curve.estimates[i];
    out << format_sig6(curve.sweep_values[i]) << ',' << format_sig6(e.cal_1_2) << ',' << format_sig6(e.cal_1_0)
        << ',' << format_sig6(e.cal_2_0) << ',' << format_sig6(e.stderr_1_2) << ',' << format_sig6(e.stderr_1_0)
        << ',' << format_sig6(e.stderr_2_0) << '\n';
  }
}

}  // namespace cascadelab::sim
