#pragma once

// Analytic failure evaluation: a failed neuron is a neuron whose activation
// is forced to zero. Degradation sweeps, threshold estimation and the
// dropout-vs-plain comparison are all built on evaluate().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ftmlp/data.hpp"
#include "ftmlp/error.hpp"
#include "ftmlp/nn.hpp"
#include "ftmlp/rng.hpp"
#include "ftmlp/trainer.hpp"

namespace ftmlp::fault {

using nn::FailureMask;
using nn::NetworkSpec;
using nn::NeuronId;
using nn::Parameters;

// Network output for every row (single-output networks).
template <class T>
std::vector<T> predict(const NetworkSpec& spec, const Parameters<T>& params, const data::Dataset& d,
                       const FailureMask& mask = {}) {
  if (d.dim != spec.inputs()) throw ContractError("dataset width does not match network inputs");
  if (!params.matches(spec)) throw ContractError("parameters do not match network spec");
  mask.validate(spec, true);
  std::vector<T> out(d.rows());
  std::vector<T> x(d.dim);
  nn::ActivationRecord<T> rec;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const auto row = d.row(r);
    for (std::size_t c = 0; c < d.dim; ++c) x[c] = static_cast<T>(row[c]);
    nn::forward_into<T>(spec, params, x, mask, nullptr, rec);
    out[r] = rec.activations.back()[0];
  }
  return out;
}

template <class T>
std::vector<double> squared_errors(std::span<const T> predictions, std::span<const double> targets) {
  std::vector<double> e(predictions.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double d = targets[i] - static_cast<double>(predictions[i]);
    e[i] = d * d;
  }
  return e;
}

inline double mean(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

inline double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

template <class T>
std::vector<double> squared_errors(const NetworkSpec& spec, const Parameters<T>& params, const data::Dataset& d,
                                   const FailureMask& mask = {}) {
  const auto p = predict(spec, params, d, mask);
  return squared_errors<T>(p, d.y);
}

// MSE over the dataset with the failure mask applied.
template <class T>
double evaluate(const NetworkSpec& spec, const Parameters<T>& params, const data::Dataset& d,
                const FailureMask& mask = {}) {
  const auto e = squared_errors(spec, params, d, mask);
  return mean(e);
}

inline constexpr std::size_t kDefaultPermutations = 10000;

// Two-sided permutation test on the difference of means. The +1 correction
// keeps p in (0, 1]; identical pooled values give exactly 1.
inline double significance_test(std::span<const double> baseline, std::span<const double> failed, Rng& rng,
                                std::size_t permutations = kDefaultPermutations) {
  if (baseline.empty() || failed.empty()) throw ContractError("significance_test: empty sample");
  std::vector<double> pooled(baseline.begin(), baseline.end());
  pooled.insert(pooled.end(), failed.begin(), failed.end());
  if (std::all_of(pooled.begin(), pooled.end(), [&](double v) { return v == pooled.front(); })) return 1.0;

  const std::size_t n1 = baseline.size();
  const std::size_t n = pooled.size();
  double total = 0.0;
  for (double v : pooled) total += v;
  auto diff_for_first = [&](double first_sum) {
    const double m1 = first_sum / static_cast<double>(n1);
    const double m2 = (total - first_sum) / static_cast<double>(n - n1);
    return std::abs(m2 - m1);
  };
  double first_sum = 0.0;
  for (double v : baseline) first_sum += v;
  const double observed = diff_for_first(first_sum);
  const double slack = 1e-12 * std::max(1.0, observed);

  std::size_t extreme = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    // Partial Fisher-Yates: the first n1 slots become a uniform random subset.
    double s = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(pooled[i], pooled[j]);
      s += pooled[i];
    }
    if (diff_for_first(s) >= observed - slack) ++extreme;
  }
  return static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
}

struct DegradationRow {
  std::size_t k = 0;
  double mean_mse = 0.0;
  double degradation_pct = 0.0;
  double std_mse = 0.0;
  std::size_t trials = 0;
  double p_value = 1.0;
};

struct SweepOptions {
  std::size_t trials = 100;
  // When set, failures are drawn only from this hidden layer.
  std::optional<std::size_t> layer;
  std::size_t permutations = kDefaultPermutations;
};

// k distinct neurons drawn uniformly from the pool (partial Fisher-Yates).
inline std::vector<NeuronId> draw_failures(std::vector<NeuronId> pool, std::size_t k, Rng& rng) {
  if (k > pool.size()) throw ContractError("cannot fail " + std::to_string(k) + " of " + std::to_string(pool.size()));
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

inline std::vector<NeuronId> failure_pool(const NetworkSpec& spec, std::optional<std::size_t> layer) {
  if (!layer) return spec.hidden_neurons();
  if (*layer < 1 || *layer >= spec.depth()) throw ContractError("stratified layer must be hidden");
  std::vector<NeuronId> ids;
  for (std::size_t k = 0; k < spec.size(*layer); ++k) ids.push_back({*layer, k});
  return ids;
}

template <class T>
std::vector<DegradationRow> degradation_sweep(const NetworkSpec& spec, const Parameters<T>& params,
                                              const data::Dataset& testset, std::span<const std::size_t> k_values,
                                              Rng& rng, const SweepOptions& opt = {}) {
  if (opt.trials == 0) throw ContractError("trials must be >= 1");
  const auto pool = failure_pool(spec, opt.layer);
  for (auto k : k_values)
    if (k > pool.size())
      throw ContractError("k = " + std::to_string(k) + " exceeds the " + std::to_string(pool.size()) +
                          " hidden neurons available");

  const auto baseline_err = squared_errors(spec, params, testset);
  const double baseline = mean(baseline_err);

  std::vector<DegradationRow> rows;
  for (auto k : k_values) {
    DegradationRow row;
    row.k = k;
    row.trials = opt.trials;
    const std::uint64_t perm_seed = rng.next();
    if (k == 0) {
      row.mean_mse = baseline;
      rows.push_back(row);
      continue;
    }
    std::vector<double> trial_mse(opt.trials);
    std::vector<double> avg_err(testset.rows(), 0.0);
    for (std::size_t t = 0; t < opt.trials; ++t) {
      const FailureMask mask(spec, draw_failures(pool, k, rng));
      const auto err = squared_errors(spec, params, testset, mask);
      trial_mse[t] = mean(err);
      for (std::size_t i = 0; i < err.size(); ++i) avg_err[i] += err[i];
    }
    for (auto& e : avg_err) e /= static_cast<double>(opt.trials);
    row.mean_mse = mean(trial_mse);
    row.std_mse = sample_std(trial_mse);
    row.degradation_pct = baseline > 0.0 ? 100.0 * (row.mean_mse - baseline) / baseline : 0.0;
    Rng perm_rng(perm_seed);
    row.p_value = significance_test(baseline_err, avg_err, perm_rng, opt.permutations);
    rows.push_back(row);
  }
  return rows;
}

struct ThresholdEstimate {
  double p_c = 0.0;
  double k_cross = 0.0;
  bool censored = false;
  double factor = 2.0;

  std::string criterion() const { return "mean_mse <= " + data::format_double(factor) + " x baseline"; }
};

// Linear interpolation of the first k whose mean MSE exceeds factor x
// baseline, divided by hidden_total. Baseline is the k = 0 row.
inline ThresholdEstimate estimate_critical_threshold(std::span<const DegradationRow> rows, double factor,
                                                     std::size_t hidden_total) {
  if (rows.empty()) throw ContractError("estimate_critical_threshold: no rows");
  if (hidden_total == 0) throw ContractError("estimate_critical_threshold: hidden_total must be positive");
  if (rows.front().k != 0) throw ContractError("estimate_critical_threshold: first row must be k = 0");
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].k <= rows[i - 1].k) throw ContractError("estimate_critical_threshold: rows must be sorted by k");

  const double limit = factor * rows.front().mean_mse;
  ThresholdEstimate est;
  est.factor = factor;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].mean_mse > limit) {
      const auto& lo = rows[i - 1];
      const auto& hi = rows[i];
      const double frac = (limit - lo.mean_mse) / (hi.mean_mse - lo.mean_mse);
      est.k_cross = static_cast<double>(lo.k) + frac * static_cast<double>(hi.k - lo.k);
      est.p_c = est.k_cross / static_cast<double>(hidden_total);
      return est;
    }
  }
  est.censored = true;
  est.k_cross = static_cast<double>(rows.back().k);
  est.p_c = est.k_cross / static_cast<double>(hidden_total);
  return est;
}

struct SingleFailureImpact {
  NeuronId neuron;
  double mse = 0.0;
  double inflation = 0.0;  // mse / baseline - 1
  double max_abs_change = 0.0;
};

// Every hidden neuron failed on its own.
template <class T>
std::vector<SingleFailureImpact> single_failure_profile(const NetworkSpec& spec, const Parameters<T>& params,
                                                        const data::Dataset& testset) {
  const auto base_pred = predict(spec, params, testset);
  const double base = mean(squared_errors<T>(base_pred, testset.y));
  std::vector<SingleFailureImpact> out;
  for (const auto& id : spec.hidden_neurons()) {
    const auto pred = predict(spec, params, testset, FailureMask(spec, {id}));
    SingleFailureImpact s;
    s.neuron = id;
    s.mse = mean(squared_errors<T>(pred, testset.y));
    s.inflation = base > 0.0 ? s.mse / base - 1.0 : 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      s.max_abs_change = std::max(s.max_abs_change, std::abs(static_cast<double>(pred[i] - base_pred[i])));
    out.push_back(s);
  }
  return out;
}

struct ComparisonReport {
  double baseline_dropout = 0.0;
  double baseline_plain = 0.0;
  std::vector<DegradationRow> dropout_rows;
  std::vector<DegradationRow> plain_rows;
  ThresholdEstimate dropout_threshold;
  ThresholdEstimate plain_threshold;
  Parameters<double> dropout_params;
  Parameters<double> plain_params;
};

// Two trainings that differ only in dropout_enabled, then a sweep of each.
// Thresholds are estimated over every k in threshold_k (which must start at 0).
inline ComparisonReport compare_dropout_vs_plain(const data::Dataset& train_set, const data::Dataset& test_set,
                                                 const NetworkSpec& spec, const train::TrainConfig& cfg,
                                                 std::span<const std::size_t> k_values, std::size_t trials,
                                                 std::uint64_t sweep_seed, double factor = 2.0) {
  auto with = cfg;
  with.dropout_enabled = true;
  auto without = cfg;
  without.dropout_enabled = false;
  ComparisonReport rep;
  rep.dropout_params = train::train(train_set, spec, with).params;
  rep.plain_params = train::train(train_set, spec, without).params;

  SweepOptions opt;
  opt.trials = trials;
  Rng rng_a(sweep_seed);
  Rng rng_b(sweep_seed);
  rep.dropout_rows = degradation_sweep(spec, rep.dropout_params, test_set, k_values, rng_a, opt);
  rep.plain_rows = degradation_sweep(spec, rep.plain_params, test_set, k_values, rng_b, opt);
  rep.baseline_dropout = evaluate(spec, rep.dropout_params, test_set);
  rep.baseline_plain = evaluate(spec, rep.plain_params, test_set);
  rep.dropout_threshold = estimate_critical_threshold(rep.dropout_rows, factor, spec.hidden_count());
  rep.plain_threshold = estimate_critical_threshold(rep.plain_rows, factor, spec.hidden_count());
  return rep;
}

inline void write_rows_csv(std::ostream& out, std::span<const DegradationRow> rows) {
  out << "k,mean_mse,degradation_pct,std,trials,p_value\n";
  for (const auto& r : rows) {
    out << r.k << ',' << data::format_double(r.mean_mse) << ',' << data::format_double(r.degradation_pct) << ','
        << data::format_double(r.std_mse) << ',' << r.trials << ',' << data::format_double(r.p_value) << '\n';
  }
}

}  // namespace ftmlp::fault
