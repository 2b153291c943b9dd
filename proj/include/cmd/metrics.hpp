#pragma once

// Activity decisions from per-AP estimates and the activity error rate.

#include "cmd/errors.hpp"
#include "cmd/linalg.hpp"
#include "cmd/objective.hpp"
#include "cmd/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmd {

class DegenerateClasses : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Which AP's estimate decides device n.
enum class AnchorMode {
  nearest,    ///< the geographically closest AP
  max_gamma,  ///< the AP reporting the largest estimate
};

inline const char* to_string(AnchorMode m) {
  return m == AnchorMode::nearest ? "nearest" : "max_gamma";
}

inline AnchorMode parse_anchor_mode(const std::string& s) {
  if (s == "nearest") return AnchorMode::nearest;
  if (s == "max_gamma") return AnchorMode::max_gamma;
  throw InvalidConfig("b0_mode: expected 'nearest' or 'max_gamma', got '" + s + "'");
}

struct ErrorRates {
  double missed = 0.0;       // misses / K
  double false_alarm = 0.0;  // false alarms / (N - K)
  double aer = 0.0;          // missed + false_alarm
  double pooled = 0.0;       // (misses + false alarms) / N
  int misses = 0;
  int false_alarms = 0;
};

/// Per-class rates; throws when either class is empty.
inline ErrorRates aer(const std::vector<int>& decided, const std::vector<int>& truth) {
  if (decided.size() != truth.size()) throw DimensionMismatch("aer: length mismatch");
  int active = 0;
  ErrorRates r;
  for (std::size_t n = 0; n < truth.size(); ++n) {
    active += truth[n] ? 1 : 0;
    if (truth[n] && !decided[n]) ++r.misses;
    if (!truth[n] && decided[n]) ++r.false_alarms;
  }
  const int total = static_cast<int>(truth.size());
  if (active == 0 || active == total) {
    throw DegenerateClasses("aer: need at least one active and one inactive device (K=" +
                            std::to_string(active) + ", N=" + std::to_string(total) + ")");
  }
  r.missed = static_cast<double>(r.misses) / active;
  r.false_alarm = static_cast<double>(r.false_alarms) / (total - active);
  r.aer = r.missed + r.false_alarm;
  r.pooled = static_cast<double>(r.misses + r.false_alarms) / total;
  return r;
}

struct DetectionReport {
  std::vector<int> decisions;
  std::vector<int> anchor_ap;  // b0 per device
  double threshold = 0.0;      // iota * sigma^2
  ErrorRates rates;
};

/// chi_hat_n = 1 iff gamma_{b0, n} > iota sigma^2. Rates are filled in when
/// the ground truth has both classes.
inline DetectionReport detect(const std::vector<GammaVector>& estimates, const Scenario& sc,
                              double noise_power, double iota,
                              AnchorMode mode = AnchorMode::nearest) {
  if (!(iota > 0.0)) throw InvalidConfig("detect: iota must be > 0");
  if (static_cast<int>(estimates.size()) != sc.num_aps()) {
    throw DimensionMismatch("detect: one estimate per AP required");
  }
  const int n_count = sc.num_devices();
  DetectionReport rep;
  rep.threshold = iota * noise_power;
  rep.decisions.assign(static_cast<std::size_t>(n_count), 0);
  rep.anchor_ap.assign(static_cast<std::size_t>(n_count), 0);
  for (int n = 0; n < n_count; ++n) {
    int b0 = sc.nearest_ap[static_cast<std::size_t>(n)];
    if (mode == AnchorMode::max_gamma) {
      double best = -std::numeric_limits<double>::infinity();
      for (int b = 0; b < sc.num_aps(); ++b) {
        const double v = estimates[static_cast<std::size_t>(b)](n);
        if (v > best) {
          best = v;
          b0 = b;
        }
      }
    }
    rep.anchor_ap[static_cast<std::size_t>(n)] = b0;
    rep.decisions[static_cast<std::size_t>(n)] =
        estimates[static_cast<std::size_t>(b0)](n) > rep.threshold ? 1 : 0;
  }
  const int k = sc.num_active();
  if (k > 0 && k < n_count) rep.rates = aer(rep.decisions, sc.activity);
  return rep;
}

/// log-spaced grid 10^lo ... 10^hi with `points` entries.
inline std::vector<double> log_grid(double lo_exp = -1.0, double hi_exp = 3.0, int points = 31) {
  std::vector<double> g;
  for (int i = 0; i < points; ++i) {
    const double e = points == 1 ? lo_exp : lo_exp + (hi_exp - lo_exp) * i / (points - 1);
    g.push_back(std::pow(10.0, e));
  }
  return g;
}

struct ValidationRun {
  const Scenario* scenario = nullptr;
  std::vector<GammaVector> estimates;
  double noise_power = 1.0;
};

struct Calibration {
  double iota = 0.0;
  double mean_aer = 0.0;
  std::vector<double> grid;
  std::vector<double> grid_aer;
};

/// Grid value of iota with the lowest mean AER; ties go to the smaller iota.
inline Calibration calibrate_threshold(const std::vector<ValidationRun>& runs,
                                       std::vector<double> grid = log_grid(),
                                       AnchorMode mode = AnchorMode::nearest) {
  if (runs.empty()) throw InvalidConfig("calibrate_threshold: need at least one validation run");
  if (grid.empty()) throw InvalidConfig("calibrate_threshold: empty grid");
  Calibration cal;
  std::sort(grid.begin(), grid.end());
  cal.grid = std::move(grid);
  cal.mean_aer = std::numeric_limits<double>::infinity();
  for (double iota : cal.grid) {
    double acc = 0.0;
    for (const auto& r : runs) {
      acc += detect(r.estimates, *r.scenario, r.noise_power, iota, mode).rates.aer;
    }
    const double mean = acc / static_cast<double>(runs.size());
    cal.grid_aer.push_back(mean);
    if (mean < cal.mean_aer) {
      cal.mean_aer = mean;
      cal.iota = iota;
    }
  }
  return cal;
}

}  // namespace cmd
