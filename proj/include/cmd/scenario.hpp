#pragma once

// Cell-free network instances: AP layout and backhaul graph, device drops,
// large-scale fading, pilots, activity and the received pilot signals.

#include "cmd/errors.hpp"
#include "cmd/linalg.hpp"
#include "cmd/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

namespace cmd {

enum class Layout { grid, ring };

inline const char* to_string(Layout l) { return l == Layout::grid ? "grid" : "ring"; }

inline Layout parse_layout(const std::string& s) {
  if (s == "grid") return Layout::grid;
  if (s == "ring") return Layout::ring;
  throw InvalidConfig("layout: expected 'grid' or 'ring', got '" + s + "'");
}

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct TopologyConfig {
  int num_aps = 5;
  double ap_spacing = 500.0;  // meters
  int degree = 4;             // one-hop neighbors chosen per AP before symmetrization
  Layout layout = Layout::grid;
  std::uint64_t seed = 1;
};

struct Topology {
  std::vector<Point> ap_positions;
  /// neighbors[b] is N_b^- (excludes b), ascending.
  std::vector<std::vector<int>> neighbors;

  int num_aps() const { return static_cast<int>(ap_positions.size()); }

  /// Sum over APs of |N_b^-|, i.e. the number of directed backhaul links.
  std::size_t directed_links() const {
    std::size_t n = 0;
    for (const auto& nb : neighbors) n += nb.size();
    return n;
  }

  bool adjacent(int a, int b) const {
    const auto& nb = neighbors.at(static_cast<std::size_t>(a));
    return std::binary_search(nb.begin(), nb.end(), b);
  }

  /// Same positions with every backhaul link removed.
  Topology isolated() const {
    Topology t = *this;
    for (auto& nb : t.neighbors) nb.clear();
    return t;
  }
};

inline std::vector<Point> layout_positions(const TopologyConfig& cfg) {
  std::vector<Point> pos(static_cast<std::size_t>(cfg.num_aps));
  const int b_count = cfg.num_aps;
  if (cfg.layout == Layout::grid) {
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(b_count))));
    for (int b = 0; b < b_count; ++b) {
      pos[static_cast<std::size_t>(b)] = {(b % cols) * cfg.ap_spacing, (b / cols) * cfg.ap_spacing};
    }
  } else {
    // Adjacent APs on the circle are ap_spacing apart.
    const double radius =
        b_count == 1 ? 0.0 : cfg.ap_spacing / (2.0 * std::sin(std::numbers::pi / b_count));
    for (int b = 0; b < b_count; ++b) {
      const double phi = 2.0 * std::numbers::pi * b / b_count;
      pos[static_cast<std::size_t>(b)] = {radius * std::cos(phi), radius * std::sin(phi)};
    }
  }
  return pos;
}

/// Each AP links to its `degree` nearest APs (ties to the lower index); the
/// link set is then symmetrized by union.
inline Topology build_topology(const TopologyConfig& cfg) {
  if (cfg.num_aps <= 0) throw InvalidConfig("num_aps must be positive");
  if (cfg.degree < 0 || cfg.degree >= cfg.num_aps) {
    throw InvalidConfig("degree must satisfy 0 <= d < num_aps (d=" + std::to_string(cfg.degree) +
                        ", B=" + std::to_string(cfg.num_aps) + ")");
  }
  if (!(cfg.ap_spacing > 0.0)) throw InvalidConfig("ap_spacing must be positive");

  Topology topo;
  topo.ap_positions = layout_positions(cfg);
  const auto b_count = static_cast<std::size_t>(cfg.num_aps);
  std::vector<std::vector<char>> adj(b_count, std::vector<char>(b_count, 0));
  for (std::size_t b = 0; b < b_count; ++b) {
    std::vector<std::size_t> order;
    for (std::size_t o = 0; o < b_count; ++o) {
      if (o != b) order.push_back(o);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      const double di = distance(topo.ap_positions[b], topo.ap_positions[i]);
      const double dj = distance(topo.ap_positions[b], topo.ap_positions[j]);
      // Lattice distances are computed from exact multiples; a relative
      // tolerance absorbs sqrt rounding so ties fall back to index order.
      if (std::abs(di - dj) > 1e-9 * std::max(di, dj)) return di < dj;
      return i < j;
    });
    for (int k = 0; k < cfg.degree; ++k) {
      const std::size_t o = order[static_cast<std::size_t>(k)];
      adj[b][o] = 1;
      adj[o][b] = 1;
    }
  }
  topo.neighbors.resize(b_count);
  for (std::size_t b = 0; b < b_count; ++b) {
    for (std::size_t o = 0; o < b_count; ++o) {
      if (adj[b][o]) topo.neighbors[b].push_back(static_cast<int>(o));
    }
  }
  return topo;
}

struct ChannelModel {
  double pathloss_exponent = 3.7;
  double shadowing_std_db = 0.0;  // 0 disables log-normal shadowing
};

/// Large-scale gain at `distance_m` (clamped below at the 1 m reference).
inline double pathloss(double distance_m, double exponent = 3.7, double shadow_db = 0.0) {
  const double d = std::max(distance_m, 1.0);
  return std::pow(d, -exponent) * std::pow(10.0, shadow_db / 10.0);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidConfig("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Noise power for a target SNR: the median, over active devices, of the
/// gain to the nearest AP divided by the linear SNR. With no active device
/// the median runs over all devices.
inline double snr_to_noise(const Eigen::MatrixXd& gains, const std::vector<int>& activity,
                           const std::vector<int>& nearest_ap, double snr_db) {
  if (!std::isfinite(snr_db)) throw InvalidConfig("snr_db must be finite");
  std::vector<double> active;
  std::vector<double> all;
  for (std::size_t n = 0; n < activity.size(); ++n) {
    const double g = gains(nearest_ap[n], static_cast<Eigen::Index>(n));
    all.push_back(g);
    if (activity[n]) active.push_back(g);
  }
  const double ref = median(active.empty() ? all : active);
  return ref / std::pow(10.0, snr_db / 10.0);
}

struct ScenarioConfig {
  TopologyConfig topology;
  int num_devices = 100;
  int num_active = 10;
  int pilot_len = 24;
  int num_antennas = 16;
  double snr_db = 10.0;
  ChannelModel channel;
  /// When positive, overrides the SNR convention and fixes sigma^2 directly.
  double noise_power_override = 0.0;
};

inline void validate(const ScenarioConfig& c) {
  if (c.num_devices <= 0) throw InvalidConfig("num_devices must be positive");
  if (c.num_active < 0 || c.num_active > c.num_devices) {
    throw InvalidConfig("num_active must lie in [0, num_devices]");
  }
  if (c.pilot_len <= 0) throw InvalidConfig("pilot_len must be positive");
  if (c.num_antennas <= 0) throw InvalidConfig("num_antennas must be positive");
  if (!std::isfinite(c.snr_db)) throw InvalidConfig("snr_db must be finite");
  if (!(c.channel.pathloss_exponent > 0.0)) throw InvalidConfig("pathloss_exponent must be positive");
  if (c.channel.shadowing_std_db < 0.0) throw InvalidConfig("shadowing_std_db must be >= 0");
}

struct Scenario {
  ScenarioConfig config;
  Topology topology;
  std::vector<Point> device_positions;
  std::vector<int> nearest_ap;
  Eigen::MatrixXd gains;  // B x N, g_{b,n} > 0
  std::vector<int> activity;  // chi_n in {0, 1}
  CMatrix pilots;             // L x N
  double noise_power = 1.0;

  int num_aps() const { return topology.num_aps(); }
  int num_devices() const { return static_cast<int>(activity.size()); }
  int pilot_len() const { return static_cast<int>(pilots.rows()); }
  int num_active() const { return std::accumulate(activity.begin(), activity.end(), 0); }
};

inline Scenario make_scenario(const ScenarioConfig& cfg) {
  validate(cfg);
  Scenario sc;
  sc.config = cfg;
  sc.topology = build_topology(cfg.topology);
  const std::uint64_t seed = cfg.topology.seed;
  const int b_count = cfg.topology.num_aps;
  const int n_count = cfg.num_devices;

  // Devices are dropped uniformly over the AP bounding box plus a
  // half-spacing margin.
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : sc.topology.ap_positions) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const double margin = 0.5 * cfg.topology.ap_spacing;
  Rng geo(derive_seed(seed, {stream::kGeometry}));
  sc.device_positions.resize(static_cast<std::size_t>(n_count));
  for (auto& p : sc.device_positions) {
    p.x = geo.uniform(xmin - margin, xmax + margin);
    p.y = geo.uniform(ymin - margin, ymax + margin);
  }

  Rng shadow(derive_seed(seed, {stream::kShadowing}));
  sc.gains.resize(b_count, n_count);
  sc.nearest_ap.assign(static_cast<std::size_t>(n_count), 0);
  for (int n = 0; n < n_count; ++n) {
    const Point dev = sc.device_positions[static_cast<std::size_t>(n)];
    double best = std::numeric_limits<double>::infinity();
    for (int b = 0; b < b_count; ++b) {
      const double d = distance(sc.topology.ap_positions[static_cast<std::size_t>(b)], dev);
      if (d < best) {
        best = d;
        sc.nearest_ap[static_cast<std::size_t>(n)] = b;
      }
      const double sh = cfg.channel.shadowing_std_db > 0.0
                            ? cfg.channel.shadowing_std_db * shadow.normal()
                            : 0.0;
      sc.gains(b, n) = pathloss(d, cfg.channel.pathloss_exponent, sh);
    }
  }

  // Uniform K-subset via a partial Fisher-Yates shuffle.
  Rng act(derive_seed(seed, {stream::kActivity}));
  std::vector<int> idx(static_cast<std::size_t>(n_count));
  std::iota(idx.begin(), idx.end(), 0);
  sc.activity.assign(static_cast<std::size_t>(n_count), 0);
  for (int k = 0; k < cfg.num_active; ++k) {
    const auto j = static_cast<std::size_t>(k) + act.below(static_cast<std::uint64_t>(n_count - k));
    std::swap(idx[static_cast<std::size_t>(k)], idx[j]);
    sc.activity[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])] = 1;
  }

  Rng pil(derive_seed(seed, {stream::kPilots}));
  sc.pilots.resize(cfg.pilot_len, n_count);
  for (int n = 0; n < n_count; ++n) {
    for (int l = 0; l < cfg.pilot_len; ++l) sc.pilots(l, n) = pil.complex_normal(1.0);
  }

  sc.noise_power = cfg.noise_power_override > 0.0
                       ? cfg.noise_power_override
                       : snr_to_noise(sc.gains, sc.activity, sc.nearest_ap, cfg.snr_db);
  return sc;
}

struct ApObservation {
  int ap_id = 0;
  CMatrix received;              // Y_b, L x M (may be empty when not retained)
  HermitianMatrix sample_cov;    // (1/M) Y_b Y_b^H
};

/// Received pilot signal at every AP: Y_b = sum_n chi_n s_n sqrt(g_bn) h_bn^T + W_b.
inline std::vector<ApObservation> synthesize(const Scenario& sc, bool keep_received = true) {
  const int b_count = sc.num_aps();
  const int n_count = sc.num_devices();
  const int l_len = sc.pilot_len();
  const int m_ant = sc.config.num_antennas;
  std::vector<int> active;
  for (int n = 0; n < n_count; ++n) {
    if (sc.activity[static_cast<std::size_t>(n)]) active.push_back(n);
  }
  std::vector<ApObservation> obs(static_cast<std::size_t>(b_count));
  for (int b = 0; b < b_count; ++b) {
    Rng ch(derive_seed(sc.config.topology.seed, {stream::kChannel, static_cast<std::uint64_t>(b)}));
    Rng nz(derive_seed(sc.config.topology.seed, {stream::kNoise, static_cast<std::uint64_t>(b)}));
    CMatrix y = CMatrix::Zero(l_len, m_ant);
    for (int n : active) {
      Eigen::RowVectorXcd h(m_ant);
      for (int m = 0; m < m_ant; ++m) h(m) = ch.complex_normal(1.0);
      y.noalias() += std::sqrt(sc.gains(b, n)) * sc.pilots.col(n) * h;
    }
    for (int m = 0; m < m_ant; ++m) {
      for (int l = 0; l < l_len; ++l) y(l, m) += nz.complex_normal(sc.noise_power);
    }
    auto& o = obs[static_cast<std::size_t>(b)];
    o.ap_id = b;
    o.sample_cov = hermitian_part(y * y.adjoint() / static_cast<double>(m_ant));
    if (keep_received) o.received = std::move(y);
  }
  return obs;
}

}  // namespace cmd
