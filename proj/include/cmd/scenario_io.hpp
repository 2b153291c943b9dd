#pragma once

// Versioned JSON form of a Scenario (and optionally its sample covariances)
// used for pinned fixtures. Complex numbers are [re, im] pairs; matrices are
// arrays of rows.

#include "cmd/scenario.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace cmd {

inline constexpr int kScenarioSchemaVersion = 1;

namespace detail {

inline nlohmann::json complex_matrix_to_json(const CMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back({m(i, j).real(), m(i, j).imag()});
    rows.push_back(std::move(row));
  }
  return rows;
}

inline CMatrix complex_matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  CMatrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw InvalidConfig("ragged complex matrix");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& e = row.at(static_cast<std::size_t>(c));
      m(r, c) = Complex(e.at(0).get<double>(), e.at(1).get<double>());
    }
  }
  return m;
}

inline nlohmann::json real_matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd real_matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = j.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  return m;
}

inline nlohmann::json points_to_json(const std::vector<Point>& pts) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : pts) a.push_back({p.x, p.y});
  return a;
}

inline std::vector<Point> points_from_json(const nlohmann::json& j) {
  std::vector<Point> pts;
  for (const auto& e : j) pts.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
  return pts;
}

}  // namespace detail

inline nlohmann::json to_json(const ScenarioConfig& c) {
  return {
      {"num_aps", c.topology.num_aps},
      {"ap_spacing", c.topology.ap_spacing},
      {"degree", c.topology.degree},
      {"layout", to_string(c.topology.layout)},
      {"seed", c.topology.seed},
      {"num_devices", c.num_devices},
      {"num_active", c.num_active},
      {"pilot_len", c.pilot_len},
      {"num_antennas", c.num_antennas},
      {"snr_db", c.snr_db},
      {"pathloss_exponent", c.channel.pathloss_exponent},
      {"shadowing_std_db", c.channel.shadowing_std_db},
      {"noise_power_override", c.noise_power_override},
  };
}

/// Reads scenario parameters; absent keys keep the values already in `c`.
inline void update_from_json(ScenarioConfig& c, const nlohmann::json& j) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("num_aps", c.topology.num_aps);
  take("ap_spacing", c.topology.ap_spacing);
  take("degree", c.topology.degree);
  if (j.contains("layout")) c.topology.layout = parse_layout(j.at("layout").get<std::string>());
  take("seed", c.topology.seed);
  take("num_devices", c.num_devices);
  take("num_active", c.num_active);
  take("pilot_len", c.pilot_len);
  take("num_antennas", c.num_antennas);
  take("snr_db", c.snr_db);
  take("pathloss_exponent", c.channel.pathloss_exponent);
  take("shadowing_std_db", c.channel.shadowing_std_db);
  take("noise_power_override", c.noise_power_override);
}

inline nlohmann::json scenario_to_json(const Scenario& sc,
                                       const std::vector<ApObservation>* obs = nullptr) {
  nlohmann::json j;
  j["schema_version"] = kScenarioSchemaVersion;
  j["config"] = to_json(sc.config);
  j["ap_positions"] = detail::points_to_json(sc.topology.ap_positions);
  j["neighbors"] = sc.topology.neighbors;
  j["device_positions"] = detail::points_to_json(sc.device_positions);
  j["nearest_ap"] = sc.nearest_ap;
  j["large_scale"] = detail::real_matrix_to_json(sc.gains);
  j["activity"] = sc.activity;
  j["pilots"] = detail::complex_matrix_to_json(sc.pilots);
  j["noise_power"] = sc.noise_power;
  j["snr_db"] = sc.config.snr_db;
  if (obs) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& o : *obs) {
      a.push_back({{"ap_id", o.ap_id}, {"sample_cov", detail::complex_matrix_to_json(o.sample_cov)}});
    }
    j["observations"] = std::move(a);
  }
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j,
                                   std::vector<ApObservation>* obs = nullptr) {
  const int version = j.at("schema_version").get<int>();
  if (version != kScenarioSchemaVersion) {
    throw InvalidConfig("scenario fixture: unsupported schema_version " + std::to_string(version));
  }
  Scenario sc;
  update_from_json(sc.config, j.at("config"));
  sc.topology.ap_positions = detail::points_from_json(j.at("ap_positions"));
  sc.topology.neighbors = j.at("neighbors").get<std::vector<std::vector<int>>>();
  sc.device_positions = detail::points_from_json(j.at("device_positions"));
  sc.nearest_ap = j.at("nearest_ap").get<std::vector<int>>();
  sc.gains = detail::real_matrix_from_json(j.at("large_scale"));
  sc.activity = j.at("activity").get<std::vector<int>>();
  sc.pilots = detail::complex_matrix_from_json(j.at("pilots"));
  sc.noise_power = j.at("noise_power").get<double>();
  if (obs && j.contains("observations")) {
    obs->clear();
    for (const auto& e : j.at("observations")) {
      ApObservation o;
      o.ap_id = e.at("ap_id").get<int>();
      o.sample_cov = detail::complex_matrix_from_json(e.at("sample_cov"));
      obs->push_back(std::move(o));
    }
  }
  return sc;
}

}  // namespace cmd
