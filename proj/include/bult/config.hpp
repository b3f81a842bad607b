#pragma once

// JSON scene/tracker configuration. Every key is optional; missing keys keep
// the reference-scenario defaults. See README for the schema.

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "bult/signal.hpp"
#include "bult/tracker.hpp"

namespace bult {

namespace detail {

using Json = nlohmann::json;

inline Eigen::Vector3d read_vec3(const Json& j, const char* key) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(key) + ": expected 3 numbers");
  Eigen::Vector3d v;
  for (int a = 0; a < 3; ++a) {
    if (!j[a].is_number()) throw ConfigError(std::string(key) + ": expected 3 numbers");
    v[a] = j[a].get<double>();
  }
  if (!v.allFinite()) throw ConfigError(std::string(key) + ": non-finite value");
  return v;
}

inline Eigen::Matrix3d read_cov(const Json& obj, const char* diag_key, const char* full_key,
                                const Eigen::Matrix3d& fallback) {
  if (obj.contains(full_key)) {
    const Json& m = obj[full_key];
    if (!m.is_array() || m.size() != 3) throw ConfigError(std::string(full_key) + ": expected 3x3");
    Eigen::Matrix3d c;
    for (int r = 0; r < 3; ++r) c.row(r) = read_vec3(m[r], full_key).transpose();
    return c;
  }
  if (obj.contains(diag_key)) return read_vec3(obj[diag_key], diag_key).asDiagonal();
  return fallback;
}

template <class T>
T get_or(const Json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(key) + ": wrong type");
  }
}

}  // namespace detail

struct LoadedConfig {
  SceneConfig scene;
  TrackerConfig tracker;
};

inline LoadedConfig parse_config(const std::string& text) {
  using detail::Json;
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be an object");

  LoadedConfig out;
  SceneConfig& s = out.scene;
  s = reference_scene();
  if (j.contains("wavelength_m")) {
    s.wavelength = detail::get_or(j, "wavelength_m", s.wavelength);
  } else if (j.contains("carrier_frequency_ghz")) {
    const double ghz = detail::get_or(j, "carrier_frequency_ghz", 28.0);
    if (!(ghz > 0.0)) throw ConfigError("carrier_frequency_ghz must be positive");
    s.wavelength = kSpeedOfLight / (ghz * 1e9);
  }
  if (j.contains("noise_power_dbm")) s.noise_power = dbm_to_watts(detail::get_or(j, "noise_power_dbm", -84.0));
  s.n_bs = detail::get_or(j, "n_bs", s.n_bs);
  s.n_ris = detail::get_or(j, "n_ris", s.n_ris);
  s.n_user = detail::get_or(j, "n_user", s.n_user);
  if (j.contains("bs_position")) s.bs_position = detail::read_vec3(j["bs_position"], "bs_position");
  try {
    if (j.contains("bs_direction")) s.bs_direction = UnitVector3(detail::read_vec3(j["bs_direction"], "bs_direction"));
    if (j.contains("user_direction")) {
      s.user_direction = UnitVector3(detail::read_vec3(j["user_direction"], "user_direction"));
    }
    if (j.contains("ris")) {
      if (!j["ris"].is_array()) throw ConfigError("ris: expected a list");
      s.ris.clear();
      for (const auto& r : j["ris"]) {
        RisConfig rc;
        if (!r.contains("position") || !r.contains("direction")) {
          throw ConfigError("ris entries need position and direction");
        }
        rc.position = detail::read_vec3(r["position"], "ris.position");
        rc.direction = UnitVector3(detail::read_vec3(r["direction"], "ris.direction"));
        rc.zeta = detail::get_or(r, "zeta", 1.0);
        s.ris.push_back(rc);
      }
    }
  } catch (const GeometryError& e) {
    throw ConfigError(e.what());
  }
  s.mobility_cov = detail::read_cov(j, "mobility_cov_diag", "mobility_cov", s.mobility_cov);
  // the tracker's model covariance defaults to the mobility covariance
  s.model_cov = detail::read_cov(j, "model_cov_diag", "model_cov", s.mobility_cov);
  s.n_slots = detail::get_or(j, "n_slots", s.n_slots);
  if (j.contains("initial_position")) s.initial_position = detail::read_vec3(j["initial_position"], "initial_position");
  s.initial_cov = detail::read_cov(j, "initial_cov_diag", "initial_cov", s.initial_cov);
  if (j.contains("bounds_min")) s.bounds_min = detail::read_vec3(j["bounds_min"], "bounds_min");
  if (j.contains("bounds_max")) s.bounds_max = detail::read_vec3(j["bounds_max"], "bounds_max");
  s.validate();

  TrackerConfig& t = out.tracker;
  t.c_q = s.model_cov;
  t.initial_prior = {s.initial_position, s.initial_cov};
  if (j.contains("tracker")) {
    const Json& tj = j["tracker"];
    if (!tj.is_object()) throw ConfigError("tracker: expected an object");
    t.damping = detail::get_or(tj, "damping", t.damping);
    t.max_outer_iterations = detail::get_or(tj, "max_outer_iterations", t.max_outer_iterations);
    t.outer_tolerance = detail::get_or(tj, "outer_tolerance_m", t.outer_tolerance);
    t.gdm_step = detail::get_or(tj, "gdm_step_m", t.gdm_step);
    t.gdm_max_iterations = detail::get_or(tj, "gdm_max_iterations", t.gdm_max_iterations);
    t.flat_initial_prior = detail::get_or(tj, "flat_initial_prior", t.flat_initial_prior);
    t.flat_prior_variance = detail::get_or(tj, "flat_prior_variance", t.flat_prior_variance);
    t.aoa.max_iterations = detail::get_or(tj, "aoa_max_iterations", t.aoa.max_iterations);
    t.aoa.grid_size = detail::get_or(tj, "aoa_grid_size", t.aoa.grid_size);
  }
  t.validate();
  return out;
}

inline LoadedConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace bult
