#include "qfilt/scenario.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace qfilt::sim {

using nlohmann::json;

namespace {

Eigen::Vector3d parse_vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument(what + " must be an array of three numbers");
  for (const auto& c : j)
    if (!c.is_number()) throw std::invalid_argument(what + " must be numeric");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

spin::Schedule3 parse_schedule(const json& j, const std::string& what) {
  if (j.is_array()) return spin::Schedule3::constant(parse_vec3(j, what));
  if (j.is_object()) {
    if (!j.contains("t") || !j.contains("v"))
      throw std::invalid_argument(what + " table needs \"t\" and \"v\" arrays");
    for (const auto& [key, val] : j.items()) {
      (void)val;
      if (key != "t" && key != "v")
        throw std::invalid_argument(what + " table has unknown key \"" + key + "\"");
    }
    std::vector<double> knots;
    for (const auto& c : j["t"]) {
      if (!c.is_number()) throw std::invalid_argument(what + ".t must be numeric");
      knots.push_back(c.get<double>());
    }
    std::vector<Eigen::Vector3d> values;
    for (std::size_t i = 0; i < j["v"].size(); ++i)
      values.push_back(parse_vec3(j["v"][i], what + ".v"));
    return spin::Schedule3::table(std::move(knots), std::move(values));
  }
  throw std::invalid_argument(what + " must be a vector or a breakpoint table");
}

json schedule_json(const spin::Schedule3& s) {
  auto vec3 = [](const Eigen::Vector3d& v) { return json::array({v(0), v(1), v(2)}); };
  if (s.constant_in_time()) return vec3(s.values.front());
  json out;
  out["t"] = s.knots;
  json vals = json::array();
  for (const auto& v : s.values) vals.push_back(vec3(v));
  out["v"] = vals;
  return out;
}

Mat sigma_minus() {
  Mat l = Mat::Zero(2, 2);
  l(1, 0) = 1.0;
  return l;
}

}  // namespace

void Scenario::validate() const {
  spin.validate();
  if (kind == Kind::Counting) {
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    if (!spin.rs.empty())
      throw std::invalid_argument("counting scenarios take gamma, not measurement directions");
    if (!spin.u.constant_in_time())
      throw std::invalid_argument("counting scenarios support only a constant field");
  }
}

Scenario scenario_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("scenario is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("scenario must be a JSON object");

  static const std::set<std::string> allowed = {
      "kind", "name", "p0", "horizon", "dt", "seed", "ensemble",
      "projection", "u", "r", "gamma"};
  for (const auto& [key, val] : j.items()) {
    (void)val;
    if (!allowed.count(key))
      throw std::invalid_argument("scenario has unknown key \"" + key + "\"");
  }

  Scenario sc;
  if (j.contains("kind")) {
    const std::string k = j["kind"].get<std::string>();
    if (k == "spin")
      sc.kind = Scenario::Kind::Spin;
    else if (k == "counting")
      sc.kind = Scenario::Kind::Counting;
    else
      throw std::invalid_argument("unknown scenario kind \"" + k + "\"");
  }
  if (j.contains("name")) sc.name = j["name"].get<std::string>();

  if (!j.contains("horizon") || !j["horizon"].is_number())
    throw std::invalid_argument("scenario needs a numeric \"horizon\"");
  if (!j.contains("dt") || !j["dt"].is_number())
    throw std::invalid_argument("scenario needs a numeric \"dt\"");
  sc.spin.horizon = j["horizon"].get<double>();
  sc.spin.dt = j["dt"].get<double>();

  if (j.contains("p0")) sc.spin.p0 = parse_vec3(j["p0"], "p0");
  if (j.contains("seed")) sc.spin.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("ensemble")) sc.spin.ensemble = j["ensemble"].get<int>();
  if (j.contains("projection")) sc.spin.projection = j["projection"].get<bool>();
  if (j.contains("u")) sc.spin.u = parse_schedule(j["u"], "u");
  if (j.contains("r")) {
    if (!j["r"].is_array())
      throw std::invalid_argument("r must be a list of channel directions");
    int idx = 0;
    for (const auto& entry : j["r"])
      sc.spin.rs.push_back(parse_schedule(entry, "r[" + std::to_string(idx++) + "]"));
  }
  if (j.contains("gamma")) sc.gamma = j["gamma"].get<double>();

  sc.validate();
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read scenario file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return scenario_from_json_text(buf.str());
}

std::string scenario_to_json_text(const Scenario& sc) {
  json j;
  j["kind"] = sc.kind == Scenario::Kind::Spin ? "spin" : "counting";
  if (!sc.name.empty()) j["name"] = sc.name;
  j["p0"] = json::array({sc.spin.p0(0), sc.spin.p0(1), sc.spin.p0(2)});
  j["horizon"] = sc.spin.horizon;
  j["dt"] = sc.spin.dt;
  j["seed"] = sc.spin.seed;
  j["ensemble"] = sc.spin.ensemble;
  j["projection"] = sc.spin.projection;
  if (sc.kind == Scenario::Kind::Spin) {
    j["u"] = schedule_json(sc.spin.u);
    json rs = json::array();
    for (const auto& r : sc.spin.rs) rs.push_back(schedule_json(r));
    j["r"] = rs;
  } else {
    j["u"] = schedule_json(sc.spin.u);
    j["gamma"] = sc.gamma;
  }
  return j.dump(2) + "\n";
}

filter::FilterEngine build_engine(const Scenario& sc) {
  sc.validate();
  if (sc.kind == Scenario::Kind::Spin) return spin::spin_engine(sc.spin);

  filter::SystemModel model;
  model.d = 2;
  auto s = pauli();
  const Eigen::Vector3d u = sc.spin.u.at(0.0);
  model.h = 0.5 * (u(0) * s[0] + u(1) * s[1] + u(2) * s[2]);
  model.ls = {Mat(std::sqrt(sc.gamma) * sigma_minus())};
  return filter::FilterEngine(model, {filter::ObservationChannel::counting(1, 1)});
}

}  // namespace qfilt::sim
