#pragma once

#include <string>

#include "qfilt/filtering.hpp"
#include "qfilt/spin.hpp"

namespace qfilt::sim {

/* A scenario file names either the quadrature-observed spin model or a
 * two-level emitter under photodetection (L = sqrt(gamma) sigma_minus). */
struct Scenario {
  enum class Kind { Spin, Counting };
  Kind kind = Kind::Spin;
  std::string name;
  spin::SpinScenario spin;  // grid, seed, ensemble and p0 serve both kinds
  double gamma = 1.0;

  void validate() const;
};

Scenario scenario_from_json_text(const std::string& text);
Scenario load_scenario(const std::string& path);
std::string scenario_to_json_text(const Scenario& sc);

/* Engine matching the scenario: diffusive channels for the spin kind, a
 * single counting channel for the emitter kind. */
filter::FilterEngine build_engine(const Scenario& sc);

}  // namespace qfilt::sim
