#include "evo/duality.hpp"

#include <sstream>

#include <json.hpp>

namespace evo::lab {

namespace {

struct NamedDensity {
  std::string name;
  AnalyticDensity density;
  Vecd start;
};

std::vector<NamedDensity> matrix_densities() {
  std::vector<NamedDensity> out;
  out.push_back({"gaussian(0,1)", AnalyticDensity::gaussian1d(0.0, 1.0), Vecd::Constant(1, 1.5)});
  Vecd m1 = Vecd::Constant(1, -1.0), m2 = Vecd::Constant(1, 1.0);
  out.push_back({"mixture(0.5 N(-1,0.25) + 0.5 N(1,0.25))",
                 AnalyticDensity::mixture({{0.5, m1, 0.25}, {0.5, m2, 0.25}}),
                 Vecd::Constant(1, 0.6)});
  return out;
}

std::vector<std::pair<std::string, NoiseSchedule>> matrix_schedules() {
  return {
      {"constant sigma=1", NoiseSchedule::constant_sigma(1.0)},
      {"sigma^2=2t", NoiseSchedule::linear_beta(0.0, 2.0)},
      {"clamped cosine", NoiseSchedule::cosine()},
  };
}

}  // namespace

DualityReport run_duality_matrix(Index n_steps) {
  DualityReport rep;
  for (const auto& d : matrix_densities()) {
    for (const auto& [sname, sched] : matrix_schedules()) {
      double tol = sched.kind == ScheduleKind::constant_sigma ? 1e-12 : 1e-6;
      DualityCell cell;
      cell.density_name = d.name;
      cell.schedule_name = sname;
      cell.report = verify_reparam_equivalence(d.density, sched, d.start, n_steps,
                                               OdeSolver::rk4, tol);
      rep.all_pass = rep.all_pass && cell.report.pass;
      rep.cells.push_back(std::move(cell));
    }
  }
  return rep;
}

std::string duality_report_text(const DualityReport& rep) {
  std::ostringstream os;
  os << "reparameterization equivalence (rk4)\n";
  for (const auto& c : rep.cells) {
    os << (c.report.pass ? "PASS" : "FAIL") << "  " << c.density_name << " x "
       << c.schedule_name << "  deviation=" << std::scientific << c.report.max_deviation
       << "  tol=" << c.report.tolerance << "  steps=" << c.report.n_steps << "\n";
  }
  os << (rep.all_pass ? "all cells pass" : "FAILURES present") << "\n";
  return os.str();
}

std::string duality_report_json(const DualityReport& rep) {
  nlohmann::json j;
  j["all_pass"] = rep.all_pass;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : rep.cells) {
    j["cells"].push_back({{"density", c.density_name},
                          {"schedule", c.schedule_name},
                          {"deviation", c.report.max_deviation},
                          {"tolerance", c.report.tolerance},
                          {"n_steps", c.report.n_steps},
                          {"pass", c.report.pass}});
  }
  return j.dump(2);
}

}  // namespace evo::lab
