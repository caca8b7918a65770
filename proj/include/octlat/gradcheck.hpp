#pragma once

// Central finite-difference gradient check. Deliberately knows nothing about
// the adjoint rules: it only re-evaluates the graph forward, so it stays an
// independent oracle for them. Used by the test suites and the selftest
// subcommand.

#include <map>
#include <set>
#include <string>

#include "octlat/autodiff.hpp"

namespace octlat {

struct GradCheckReport {
  bool ok = true;
  double worst = 0;                // worst hybrid abs/rel error seen
  std::string worst_param;
  int64_t worst_index = -1;
};

// Compares d(loss)/d(param) against (f(p+h) - f(p-h)) / 2h per component.
// Error metric is |ad - fd| / max(1, |ad|, |fd|).
inline GradCheckReport gradient_check(const ad::Graph& g, ad::NodeId loss,
                                      const std::set<std::string>& params,
                                      std::map<std::string, Tensor> bindings,
                                      double step = 1e-5, double tol = 1e-4) {
  GradCheckReport rep;
  auto analytic = g.gradient(loss, params, bindings).grads;

  for (const auto& pname : params) {
    Tensor& p = bindings.at(pname);
    const Tensor& ag = analytic.at(pname);
    for (int64_t i = 0; i < p.numel(); ++i) {
      double saved = p.at(i);
      p.at(i) = saved + step;
      double up = g.evaluate(bindings)[loss].at(0);
      p.at(i) = saved - step;
      double dn = g.evaluate(bindings)[loss].at(0);
      p.at(i) = saved;
      double fd = (up - dn) / (2.0 * step);
      double err = std::fabs(ag.at(i) - fd) /
                   std::max({1.0, std::fabs(ag.at(i)), std::fabs(fd)});
      if (err > rep.worst) {
        rep.worst = err;
        rep.worst_param = pname;
        rep.worst_index = i;
      }
    }
  }
  rep.ok = rep.worst <= tol;
  return rep;
}

}  // namespace octlat
