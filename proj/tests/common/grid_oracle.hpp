#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <utility>

#include "bnnw/estimator.hpp"

namespace bnnw::testutil {

/// Brute-force minimizer of the weighted objective over a two-parameter grid.
/// A coarse sweep of [-4, 4]^2 locates the basin, then a 1e-3 grid is swept around it and refined twice.
/// Each fine window is re-centred until its minimum is interior.
inline Eigen::Vector2d grid_argmin(const Dataset& d, const Eigen::VectorXd& w, const LossSpec& spec,
                                   const DoseResponseModel& model) {
  Eigen::Vector2d best(0, 0);
  double best_val = std::numeric_limits<double>::infinity();
  auto scan = [&](Eigen::Vector2d c, int m, double step) {
    int edge_a = 0, edge_b = 0;
    for (int a = -m; a <= m; ++a)
      for (int b = -m; b <= m; ++b) {
        const Eigen::Vector2d cand(c[0] + a * step, c[1] + b * step);
        const double v = weighted_objective(d, w, spec, model, cand);
        if (v < best_val) {
          best_val = v;
          best = cand;
          edge_a = std::abs(a) == m ? a : 0;
          edge_b = std::abs(b) == m ? b : 0;
        }
      }
    return edge_a != 0 || edge_b != 0;
  };
  scan(Eigen::Vector2d(0, 0), 200, 2e-2);
  // Windows span many steps so a narrow valley is swept densely rather than walked.
  for (const auto& [step, m] : {std::pair{1e-3, 100}, std::pair{1e-4, 400}, std::pair{1e-5, 400}}) {
    for (int moves = 0; moves < 100 && scan(best, m, step); ++moves) {
    }
  }
  return best;
}

}  // namespace bnnw::testutil
