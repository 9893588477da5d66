#pragma once

#include <vector>

#include "mib/distributions.hpp"
#include "mib/estimators.hpp"

namespace mib {

struct TracePoint {
    long iter = 0;
    double true_mi = 0.0;
    double value = 0.0;
};

// Per-iteration estimates from one estimator run across a staircase of MI
// levels. Iterations are global and contiguous; each level contributes
// exactly iters_per_level points.
struct EstimateTrace {
    est::EstimatorId id = est::EstimatorId::VClub;
    Task task = Task::Gaussian;
    std::size_t dim = 0;
    std::size_t iters_per_level = 0;
    std::vector<double> levels;
    std::vector<TracePoint> points;
};

struct MinimizePoint {
    long iter = 0;
    double estimate = 0.0;
    double true_mi = 0.0;
    bool diverged = false;
};

struct MinimizeTrace {
    est::EstimatorId id = est::EstimatorId::VClubSample;
    std::vector<MinimizePoint> points;
    bool any_divergence = false;
};

}  // namespace mib
