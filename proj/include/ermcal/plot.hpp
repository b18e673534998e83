#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ermcal/harness.hpp"

namespace ermcal {

// One static SVG line chart per aggregate metric: log-scaled x axis (n or
// lambda), one mean line with a +-std band per (kernel, model) series, and one
// x tick per grid point. Returns (metric name, SVG text) pairs; metrics with no
// values in the chosen split are skipped.
std::vector<std::pair<std::string, std::string>> render_metric_plots(const std::vector<AggregateRow>& agg,
                                                                     SweepAxis axis, Split split);

// Sample-size axis when the aggregates span more than one n, lambda otherwise.
SweepAxis infer_axis(const std::vector<AggregateRow>& agg);

}  // namespace ermcal
