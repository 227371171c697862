#pragma once

#include <string>

#include "biopt/run_record.hpp"

namespace biopt {

/* Writes an 800x500 SVG line chart of the mixture weight trajectories in a
   run record: one polyline per source, x axis "step", y axis "weight" fixed
   to [0, 1].  Colors follow a fixed cycle so reruns are byte identical.
   Throws std::invalid_argument when the record carries no weight columns. */
void emit_weight_plot(const RunRecord& record, const std::string& path);

}  // namespace biopt
