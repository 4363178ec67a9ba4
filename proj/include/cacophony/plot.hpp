#pragma once

#include <string>
#include <vector>

namespace cacophony {

// Renders one polyline per metrics CSV into a deterministic SVG (fixed
// palette, fixed float formatting, no timestamps). split_filter narrows rows
// to one split ("val", "train"); empty keeps everything. A series with a
// single point renders as a circle marker.
void plot_curves(const std::vector<std::string>& csv_paths, const std::string& column,
                 const std::string& split_filter, const std::vector<std::string>& labels,
                 const std::string& out_svg);

}  // namespace cacophony
