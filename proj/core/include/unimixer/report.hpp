#pragma once

#include <string>
#include <vector>

#include "unimixer/scaling.hpp"

namespace unimixer {

// Columns: variant,params,flops,auc,uauc,seed,status,macs,label.
// flops counts 2 per multiply-accumulate, macs counts 1. Values never
// contain commas; non-finite metrics are written as "nan".
std::string format_scaling_csv(const std::vector<ScalingPoint>& points);
std::vector<ScalingPoint> parse_scaling_csv(const std::string& text);

std::string format_fits_csv(const std::vector<PowerLawFit>& fits);

// Log-scaled x axis (params), one series per variant, fitted curves on top.
std::string format_scaling_svg(const std::vector<ScalingPoint>& points, const std::vector<PowerLawFit>& fits);

// Writes scaling.csv, plus scaling.svg and fits.csv when fits is nonempty.
// Returns the written paths.
std::vector<std::string> emit_report(const std::vector<ScalingPoint>& points, const std::vector<PowerLawFit>& fits,
                                     const std::string& out_dir);

std::vector<ScalingPoint> read_scaling_csv(const std::string& path);

}  // namespace unimixer
