#include "unimixer/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "unimixer/errors.hpp"

namespace unimixer {

namespace {

constexpr const char* kHeader = "variant,params,flops,auc,uauc,seed,status,macs,label";
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string number(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string check_cell(const std::string& s) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw IoError("report: value '" + s + "' contains a comma, quote or line break");
  }
  return s;
}

double parse_number(const std::string& s) {
  if (s == "nan") return std::nan("");
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw IoError("scaling csv: bad number '" + s + "'");
  return v;
}

std::uint64_t parse_count(const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw IoError("scaling csv: bad count '" + s + "'");
  return v;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

std::string format_scaling_csv(const std::vector<ScalingPoint>& points) {
  std::ostringstream out;
  out << kHeader << '\n';
  for (const auto& p : points) {
    out << check_cell(p.variant) << ',' << p.params << ',' << p.flops << ',' << number(p.auc) << ','
        << number(p.uauc) << ',' << p.seed << ',' << check_cell(p.status) << ',' << p.macs() << ','
        << check_cell(p.label) << '\n';
  }
  return out.str();
}

std::vector<ScalingPoint> parse_scaling_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw IoError("scaling csv: unexpected header '" + line + "'");
  std::vector<ScalingPoint> points;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream row(line);
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 9) throw IoError("scaling csv line " + std::to_string(line_no) + ": expected 9 columns");
    ScalingPoint p;
    p.variant = cells[0];
    p.params = static_cast<std::size_t>(parse_count(cells[1]));
    p.flops = parse_count(cells[2]);
    p.auc = parse_number(cells[3]);
    p.uauc = parse_number(cells[4]);
    p.seed = parse_count(cells[5]);
    p.status = cells[6];
    if (parse_count(cells[7]) != p.macs()) {
      throw IoError("scaling csv line " + std::to_string(line_no) + ": macs does not equal flops / 2");
    }
    p.label = cells[8];
    points.push_back(p);
  }
  return points;
}

std::string format_fits_csv(const std::vector<PowerLawFit>& fits) {
  std::ostringstream out;
  out << "variant,x_kind,x_units,a,b,rmse,baseline_auc\n";
  for (const auto& f : fits) {
    out << check_cell(f.variant) << ',' << to_string(f.x_kind) << ',' << check_cell(f.x_units) << ',' << number(f.a)
        << ',' << number(f.b) << ',' << number(f.residual) << ',' << number(f.baseline_auc) << '\n';
  }
  return out.str();
}

std::string format_scaling_svg(const std::vector<ScalingPoint>& points, const std::vector<PowerLawFit>& fits) {
  constexpr double kWidth = 720, kHeight = 480, kLeft = 80, kRight = 180, kTop = 40, kBottom = 60;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;

  std::map<std::string, std::vector<const ScalingPoint*>> series;
  double lx_min = INFINITY, lx_max = -INFINITY, y_min = INFINITY, y_max = -INFINITY;
  for (const auto& p : points) {
    if (!p.ok() || p.params == 0 || !std::isfinite(p.auc)) continue;
    series[p.variant].push_back(&p);
    const double lx = std::log10(static_cast<double>(p.params) / 1e6);
    lx_min = std::min(lx_min, lx);
    lx_max = std::max(lx_max, lx);
    y_min = std::min(y_min, p.auc);
    y_max = std::max(y_max, p.auc);
  }
  if (series.empty()) {
    lx_min = -1;
    lx_max = 0;
    y_min = 0.5;
    y_max = 1.0;
  }
  if (lx_max - lx_min < 1e-9) {
    lx_min -= 0.5;
    lx_max += 0.5;
  }
  if (y_max - y_min < 1e-9) {
    y_min -= 0.01;
    y_max += 0.01;
  }
  const double pad_y = 0.08 * (y_max - y_min);
  y_min -= pad_y;
  y_max += pad_y;
  auto sx = [&](double lx) { return kLeft + (lx - lx_min) / (lx_max - lx_min) * plot_w; };
  auto sy = [&](double y) { return kTop + (y_max - y) / (y_max - y_min) * plot_h; };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
      << kTop + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
      << "\" stroke=\"black\"/>\n";

  // Decade and half-decade ticks on the log axis.
  for (double e = std::floor(lx_min * 2) / 2; e <= lx_max + 1e-9; e += 0.5) {
    if (e < lx_min - 1e-9) continue;
    const double x = sx(e);
    svg << "<line x1=\"" << x << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << x << "\" y2=\"" << kTop + plot_h + 5
        << "\" stroke=\"black\"/>\n";
    std::ostringstream label;
    label << std::pow(10.0, e);
    svg << "<text x=\"" << x << "\" y=\"" << kTop + plot_h + 20 << "\" text-anchor=\"middle\">" << label.str()
        << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double y = y_min + (y_max - y_min) * i / 4.0;
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\">" << number(std::round(y * 1e4) / 1e4)
        << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 15
      << "\" text-anchor=\"middle\">dense params (millions, log scale)</text>\n";
  svg << "<text x=\"20\" y=\"" << kTop + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
      << kTop + plot_h / 2 << ")\">held-out AUC</text>\n";

  std::size_t color = 0;
  std::map<std::string, std::string> colors;
  for (const auto& [variant, members] : series) {
    const std::string c = kPalette[color++ % std::size(kPalette)];
    colors[variant] = c;
    svg << "<g class=\"series\" data-variant=\"" << xml_escape(variant) << "\">\n";
    for (const ScalingPoint* p : members) {
      svg << "<circle cx=\"" << sx(std::log10(static_cast<double>(p->params) / 1e6)) << "\" cy=\"" << sy(p->auc)
          << "\" r=\"4\" fill=\"" << c << "\"/>\n";
    }
    svg << "</g>\n";
  }
  for (const auto& fit : fits) {
    if (fit.x_kind != XKind::kParams) continue;
    const std::string c = colors.count(fit.variant) ? colors[fit.variant] : "black";
    svg << "<polyline class=\"fit\" fill=\"none\" stroke=\"" << c << "\" stroke-dasharray=\"6 3\" points=\"";
    for (int i = 0; i <= 40; ++i) {
      const double lx = lx_min + (lx_max - lx_min) * i / 40.0;
      const double y = fit.baseline_auc + fit.a * std::pow(std::pow(10.0, lx), fit.b);
      svg << sx(lx) << ',' << sy(std::clamp(y, y_min, y_max)) << ' ';
    }
    svg << "\"/>\n";
  }
  double legend_y = kTop + 10;
  for (const auto& [variant, c] : colors) {
    svg << "<circle cx=\"" << kWidth - kRight + 20 << "\" cy=\"" << legend_y << "\" r=\"4\" fill=\"" << c << "\"/>\n";
    svg << "<text x=\"" << kWidth - kRight + 30 << "\" y=\"" << legend_y + 4 << "\">" << xml_escape(variant)
        << "</text>\n";
    legend_y += 18;
  }
  for (const auto& fit : fits) {
    std::ostringstream text;
    text << xml_escape(fit.variant) << ": " << number(std::round(fit.a * 1e6) / 1e6) << " x^"
         << number(std::round(fit.b * 1e4) / 1e4);
    svg << "<text x=\"" << kWidth - kRight + 10 << "\" y=\"" << legend_y + 4 << "\" font-size=\"10\">"
        << text.str() << "</text>\n";
    legend_y += 16;
  }
  if (!fits.empty()) {
    svg << "<text x=\"" << kLeft << "\" y=\"24\">delta AUC over baseline " << number(fits.front().baseline_auc)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::string> emit_report(const std::vector<ScalingPoint>& points, const std::vector<PowerLawFit>& fits,
                                     const std::string& out_dir) {
  if (points.empty()) throw PreconditionError("emit_report: no points");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
  const std::filesystem::path dir(out_dir);
  std::vector<std::string> written;
  write_file(dir / "scaling.csv", format_scaling_csv(points));
  written.push_back((dir / "scaling.csv").string());
  if (!fits.empty()) {
    write_file(dir / "scaling.svg", format_scaling_svg(points, fits));
    written.push_back((dir / "scaling.svg").string());
    write_file(dir / "fits.csv", format_fits_csv(fits));
    written.push_back((dir / "fits.csv").string());
  }
  return written;
}

std::vector<ScalingPoint> read_scaling_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scaling_csv(buf.str());
}

}  // namespace unimixer
