#pragma once

// Static SVG plots and a markdown summary from run directories.
//
// A run directory holds trace.csv and summary.txt (from `train`), or
// summary.csv and summary.txt (from `sweep`).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bcpkd/analysis.hpp"
#include "bcpkd/error.hpp"
#include "bcpkd/experiment.hpp"
#include "bcpkd/training.hpp"

namespace bcpkd {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct Plot {
  std::string title, xlabel, ylabel;
  std::vector<Series> lines;    // polylines
  std::vector<Series> scatter;  // circles
  std::optional<double> reference;  // horizontal reference line
  std::string reference_label;
  std::string annotation;
  bool log_x = false;
};

namespace svg {

inline std::string num(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

inline std::string tick(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return palette[i % 8];
}

}  // namespace svg

// Axes: x spans the data range, y spans data and reference padded by 5%.
inline std::string render_svg(const Plot& plot) {
  const double W = 720, H = 440, left = 80, right = 180, top = 40, bottom = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto tx = [&](double x) { return plot.log_x ? std::log10(x) : x; };
  auto extend = [&](const Series& s) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || !std::isfinite(tx(s.x[i]))) continue;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  };
  for (const auto& s : plot.lines) extend(s);
  for (const auto& s : plot.scatter) extend(s);
  if (plot.reference) {
    y0 = std::min(y0, *plot.reference);
    y1 = std::max(y1, *plot.reference);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << svg::escape(plot.title) << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
    const double xv = plot.log_x ? std::pow(10.0, fx) : fx;
    os << "<text x=\"" << svg::num(left + pw * i / 4.0) << "\" y=\"" << svg::num(top + ph + 18)
       << "\" text-anchor=\"middle\">" << svg::tick(xv) << "</text>\n";
    os << "<text x=\"" << svg::num(left - 6) << "\" y=\"" << svg::num(py(fy) + 4)
       << "\" text-anchor=\"end\">" << svg::tick(fy) << "</text>\n";
  }
  os << "<text x=\"" << svg::num(left + pw / 2) << "\" y=\"" << svg::num(H - 18)
     << "\" text-anchor=\"middle\">" << svg::escape(plot.xlabel) << "</text>\n";
  os << "<text x=\"18\" y=\"" << svg::num(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << svg::num(top + ph / 2) << ")\">" << svg::escape(plot.ylabel) << "</text>\n";

  std::size_t legend = 0;
  auto legend_entry = [&](const std::string& label, const std::string& col, bool dashed) {
    const double ly = top + 14 + 18 * static_cast<double>(legend++);
    os << "<line x1=\"" << svg::num(W - right + 10) << "\" y1=\"" << svg::num(ly) << "\" x2=\""
       << svg::num(W - right + 34) << "\" y2=\"" << svg::num(ly) << "\" stroke=\"" << col
       << "\" stroke-width=\"2\"" << (dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
    os << "<text x=\"" << svg::num(W - right + 40) << "\" y=\"" << svg::num(ly + 4) << "\">"
       << svg::escape(label) << "</text>\n";
  };

  std::size_t c = 0;
  for (const auto& s : plot.lines) {
    os << "<polyline class=\"series\" fill=\"none\" stroke=\"" << svg::color(c)
       << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      os << (first ? "" : " ") << svg::num(px(s.x[i])) << ',' << svg::num(py(s.y[i]));
      first = false;
    }
    os << "\"/>\n";
    legend_entry(s.label, svg::color(c++), false);
  }
  for (const auto& s : plot.scatter) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      os << "<circle cx=\"" << svg::num(px(s.x[i])) << "\" cy=\"" << svg::num(py(s.y[i]))
         << "\" r=\"4\" fill=\"" << svg::color(c) << "\"/>\n";
    }
    legend_entry(s.label, svg::color(c++), false);
  }
  if (plot.reference) {
    os << "<line class=\"reference\" x1=\"" << svg::num(left) << "\" y1=\"" << svg::num(py(*plot.reference))
       << "\" x2=\"" << svg::num(left + pw) << "\" y2=\"" << svg::num(py(*plot.reference))
       << "\" stroke=\"black\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n";
    legend_entry(plot.reference_label, "black", true);
  }
  if (!plot.annotation.empty())
    os << "<text x=\"" << svg::num(left + 10) << "\" y=\"" << svg::num(top + 18) << "\">"
       << svg::escape(plot.annotation) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

inline void save_svg(const std::filesystem::path& path, const Plot& plot) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << render_svg(plot);
}

struct SweepTable {
  std::string parameter;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IoError("sweep CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline SweepTable load_sweep_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  SweepTable t;
  std::string line, cell;
  if (!std::getline(is, line)) throw IoError(path + ": empty sweep CSV");
  std::istringstream hs(line);
  while (std::getline(hs, cell, ',')) t.header.push_back(cell);
  if (t.header.size() < 10 || t.header[0] != "epsilon" || t.header[9].rfind("sweep_", 0) != 0)
    throw IoError(path + ": not a sweep CSV");
  t.parameter = t.header[9].substr(6);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream rs(line);
    std::vector<double> row;
    while (std::getline(rs, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() != t.header.size()) throw IoError(path + ": ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

struct ReportResult {
  std::vector<std::string> files;
  std::vector<std::pair<std::string, InverseEpsFit>> fits;  // per epsilon sweep
  std::size_t traces = 0;
};

inline ReportResult write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (run_dirs.empty()) throw InvalidParameter("report: no run directories given");
  fs::create_directories(out_dir);

  Plot curves{"Generalization error", "iteration", "test cross-entropy (nats)", {}, {}, {}, "", "", false};
  Plot acc{"Test accuracy", "iteration", "accuracy", {}, {}, {}, "", "", false};
  std::ostringstream sweeps;
  ReportResult result;
  std::vector<std::string> trace_rows;

  for (const auto& dir : run_dirs) {
    const fs::path d(dir);
    const auto name = d.filename().empty() ? d.parent_path().filename().string() : d.filename().string();
    std::map<std::string, std::string> info;
    if (fs::exists(d / "summary.txt")) info = read_key_values((d / "summary.txt").string());
    if (fs::exists(d / "trace.csv")) {
      const auto trace = load_trace_csv((d / "trace.csv").string());
      Series gen{name, {}, {}}, ac{name, {}, {}};
      for (const auto& r : trace.rows) {
        gen.x.push_back(static_cast<double>(r.iteration));
        gen.y.push_back(r.gen_error);
        ac.x.push_back(static_cast<double>(r.iteration));
        ac.y.push_back(r.accuracy);
      }
      curves.lines.push_back(std::move(gen));
      acc.lines.push_back(std::move(ac));
      if (!curves.reference && info.count("bayes_risk")) {
        curves.reference = std::strtod(info["bayes_risk"].c_str(), nullptr);
        curves.reference_label = "Bayes risk";
      }
      std::ostringstream row;
      row << "| " << name << " | " << info["supervision"] << " | "
          << format_double(trace.rows.back().gen_error) << " | " << format_double(trace.rows.back().accuracy)
          << " | " << (info.count("avg_gap") ? info["avg_gap"] : "") << " |";
      trace_rows.push_back(row.str());
      ++result.traces;
    } else if (fs::exists(d / "summary.csv")) {
      const auto table = load_sweep_csv((d / "summary.csv").string());
      sweeps << "## Sweep `" << name << "` over " << table.parameter << "\n\n";
      sweeps << "| " << table.parameter << " | avg_gap | avg_gap std | L_avg | ACC_avg | sigma_L |\n|---|---|---|---|---|---|\n";
      const auto iv = table.column("sweep_" + table.parameter), ig = table.column("avg_gap"),
                 igs = table.column("avg_gap_std"), il = table.column("L_avg"),
                 ia = table.column("ACC_avg"), is = table.column("sigma_L");
      for (const auto& r : table.rows)
        sweeps << "| " << format_double(r[iv]) << " | " << format_double(r[ig]) << " | " << format_double(r[igs])
           << " | " << format_double(r[il]) << " | " << format_double(r[ia]) << " | " << format_double(r[is])
           << " |\n";
      sweeps << "\n";
      if (table.parameter == "epsilon") {
        std::vector<EpsPoint> pts;
        for (const auto& r : table.rows)
          if (std::isfinite(r[ig])) pts.push_back({r[table.column("epsilon")], r[ig]});
        if (pts.size() < 2) throw InvalidParameter("report: epsilon sweep needs two finished points");
        const auto fit = fit_inverse_eps(pts);
        result.fits.emplace_back(name, fit);
        Plot p{"avg_gap vs epsilon (" + name + ")", "epsilon", "avg_gap (nats)", {}, {}, {}, "", "", true};
        Series measured{"measured", {}, {}};
        for (const auto& pt : pts) {
          measured.x.push_back(pt.epsilon);
          measured.y.push_back(pt.metric);
        }
        Series fitted{"c/(1+eps)", {}, {}};
        const double lo = std::log10(pts.front().epsilon), hi = std::log10(pts.back().epsilon);
        for (int i = 0; i <= 100; ++i) {
          const double e = std::pow(10.0, lo + (hi - lo) * i / 100.0);
          fitted.x.push_back(e);
          fitted.y.push_back(fit.c / (1.0 + e));
        }
        p.scatter.push_back(std::move(measured));
        p.lines.push_back(std::move(fitted));
        p.annotation = "c = " + svg::tick(fit.c) + ", R^2 = " + svg::tick(fit.r_squared);
        const auto file = "epsilon_sweep_" + name + ".svg";
        save_svg(fs::path(out_dir) / file, p);
        result.files.push_back(file);
        sweeps << "Fit avg_gap = c / (1 + eps): c = " << format_double(fit.c)
           << ", R^2 = " << format_double(fit.r_squared) << "\n\n";
      }
    } else {
      throw IoError("report: " + dir + " has no trace.csv or summary.csv");
    }
  }

  if (result.traces > 0) {
    save_svg(fs::path(out_dir) / "learning_curves.svg", curves);
    save_svg(fs::path(out_dir) / "accuracy.svg", acc);
    result.files.insert(result.files.begin(), {"learning_curves.svg", "accuracy.svg"});
  }
  std::ostringstream md;
  md << "# Run report\n\n";
  if (result.traces > 0) {
    md << "## Runs\n\n| run | supervision | final gen_error | final accuracy | avg_gap |\n|---|---|---|---|---|\n";
    for (const auto& r : trace_rows) md << r << '\n';
    if (curves.reference) md << "\nBayes risk: " << format_double(*curves.reference) << "\n";
    md << "\n";
  }
  md << sweeps.str();
  md << "Figures: ";
  for (std::size_t i = 0; i < result.files.size(); ++i) md << (i ? ", " : "") << result.files[i];
  md << "\n";
  std::ofstream os(fs::path(out_dir) / "report.md");
  if (!os) throw IoError("cannot write report.md");
  os << md.str();
  result.files.push_back("report.md");
  return result;
}

}  // namespace bcpkd
