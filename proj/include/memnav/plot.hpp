#pragma once

// Minimal SVG output for training curves, distance breakdowns and exploration graphs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memnav/error.hpp"

namespace memnav {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw MalformedLog("log has no column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }

  std::vector<double> numbers(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    for (const auto& r : rows) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(r[c], &used));
        if (used != r[c].size()) throw std::invalid_argument(r[c]);
      } catch (const std::exception&) {
        throw MalformedLog("non-numeric value '" + r[c] + "' in column " + name);
      }
    }
    return out;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Header plus at least one row; ragged rows are rejected.
inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) throw MalformedLog("row with " + std::to_string(cells.size()) + " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw MalformedLog("empty log");
  if (t.rows.empty()) throw MalformedLog("log has a header but no rows");
  return t;
}

struct Series {
  std::string name;
  std::vector<double> x, y;
};

namespace svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* color(std::size_t i) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return kPalette[i % 6];
}

constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (kH - kTop - kBottom); }
};

inline void open(std::ostringstream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kW) << "\" height=\"" << num(kH) << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(kW / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title) << "</text>\n";
}

inline void axes(std::ostringstream& o, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  o << "<g class=\"axes\" stroke=\"black\">\n";
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kH - kBottom) << "\" x2=\"" << num(kW - kRight) << "\" y2=\"" << num(kH - kBottom) << "\"/>\n";
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft) << "\" y2=\"" << num(kH - kBottom) << "\"/>\n";
  o << "</g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    o << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(f.py(yv) + 4) << "\" text-anchor=\"end\" font-size=\"11\">" << num(yv) << "</text>\n";
  }
  o << "<text x=\"" << num(kW / 2) << "\" y=\"" << num(kH - 12) << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(xlabel) << "</text>\n";
  o << "<text x=\"14\" y=\"" << num(kH / 2) << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 " << num(kH / 2) << ")\">" << escape(ylabel) << "</text>\n";
}

inline void legend(std::ostringstream& o, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 14.0 * static_cast<double>(i);
    o << "<rect x=\"" << num(kW - kRight - 130) << "\" y=\"" << num(y) << "\" width=\"10\" height=\"10\" fill=\"" << color(i) << "\"/>\n";
    o << "<text x=\"" << num(kW - kRight - 115) << "\" y=\"" << num(y + 9) << "\" font-size=\"11\">" << escape(names[i]) << "</text>\n";
  }
}

}  // namespace svg

inline std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<Series>& series) {
  svg::Frame f{0, 1, 0, 1};
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) f = {s.x[i], s.x[i], std::min(0.0, s.y[i]), s.y[i]};
      first = false;
      f.x0 = std::min(f.x0, s.x[i]);
      f.x1 = std::max(f.x1, s.x[i]);
      f.y0 = std::min(f.y0, s.y[i]);
      f.y1 = std::max(f.y1, s.y[i]);
    }
  }
  std::ostringstream o;
  svg::open(o, title);
  svg::axes(o, f, xlabel, ylabel);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    names.push_back(s.name);
    o << "<polyline class=\"series\" fill=\"none\" stroke=\"" << svg::color(k) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << svg::num(f.px(s.x[i])) << ',' << svg::num(f.py(s.y[i]));
    o << "\"/>\n";
  }
  svg::legend(o, names);
  o << "</svg>\n";
  return o.str();
}

struct BarGroup {
  std::string label;
  std::vector<double> values;  // one per series
};

inline std::string bar_plot_svg(const std::string& title, const std::string& ylabel, const std::vector<std::string>& names,
                                const std::vector<BarGroup>& groups) {
  double ymax = 1e-9;
  for (const auto& g : groups)
    for (double v : g.values) ymax = std::max(ymax, v);
  const svg::Frame f{0, 1, 0, ymax};
  std::ostringstream o;
  svg::open(o, title);
  svg::axes(o, f, "shortest distance to goal (cells)", ylabel);
  const double span = svg::kW - svg::kLeft - svg::kRight;
  const double slot = groups.empty() ? span : span / static_cast<double>(groups.size());
  const double bar = slot * 0.8 / static_cast<double>(std::max<std::size_t>(1, names.size()));
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const double x0 = svg::kLeft + slot * static_cast<double>(gi) + slot * 0.1;
    for (std::size_t k = 0; k < groups[gi].values.size(); ++k) {
      const double y = f.py(groups[gi].values[k]);
      o << "<rect class=\"bar\" x=\"" << svg::num(x0 + bar * static_cast<double>(k)) << "\" y=\"" << svg::num(y) << "\" width=\"" << svg::num(bar)
        << "\" height=\"" << svg::num(svg::kH - svg::kBottom - y) << "\" fill=\"" << svg::color(k) << "\"/>\n";
    }
    o << "<text x=\"" << svg::num(x0 + slot * 0.4) << "\" y=\"" << svg::num(svg::kH - svg::kBottom + 14) << "\" text-anchor=\"middle\" font-size=\"11\">"
      << svg::escape(groups[gi].label) << "</text>\n";
  }
  svg::legend(o, names);
  o << "</svg>\n";
  return o.str();
}

struct GraphDump {
  std::map<int, std::array<int, 3>> poses;  // entry index -> x, y, heading
  std::vector<int> entries;
  std::vector<std::pair<int, int>> edges;
};

inline GraphDump read_graph_dump(std::istream& in) {
  GraphDump g;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("type")) throw MalformedLog("graph dump line " + std::to_string(lineno) + " is not a record");
    try {
      const std::string type = rec.at("type").get<std::string>();
      if (type == "entry") {
        const int idx = rec.at("index").get<int>();
        g.entries.push_back(idx);
        if (rec.contains("pose")) g.poses[idx] = rec.at("pose").get<std::array<int, 3>>();
      } else if (type == "edge") {
        g.edges.emplace_back(rec.at("from").get<int>(), rec.at("to").get<int>());
      } else {
        throw MalformedLog("graph dump line " + std::to_string(lineno) + " has unknown type " + type);
      }
    } catch (const nlohmann::json::exception& e) {
      throw MalformedLog("graph dump line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (g.entries.empty()) throw MalformedLog("graph dump has no entries");
  return g;
}

// Nodes at their logged poses (display only); entries without a pose go on a circle.
inline std::string graph_svg(const std::string& title, const GraphDump& g) {
  std::map<int, std::pair<double, double>> at;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& [i, p] : g.poses) {
    const double x = p[0], y = p[1];
    if (first) x0 = x1 = x, y0 = y1 = y;
    first = false;
    x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  const double n = static_cast<double>(g.entries.size());
  for (std::size_t k = 0; k < g.entries.size(); ++k) {
    const int i = g.entries[k];
    if (auto it = g.poses.find(i); it != g.poses.end()) {
      at[i] = {it->second[0], it->second[1]};
    } else {
      const double a = 2.0 * M_PI * static_cast<double>(k) / n;
      at[i] = {(x0 + x1) / 2 + (x1 - x0 + 1) / 2 * std::cos(a), (y0 + y1) / 2 + (y1 - y0 + 1) / 2 * std::sin(a)};
    }
  }
  for (const auto& [i, p] : at) x0 = std::min(x0, p.first), x1 = std::max(x1, p.first), y0 = std::min(y0, p.second), y1 = std::max(y1, p.second);
  const svg::Frame f{x0 - 0.5, x1 + 0.5, y0 - 0.5, y1 + 0.5};
  // image rows grow downwards, like the map text
  auto py = [&](double y) { return svg::kTop + svg::kH - svg::kBottom - f.py(y); };
  std::ostringstream o;
  svg::open(o, title);
  o << "<g class=\"edges\" stroke=\"#888888\" stroke-width=\"1\">\n";
  for (auto [a, b] : g.edges) {
    if (!at.count(a) || !at.count(b)) throw MalformedLog("graph edge refers to a missing entry");
    const auto pa = at[a], pb = at[b];
    o << "<line class=\"edge\" x1=\"" << svg::num(f.px(pa.first)) << "\" y1=\"" << svg::num(py(pa.second)) << "\" x2=\"" << svg::num(f.px(pb.first))
      << "\" y2=\"" << svg::num(py(pb.second)) << "\"/>\n";
  }
  o << "</g>\n<g class=\"nodes\">\n";
  for (const auto& [i, p] : at) {
    o << "<circle class=\"node\" cx=\"" << svg::num(f.px(p.first)) << "\" cy=\"" << svg::num(py(p.second)) << "\" r=\"4\" fill=\"#1f77b4\"><title>" << i
      << "</title></circle>\n";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

}  // namespace memnav
