#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "mcpradar/error.hpp"
#include "mcpradar/metrics.hpp"
#include "mcpradar/task.hpp"

namespace mcpradar {

inline constexpr std::size_t kAxisCount = 5;
inline constexpr std::array<std::string_view, kAxisCount> kAxisNames = {"RA", "DTSR", "FEP", "CRE", "RTE"};
inline constexpr std::string_view kReportSchemaVersion = "1";

/// Five normalized values per model, axis order RA, DTSR, FEP, CRE, RTE.
struct RadarAxes {
  std::string domain_label;
  std::vector<std::string> models;
  std::vector<std::array<double, kAxisCount>> values;
  std::vector<std::string> notes;  // e.g. zero raw values that were clamped
};

/// RA/DTSR/FEP pass through. Raw CRE/RTE are mapped to min/value over the
/// models, so the cheapest or fastest model scores 1. A raw value of 0 is
/// treated as the minimum and noted.
inline RadarAxes normalize_axes(std::span<const RunMetrics> models, std::string domain_label) {
  if (models.empty()) throw Error(ErrorCode::InvalidArgument, "normalize_axes needs at least one model");
  RadarAxes axes;
  axes.domain_label = std::move(domain_label);

  auto positive_min = [&](auto field) -> std::optional<double> {
    std::optional<double> best;
    for (const auto& m : models) {
      double v = m.*field;
      if (v > 0.0 && (!best || v < *best)) best = v;
    }
    return best;
  };
  const auto cre_min = positive_min(&RunMetrics::cre_raw);
  const auto rte_min = positive_min(&RunMetrics::rte_raw);

  auto scale = [&](const RunMetrics& m, double v, std::optional<double> min, std::string_view axis) {
    if (!(v > 0.0) || !min) {
      axes.notes.push_back(fmt::format("{}: {} raw value {} treated as the minimum", m.model, axis, v));
      return 1.0;
    }
    return std::clamp(*min / v, 0.0, 1.0);
  };
  auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };

  for (const auto& m : models) {
    axes.models.push_back(m.model);
    axes.values.push_back({unit(m.ra), unit(m.dtsr), unit(m.fep), scale(m, m.cre_raw, cre_min, "CRE"),
                           scale(m, m.rte_raw, rte_min, "RTE")});
  }
  return axes;
}

// ---------------------------------------------------------------------------
// SVG

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string slug(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    else if (!out.empty() && out.back() != '-') out.push_back('-');
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "x" : out;
}

inline constexpr std::array<std::string_view, 10> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                              "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace detail

struct RadarGeometry {
  double width = 640;
  double height = 560;
  double cx = 260;
  double cy = 290;
  double radius = 200;
  int rings = 5;
};

/// Vertex of `value` on axis `axis`; axis 0 points up, the rest follow
/// clockwise.
inline std::pair<double, double> radar_point(const RadarGeometry& g, std::size_t axis, double value) {
  constexpr double kPi = 3.14159265358979323846;
  double theta = -kPi / 2 + 2 * kPi * static_cast<double>(axis) / static_cast<double>(kAxisCount);
  return {g.cx + g.radius * value * std::cos(theta), g.cy + g.radius * value * std::sin(theta)};
}

/// Deterministic for identical input: no timestamps, IDs derived from the
/// domain label and series index, coordinates printed with two decimals.
inline std::string render_radar_svg(const RadarAxes& axes, const RadarGeometry& g = {}) {
  auto num = [](double v) {
    auto s = fmt::format("{:.2f}", v);
    return s == "-0.00" ? std::string("0.00") : s;
  };
  const std::string id = "radar-" + detail::slug(axes.domain_label);
  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" id=\"{}\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n", id,
      num(g.width), num(g.height), num(g.width), num(g.height));
  svg += fmt::format("  <rect width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n", num(g.width), num(g.height));
  svg += fmt::format(
      "  <text x=\"{}\" y=\"32.00\" font-family=\"sans-serif\" font-size=\"18\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>\n",
      num(g.cx), detail::xml_escape(axes.domain_label));

  svg += fmt::format("  <g id=\"{}-grid\" fill=\"none\" stroke=\"#cccccc\" stroke-width=\"1\">\n", id);
  for (int ring = 1; ring <= g.rings; ++ring) {
    double level = static_cast<double>(ring) / g.rings;
    std::string pts;
    for (std::size_t a = 0; a < kAxisCount; ++a) {
      auto [x, y] = radar_point(g, a, level);
      if (!pts.empty()) pts += ' ';
      pts += num(x) + "," + num(y);
    }
    svg += fmt::format("    <polygon points=\"{}\"/>\n", pts);
  }
  for (std::size_t a = 0; a < kAxisCount; ++a) {
    auto [x, y] = radar_point(g, a, 1.0);
    svg += fmt::format("    <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>\n", num(g.cx), num(g.cy), num(x), num(y));
  }
  svg += "  </g>\n";

  svg += fmt::format("  <g id=\"{}-labels\" font-family=\"sans-serif\" font-size=\"14\">\n", id);
  for (std::size_t a = 0; a < kAxisCount; ++a) {
    auto [x, y] = radar_point(g, a, 1.12);
    const char* anchor = std::fabs(x - g.cx) < 1.0 ? "middle" : (x > g.cx ? "start" : "end");
    svg += fmt::format("    <text x=\"{}\" y=\"{}\" text-anchor=\"{}\" dominant-baseline=\"middle\">{}</text>\n", num(x), num(y),
                       anchor, kAxisNames[a]);
  }
  svg += "  </g>\n";

  svg += fmt::format("  <g id=\"{}-series\">\n", id);
  for (std::size_t m = 0; m < axes.models.size(); ++m) {
    auto color = detail::kPalette[m % detail::kPalette.size()];
    std::string pts;
    for (std::size_t a = 0; a < kAxisCount; ++a) {
      auto [x, y] = radar_point(g, a, std::clamp(axes.values[m][a], 0.0, 1.0));
      if (!pts.empty()) pts += ' ';
      pts += num(x) + "," + num(y);
    }
    svg += fmt::format(
        "    <polygon id=\"{}-series-{}\" data-model=\"{}\" points=\"{}\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"{}\" "
        "stroke-width=\"2\"/>\n",
        id, m, detail::xml_escape(axes.models[m]), pts, color, color);
  }
  svg += "  </g>\n";

  svg += fmt::format("  <g id=\"{}-legend\" font-family=\"sans-serif\" font-size=\"13\">\n", id);
  const double lx = g.cx + g.radius + 70;
  for (std::size_t m = 0; m < axes.models.size(); ++m) {
    auto color = detail::kPalette[m % detail::kPalette.size()];
    double ly = 70 + 22.0 * static_cast<double>(m);
    svg += fmt::format("    <rect x=\"{}\" y=\"{}\" width=\"14.00\" height=\"14.00\" fill=\"{}\"/>\n", num(lx), num(ly), color);
    svg += fmt::format("    <text x=\"{}\" y=\"{}\">{}</text>\n", num(lx + 20), num(ly + 12), detail::xml_escape(axes.models[m]));
  }
  svg += "  </g>\n";
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Tables

struct TableRow {
  RunMetrics metrics;  // already report-rounded
  std::vector<std::string> best;  // metric keys where this row is (jointly) best
};

struct DomainTable {
  Domain domain = Domain::Math;
  std::vector<TableRow> rows;
  bool has_ratios = false;
};

struct ReportBundle {
  std::vector<DomainTable> tables;
  std::string markdown;
  Json json;
  std::map<Domain, std::string> svgs;
  std::map<Domain, RadarAxes> radar;
};

namespace detail {

struct MetricColumn {
  std::string_view key;
  std::string_view header;
  bool higher_is_better;
  int decimals;
  std::optional<double> (*get)(const RunMetrics&);
};

inline const std::vector<MetricColumn>& metric_columns(bool with_ratios) {
  static const std::vector<MetricColumn> base = {
      {"ra", "RA↑", true, 2, [](const RunMetrics& m) -> std::optional<double> { return m.ra; }},
      {"dtsr", "DTSR↑", true, 2, [](const RunMetrics& m) -> std::optional<double> { return m.dtsr; }},
      {"fep", "FEP↑", true, 2, [](const RunMetrics& m) -> std::optional<double> { return m.fep; }},
      {"cre", "CRE↓", false, 0, [](const RunMetrics& m) -> std::optional<double> { return m.cre_raw; }},
      {"rte", "RTE↓", false, 0, [](const RunMetrics& m) -> std::optional<double> { return m.rte_raw; }},
  };
  static const std::vector<MetricColumn> with = [] {
    auto v = base;
    v.push_back({"cre_ratio", "CRE ratio↑", true, 2, [](const RunMetrics& m) { return m.cre_ratio; }});
    v.push_back({"rte_ratio", "RTE ratio↑", true, 2, [](const RunMetrics& m) { return m.rte_ratio; }});
    return v;
  }();
  return with_ratios ? with : base;
}

inline std::string format_cell(double v, int decimals) {
  if (decimals == 0) return fmt::format("{:.0f}", round_half_away(v, 0));
  return fmt::format("{:.{}f}", round_half_away(v, decimals), decimals);
}

}  // namespace detail

/// Groups rows by domain (Math, Coding, General order; models in input
/// order) and marks the best cell of every column. Ties mark every tied cell.
inline std::vector<DomainTable> build_tables(std::span<const RunMetrics> cells) {
  std::vector<DomainTable> tables;
  for (Domain d : kAllDomains) {
    DomainTable t;
    t.domain = d;
    for (const auto& c : cells) {
      if (c.domain == d) t.rows.push_back({round_for_report(c), {}});
    }
    if (t.rows.empty()) continue;
    t.has_ratios = std::all_of(t.rows.begin(), t.rows.end(),
                               [](const TableRow& r) { return r.metrics.cre_ratio.has_value() && r.metrics.rte_ratio.has_value(); });
    for (const auto& col : detail::metric_columns(t.has_ratios)) {
      std::optional<double> best;
      for (const auto& r : t.rows) {
        auto v = col.get(r.metrics);
        if (!v) continue;
        double rv = round_half_away(*v, col.decimals);
        if (!best || (col.higher_is_better ? rv > *best : rv < *best)) best = rv;
      }
      if (!best) continue;
      for (auto& r : t.rows) {
        auto v = col.get(r.metrics);
        if (v && round_half_away(*v, col.decimals) == *best) r.best.emplace_back(col.key);
      }
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

inline std::string domain_title(Domain d) {
  switch (d) {
    case Domain::Math: return "Math";
    case Domain::Coding: return "Coding";
    case Domain::General: return "General";
  }
  return "General";
}

/// GFM tables, one per domain. Best cells are bold.
inline std::string render_markdown(std::span<const DomainTable> tables) {
  std::string md = "# Model performance by domain\n";
  for (const auto& t : tables) {
    const auto& cols = detail::metric_columns(t.has_ratios);
    md += fmt::format("\n## {}\n\n| Model |", domain_title(t.domain));
    for (const auto& c : cols) md += fmt::format(" {} |", c.header);
    md += "\n|---|";
    for (std::size_t i = 0; i < cols.size(); ++i) md += "---:|";
    md += "\n";
    for (const auto& r : t.rows) {
      md += fmt::format("| {} |", r.metrics.model);
      for (const auto& c : cols) {
        auto v = c.get(r.metrics);
        std::string cell = v ? detail::format_cell(*v, c.decimals) : "-";
        bool best = std::find(r.best.begin(), r.best.end(), c.key) != r.best.end();
        md += best ? fmt::format(" **{}** |", cell) : fmt::format(" {} |", cell);
      }
      md += "\n";
    }
  }
  return md;
}

inline Json render_json(std::span<const DomainTable> tables, const std::map<Domain, RadarAxes>& radar) {
  Json root;
  root["schema_version"] = std::string(kReportSchemaVersion);
  Json domains = Json::array();
  for (const auto& t : tables) {
    Json d;
    d["domain"] = std::string(to_string(t.domain));
    Json rows = Json::array();
    for (const auto& r : t.rows) {
      Json row = run_metrics_to_json(r.metrics);
      row.erase("domain");
      row["best"] = r.best;
      rows.push_back(std::move(row));
    }
    d["rows"] = std::move(rows);
    if (auto it = radar.find(t.domain); it != radar.end()) {
      Json axes = Json::object();
      for (std::size_t m = 0; m < it->second.models.size(); ++m) {
        Json v = Json::array();
        for (double x : it->second.values[m]) v.push_back(x);
        axes[it->second.models[m]] = std::move(v);
      }
      d["radar_axes"] = {{"order", std::vector<std::string>(kAxisNames.begin(), kAxisNames.end())}, {"values", std::move(axes)}};
    }
    domains.push_back(std::move(d));
  }
  root["domains"] = std::move(domains);
  return root;
}

/// Tables, JSON and one radar chart per domain from averaged metrics.
inline ReportBundle build_report(std::span<const RunMetrics> cells) {
  ReportBundle b;
  b.tables = build_tables(cells);
  for (const auto& t : b.tables) {
    std::vector<RunMetrics> ms;
    for (const auto& r : t.rows) ms.push_back(r.metrics);
    auto axes = normalize_axes(ms, domain_title(t.domain));
    b.svgs[t.domain] = render_radar_svg(axes);
    b.radar.emplace(t.domain, std::move(axes));
  }
  b.markdown = render_markdown(b.tables);
  b.json = render_json(b.tables, b.radar);
  return b;
}

inline void write_report(const std::filesystem::path& dir, const ReportBundle& b) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::filesystem::path& p, std::string_view content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", p.string()));
  };
  write(dir / "report.md", b.markdown);
  write(dir / "report.json", b.json.dump(2) + "\n");
  for (const auto& [d, svg] : b.svgs) write(dir / fmt::format("radar-{}.svg", to_string(d)), svg);
}

}  // namespace mcpradar
