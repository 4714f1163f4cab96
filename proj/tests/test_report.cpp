#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <regex>

#include "support.hpp"

using namespace mcpradar;
using namespace testing_support;

namespace {

RunMetrics model(std::string name, double ra, double cre_raw, double rte_raw, Domain d = Domain::Math) {
  RunMetrics m;
  m.model = std::move(name);
  m.domain = d;
  m.ra = ra;
  m.dtsr = ra;
  m.fep = ra;
  m.cre_raw = cre_raw;
  m.rte_raw = rte_raw;
  return m;
}

std::vector<RunMetrics> averaged_reference() {
  auto r1 = load_table("run1"), r2 = load_table("run2"), r3 = load_table("run3");
  std::vector<RunMetrics> out;
  for (std::size_t i = 0; i < r1.size(); ++i) {
    std::vector<RunMetrics> runs = {to_metrics(r1[i]), to_metrics(r2[i]), to_metrics(r3[i])};
    out.push_back(average_runs(runs));
  }
  return out;
}

/// Points of the polygon with the given id attribute.
std::vector<std::pair<double, double>> polygon_points(const std::string& svg, const std::string& id) {
  std::regex re("id=\"" + id + "\"[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  if (!std::regex_search(svg, m, re)) return {};
  std::vector<std::pair<double, double>> pts;
  std::istringstream in(m[1].str());
  std::string tok;
  while (in >> tok) {
    auto comma = tok.find(',');
    pts.emplace_back(std::stod(tok.substr(0, comma)), std::stod(tok.substr(comma + 1)));
  }
  return pts;
}

}  // namespace

TEST(NormalizeAxes, SingleModelEfficiencyIsOne) {
  std::vector<RunMetrics> ms = {model("a", 0.5, 3000, 1200)};
  auto axes = normalize_axes(ms, "Math");
  EXPECT_EQ(axes.values[0][3], 1.0);
  EXPECT_EQ(axes.values[0][4], 1.0);
  EXPECT_TRUE(axes.notes.empty());
}

TEST(NormalizeAxes, MinOverValue) {
  std::vector<RunMetrics> ms = {model("fast", 0.5, 100, 2000), model("slow", 0.5, 100, 4000)};
  auto axes = normalize_axes(ms, "Math");
  EXPECT_EQ(axes.values[0][4], 1.0);
  EXPECT_EQ(axes.values[1][4], 0.5);
}

TEST(NormalizeAxes, RatesPassThrough) {
  std::vector<RunMetrics> ms = {model("g", 0.91, 100, 100), model("h", 0.2, 100, 100)};
  auto axes = normalize_axes(ms, "Math");
  EXPECT_EQ(axes.values[0][0], 0.91);
  EXPECT_EQ(axes.values[1][0], 0.2);
}

TEST(NormalizeAxes, ZeroRawIsNotedAndScoresOne) {
  std::vector<RunMetrics> ms = {model("z", 0.5, 0, 100), model("y", 0.5, 200, 100)};
  auto axes = normalize_axes(ms, "Math");
  EXPECT_EQ(axes.values[0][3], 1.0);
  EXPECT_EQ(axes.values[1][3], 1.0);
  EXPECT_EQ(axes.notes.size(), 1u);
  EXPECT_THROW(normalize_axes(std::span<const RunMetrics>{}, "x"), Error);
}

TEST(NormalizeAxes, ScaleInvariant) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> raw(1, 10000), rate(0, 1), k(0.001, 1000);
  for (int i = 0; i < 200; ++i) {
    std::vector<RunMetrics> ms;
    for (int j = 0, n = 1 + static_cast<int>(rng() % 7); j < n; ++j)
      ms.push_back(model(fmt::format("m{}", j), rate(rng), raw(rng), raw(rng)));
    auto scaled = ms;
    double kc = k(rng), kt = k(rng);
    for (auto& m : scaled) {
      m.cre_raw *= kc;
      m.rte_raw *= kt;
    }
    auto a = normalize_axes(ms, "x"), b = normalize_axes(scaled, "x");
    for (std::size_t j = 0; j < ms.size(); ++j) {
      EXPECT_NEAR(a.values[j][3], b.values[j][3], 1e-12);
      EXPECT_NEAR(a.values[j][4], b.values[j][4], 1e-12);
    }
  }
}

TEST(RadarSvg, FullScoresSitOnOuterRing) {
  RadarAxes axes{"Math", {"a"}, {{1, 1, 1, 1, 1}}, {}};
  RadarGeometry g;
  auto svg = render_radar_svg(axes, g);
  auto pts = polygon_points(svg, "radar-math-series-0");
  ASSERT_EQ(pts.size(), kAxisCount);
  for (const auto& [x, y] : pts) EXPECT_NEAR(std::hypot(x - g.cx, y - g.cy), g.radius, 0.01);
}

TEST(RadarSvg, ZeroAxisAtCenter) {
  RadarAxes axes{"Math", {"a"}, {{1, 0, 1, 1, 1}}, {}};
  RadarGeometry g;
  auto pts = polygon_points(render_radar_svg(axes, g), "radar-math-series-0");
  ASSERT_EQ(pts.size(), kAxisCount);
  EXPECT_NEAR(pts[1].first, g.cx, 0.005);
  EXPECT_NEAR(pts[1].second, g.cy, 0.005);
  EXPECT_NEAR(std::hypot(pts[0].first - g.cx, pts[0].second - g.cy), g.radius, 0.01);
}

TEST(RadarSvg, EscapesModelNames) {
  RadarAxes axes{"A&B", {"<m>"}, {{0.5, 0.5, 0.5, 0.5, 0.5}}, {}};
  auto svg = render_radar_svg(axes);
  EXPECT_EQ(svg.find("<m>"), std::string::npos);
  EXPECT_NE(svg.find("&lt;m&gt;"), std::string::npos);
  EXPECT_NE(svg.find("A&amp;B"), std::string::npos);
}

TEST(RadarSvg, ByteStable) {
  auto cells = averaged_reference();
  auto a = build_report(cells), b = build_report(cells);
  ASSERT_EQ(a.svgs.size(), 3u);
  for (const auto& [d, svg] : a.svgs) EXPECT_EQ(svg, b.svgs.at(d));
}

TEST(RadarSvg, MatchesCommittedGolden) {
  auto bundle = build_report(averaged_reference());
  for (const auto& [d, svg] : bundle.svgs) {
    auto path = data_dir() / "golden" / fmt::format("radar-{}.svg", to_string(d));
    if (std::getenv("MCPRADAR_UPDATE_GOLDEN")) write_file(path, svg);
    ASSERT_TRUE(fs::exists(path)) << path;
    EXPECT_EQ(svg, read_file(path)) << path;
  }
}

TEST(Tables, ClaudeMathRow) {
  auto tables = build_tables(averaged_reference());
  ASSERT_EQ(tables.size(), 3u);
  EXPECT_EQ(tables[0].domain, Domain::Math);
  auto md = render_markdown(tables);
  EXPECT_NE(md.find("| Claude 3.7 | 0.89 | 0.95 | 0.93 | 5925 | 6441 |"), std::string::npos) << md;
}

TEST(Tables, SingleModelBestEverywhere) {
  std::vector<RunMetrics> ms = {model("solo", 0.3, 10, 20)};
  auto t = build_tables(ms);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].rows[0].best, (std::vector<std::string>{"ra", "dtsr", "fep", "cre", "rte"}));
}

TEST(Tables, TiesFlagAll) {
  std::vector<RunMetrics> ms = {model("a", 0.5, 10, 20), model("b", 0.5, 11, 20), model("c", 0.4, 10, 30)};
  auto t = build_tables(ms);
  auto has = [&](std::size_t row, const std::string& k) {
    const auto& b = t[0].rows[row].best;
    return std::find(b.begin(), b.end(), k) != b.end();
  };
  EXPECT_TRUE(has(0, "ra"));
  EXPECT_TRUE(has(1, "ra"));
  EXPECT_FALSE(has(2, "ra"));
  EXPECT_TRUE(has(0, "cre"));
  EXPECT_TRUE(has(2, "cre"));
  EXPECT_TRUE(has(0, "rte"));
  EXPECT_TRUE(has(1, "rte"));
}

TEST(Tables, BestCellsMatchReferenceHighlights) {
  auto avg = load_table("averaged");
  auto tables = build_tables(averaged_reference());
  std::size_t checked = 0;
  for (const auto& t : tables) {
    for (const auto& row : t.rows) {
      auto it = std::find_if(avg.begin(), avg.end(), [&](const TableCell& c) { return c.domain == t.domain && c.model == row.metrics.model; });
      ASSERT_NE(it, avg.end());
      auto want = it->highlighted;
      auto got = row.best;
      std::sort(want.begin(), want.end());
      std::sort(got.begin(), got.end());
      EXPECT_EQ(got, want) << row.metrics.model << " / " << to_string(t.domain);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 21u);
}

TEST(Tables, RatioColumnsOnlyWhenAllRowsHaveThem) {
  auto a = model("a", 0.5, 10, 20), b = model("b", 0.5, 20, 40);
  std::vector<RunMetrics> without = {a, b};
  EXPECT_FALSE(build_tables(without)[0].has_ratios);
  a.cre_ratio = 1.0;
  a.rte_ratio = 1.0;
  b.cre_ratio = 0.5;
  b.rte_ratio = 0.5;
  std::vector<RunMetrics> with = {a, b};
  auto t = build_tables(with);
  EXPECT_TRUE(t[0].has_ratios);
  EXPECT_NE(render_markdown(t).find("CRE ratio"), std::string::npos);
}

TEST(Report, WritesFiles) {
  TempDir dir;
  auto bundle = build_report(averaged_reference());
  write_report(dir.path(), bundle);
  EXPECT_TRUE(fs::exists(dir / "report.md"));
  EXPECT_TRUE(fs::exists(dir / "report.json"));
  for (auto d : kAllDomains) EXPECT_TRUE(fs::exists(dir / fmt::format("radar-{}.svg", to_string(d))));
  auto j = Json::parse(read_file(dir / "report.json"));
  EXPECT_EQ(j["domains"].size(), 3u);
  EXPECT_EQ(j["domains"][0]["rows"].size(), 7u);
}
