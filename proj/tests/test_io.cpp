#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "gfb/experiment.hpp"
#include "gfb/io.hpp"
#include "gfb/svg.hpp"

using namespace gfb;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "gfb_test_io";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  f << text;
}

// Checks tag nesting and a single root element; returns the root count.
int check_xml(const std::string& doc) {
  std::vector<std::string> stack;
  int roots = 0;
  std::size_t pos = 0;
  while ((pos = doc.find('<', pos)) != std::string::npos) {
    const auto end = doc.find('>', pos);
    if (end == std::string::npos) return -1;
    std::string tag = doc.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.empty() || tag[0] == '?' || tag[0] == '!') continue;
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return -1;
      stack.pop_back();
      continue;
    }
    const bool self_closing = tag.back() == '/';
    const std::string name = tag.substr(0, tag.find_first_of(" /"));
    if (stack.empty()) ++roots;
    if (!self_closing) stack.push_back(name);
  }
  return stack.empty() ? roots : -1;
}

std::size_t count_of(const std::string& doc, const std::string& needle) {
  std::size_t n = 0, pos = 0;
  while ((pos = doc.find(needle, pos)) != std::string::npos) ++n, pos += needle.size();
  return n;
}

}  // namespace

TEST(Csv, ParsesAndReportsLineNumbers) {
  const auto t = io::parse_csv("a,b\n1,2\n\n3,4\n");
  EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.column("b"), 1u);
  EXPECT_THROW(t.column("c"), FormatError);
  try {
    io::parse_csv("a,b\n1,2\n3\n", "f.csv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("f.csv:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(io::parse_csv("a,b\n"), FormatError);
  EXPECT_THROW(io::parse_csv(""), FormatError);
  const auto bad = io::parse_csv("a\nxyz\n");
  try {
    io::csv_number(bad, 0, 0, "g.csv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("g.csv:2"), std::string::npos);
  }
}

TEST(Csv, FloatFormattingRoundTrips) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> d(-1e6f, 1e6f);
  for (int i = 0; i < 1000; ++i) {
    const float v = d(rng) * std::pow(10.0f, static_cast<float>(i % 20 - 10));
    EXPECT_EQ(std::stof(io::format_float(v)), v);
  }
}

TEST(Csv, PointsRoundTrip) {
  Grid<float> g(3, 2, std::vector<float>{0.1f, -2.5f, 1e-7f, 3.0f, 123.456f, -0.0f});
  const auto p = scratch("points.csv").string();
  io::write_points_csv(p, g);
  EXPECT_EQ(io::read_points_csv(p), g);
}

TEST(Csv, WriterAppendsWithoutRepeatingHeader) {
  const auto p = scratch("append.csv").string();
  fs::remove(p);
  { io::CsvWriter w(p, {"a"}, true); w.write_row({"1"}); }
  { io::CsvWriter w(p, {"a"}, true); w.write_row({"2"}); }
  EXPECT_EQ(io::read_text(p), "a\n1\n2\n");
}

TEST(SignalFile, RoundTripWithSidecar) {
  io::SignalFile sf;
  sf.signals = Grid<float>(2, 3, std::vector<float>{0.5f, -0.25f, 1.0f, 0.0f, 0.125f, -1.0f});
  sf.fs = 8000.0;
  sf.condition_names = {"t60", "c50"};
  sf.conditions = Grid<float>(2, 2, std::vector<float>{0.3f, 5.0f, 0.6f, -2.0f});
  const auto p = scratch("sig.f32").string();
  io::write_signal_file(p, sf);
  EXPECT_EQ(fs::file_size(p), 24u);
  const auto back = io::read_signal_file(p);
  EXPECT_EQ(back.signals, sf.signals);
  EXPECT_EQ(back.fs, 8000.0);
  EXPECT_EQ(back.condition_names, sf.condition_names);
  EXPECT_EQ(back.conditions, sf.conditions);
  // Little-endian layout of the first sample (0.5f = 0x3F000000).
  const auto bytes = io::read_text(p);
  EXPECT_EQ(static_cast<unsigned char>(bytes[3]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 0x00u);

  write_file(p, "abc");
  EXPECT_THROW(io::read_signal_file(p), FormatError);
}

TEST(Svg, WellFormedAndEscaped) {
  svg::Chart c;
  c.title = "a<b & c>";
  svg::Series s;
  s.label = "\"q\"";
  s.x = {0, 1, 2};
  s.y = {1, 0, 1};
  c.series.push_back(s);
  const auto doc = svg::render(c);
  EXPECT_EQ(check_xml(doc), 1);
  EXPECT_NE(doc.find("a&lt;b &amp; c&gt;"), std::string::npos);
  EXPECT_EQ(check_xml(svg::render(svg::Chart{})), 1);
}

TEST(Plot, CurvatureOneModel) {
  const auto p = scratch("curv.csv");
  write_file(p, "model,step,tau,mean,p25,p75\nm,0,0,0.5,0.4,0.6\nm,1,0.5,0.3,0.2,0.4\n");
  const auto doc = experiment::render_plot({p.string()}, experiment::PlotKind::curvature);
  EXPECT_EQ(check_xml(doc), 1);
  EXPECT_EQ(count_of(doc, "<polyline"), 1u);
  EXPECT_EQ(count_of(doc, "<polygon"), 1u);
}

TEST(Plot, TradeoffAndScatter) {
  const auto t = scratch("tradeoff.csv");
  write_file(t, "model,task,n_c,gamma,count,w2,w2_baseline,cond_mae,disp_mean,disp_median\n"
                "a,cond_ring,8,1,10,0.1,0.1,0.2,0.5,0.4\nb,cond_ring,4,1,10,0.1,0.1,0.3,0.4,0.4\n");
  const auto doc = experiment::render_plot({t.string()}, experiment::PlotKind::tradeoff);
  EXPECT_EQ(check_xml(doc), 1);
  EXPECT_NE(doc.find("a (n_c=8)"), std::string::npos);
  EXPECT_EQ(count_of(doc, "<circle"), 2u);

  const auto s = scratch("pts.csv");
  write_file(s, "x0,x1\n0,0\n1,1\n2,0\n");
  EXPECT_EQ(count_of(experiment::render_plot({s.string()}, experiment::PlotKind::scatter2d),
                     "<circle"),
            3u);
}

TEST(Plot, MalformedInputs) {
  const auto bad = scratch("bad.csv");
  write_file(bad, "model,step,tau,mean,p25,p75\nm,0,zero,0.5,0.4,0.6\n");
  EXPECT_THROW(experiment::render_plot({bad.string()}, experiment::PlotKind::curvature),
               FormatError);
  const auto missing = scratch("missing.csv");
  write_file(missing, "model,tau\nm,0\n");
  EXPECT_THROW(experiment::render_plot({missing.string()}, experiment::PlotKind::curvature),
               FormatError);
  EXPECT_THROW(experiment::cmd_plot({}, experiment::PlotKind::curvature, "x.svg"),
               ValidationError);
  EXPECT_THROW(experiment::plot_kind_from_string("bars"), ValidationError);
}
