#include <cstdio>
#include <sstream>

#include "dcn/plotdata.hpp"
#include "doctest.h"

using namespace dcn;

TEST_CASE("plot data round-trips through the text format") {
  PlotData data;
  PlotSection& a = data.add("contour", {"x", "y", "z"});
  a.values.resize(2, 3);
  a.values << 0.1, -3.0, 1e-300, 2.5e17, -0.0, 42.0;
  PlotSection& b = data.add("arrow");
  b.values.resize(1, 2);
  b.values << 1.0 / 3.0, -7.25;

  std::stringstream ss;
  write_plot_data(ss, data);
  PlotData back = read_plot_data(ss);

  REQUIRE(back.sections.size() == 2);
  CHECK(back.sections[0].name == "contour");
  CHECK(back.sections[0].columns == std::vector<std::string>{"x", "y", "z"});
  CHECK(back.sections[0].values == a.values);  // %.17g is lossless
  CHECK(back.sections[1].name == "arrow");
  CHECK(back.sections[1].columns.empty());
  CHECK(back.sections[1].values == b.values);

  CHECK(back.find("arrow") == &back.sections[1]);
  CHECK(back.find("nope") == nullptr);
}

TEST_CASE("plot data reader rejects malformed input") {
  {
    std::stringstream ss("1.0 2.0\n");
    CHECK_THROWS_WITH_AS(read_plot_data(ss), doctest::Contains("before any"),
                         std::runtime_error);
  }
  {
    std::stringstream ss("# section s\n1.0 2.0\n3.0\n");
    CHECK_THROWS_WITH_AS(read_plot_data(ss), doctest::Contains("ragged"),
                         std::runtime_error);
  }
  {
    std::stringstream ss("# section s\n1.0 oops\n");
    CHECK_THROWS_WITH_AS(read_plot_data(ss), doctest::Contains("non-numeric"),
                         std::runtime_error);
  }
  {
    // Blank lines and stray comments are fine; empty sections too.
    std::stringstream ss("# section a\n\n# a note\n# section b\n1 2\n");
    PlotData d = read_plot_data(ss);
    REQUIRE(d.sections.size() == 2);
    CHECK(d.sections[0].values.rows() == 0);
    CHECK(d.sections[1].values.rows() == 1);
  }
}

TEST_CASE("plot data file helpers") {
  const char* path = "plotdata_roundtrip.txt";
  PlotData data;
  PlotSection& s = data.add("s", {"v"});
  s.values.resize(3, 1);
  s.values << 1.0, 2.0, 3.0;
  write_plot_data(path, data);
  PlotData back = read_plot_data(std::string(path));
  CHECK(back.sections[0].values == s.values);
  std::remove(path);

  CHECK_THROWS_AS(read_plot_data(std::string("no_such_plot_file.txt")),
                  std::runtime_error);
}
