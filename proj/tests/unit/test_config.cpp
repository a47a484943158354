#include <doctest.h>

#include <cmath>
#include <sstream>

#include "drnet/config.hpp"
#include "drnet/svg.hpp"
#include "drnet/tensor.hpp"
#include "../support/oracles.hpp"

using namespace drnet;

TEST_SUITE("config") {
  TEST_CASE("parse, typed access and errors") {
    std::istringstream is("# comment\n steps = 40 \nlr=0.5 # trailing\nflags = true\nlist = 1, 2,3\n\n");
    const KeyValues kv = KeyValues::parse(is);
    CHECK(kv.get_int("steps", 0) == 40);
    CHECK(kv.get_double("lr", 0) == 0.5);
    CHECK(kv.get_bool("flags", false));
    CHECK(kv.get_int_list("list", {}) == std::vector<int>{1, 2, 3});
    CHECK(kv.get_int("missing", 7) == 7);
    CHECK_THROWS_AS(kv.get("missing"), Error);
    CHECK_THROWS_AS(kv.get_int("lr", 0), Error);
    CHECK_THROWS_AS(kv.get_bool("steps", false), Error);
    std::istringstream bad("steps 40\n");
    try {
      KeyValues::parse(bad, "run.cfg");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("run.cfg:1") != std::string::npos);
    }
  }

  TEST_CASE("unknown keys are named with the valid set") {
    KeyValues kv;
    kv.set("stpes", "1");
    const std::vector<std::string> valid{"steps", "seed"};
    try {
      kv.require_known(valid);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("stpes") != std::string::npos);
      CHECK(std::string(e.what()).find("steps, seed") != std::string::npos);
    }
  }

  TEST_CASE("merge and write are sorted and overriding") {
    KeyValues a, b;
    a.set("z", "1");
    a.set("a", "2");
    b.set("z", "3");
    a.merge(b);
    std::ostringstream os;
    a.write(os);
    CHECK(os.str() == "a=2\nz=3\n");
  }

  TEST_CASE("doubles format to the shortest round-tripping text") {
    oracle::Gen g(81);
    for (int i = 0; i < 500; ++i) {
      const double v = g.normal(1e3) * std::pow(10.0, g.integer(-8, 8));
      CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1.0) == "1");
    CHECK(join_doubles(std::vector<double>{0.5, 2}) == "0.5,2");
    CHECK(split_list(" a, b ,c") == std::vector<std::string>{"a", "b", "c"});
    CHECK(split_list("").empty());
  }

  TEST_CASE("svg line plot") {
    LinePlot p;
    p.title = "a < b";
    p.log2_x = true;
    p.series.push_back({"s", {{1, 0.5}, {2, 0.6}, {8, 0.4}}});
    std::ostringstream os;
    write_svg(os, p);
    const std::string s = os.str();
    CHECK(s.rfind("<svg", 0) == 0);
    CHECK(s.find("a &lt; b") != std::string::npos);
    CHECK(s.find("<polyline") != std::string::npos);
  }
}
