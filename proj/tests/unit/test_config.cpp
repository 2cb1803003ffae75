#include <fstream>

#include "stoc/common.hpp"
#include "stoc/config.hpp"
#include "test_helpers.hpp"

// doctest last: torch's logging shims also define CHECK
#include <doctest.h>

using namespace stoc;

TEST_CASE("config parses sections, comments and typed values") {
  auto cfg = Config::from_string(
      "# comment\n"
      "top = 1\n"
      "[model]\n"
      "variant = lf   # trailing comment\n"
      "dims = 1.5, 2.5, 3\n"
      "[train]\n"
      "epochs = 12\n"
      "flag = true\n");
  CHECK(cfg.get_int("top") == 1);
  CHECK(cfg.get_string("model.variant") == "lf");
  CHECK(cfg.get_int("train.epochs") == 12);
  CHECK(cfg.get_bool("train.flag"));
  auto dims = cfg.get_double_list("model.dims");
  REQUIRE(dims.size() == 3);
  CHECK(dims[1] == doctest::Approx(2.5));
}

TEST_CASE("config overrides win and malformed overrides throw") {
  auto cfg = Config::from_string("a = 1\n");
  cfg.apply_override("a=2");
  CHECK(cfg.get_int("a") == 2);
  cfg.apply_override("b.c=hello");
  CHECK(cfg.get_string("b.c") == "hello");
  CHECK_THROWS_AS(cfg.apply_override("no_equals_sign"), ConfigurationError);
}

TEST_CASE("config fallbacks and missing keys") {
  auto cfg = Config::from_string("x = 3\n");
  CHECK(cfg.get_int("missing", 7) == 7);
  CHECK(cfg.get_double("missing", 1.5) == doctest::Approx(1.5));
  CHECK_THROWS_AS(cfg.get_int("missing"), ConfigurationError);
  CHECK(cfg.get_int("x") == 3);
}

TEST_CASE("config round-trips through to_string") {
  auto cfg = Config::from_string("[a]\nk = v\n[b]\nn = 4\n");
  auto round = Config::from_string(cfg.to_string());
  CHECK(round.entries() == cfg.entries());
}

TEST_CASE("config reads files and rejects missing ones") {
  TempDir tmp;
  {
    std::ofstream out(tmp.file("c.cfg"));
    out << "k = v\n";
  }
  CHECK(Config::from_file(tmp.file("c.cfg")).get_string("k") == "v");
  CHECK_THROWS_AS(Config::from_file(tmp.file("absent.cfg")), Error);
}
