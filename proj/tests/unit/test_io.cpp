#include <fstream>

#include "doctest.h"
#include "fpalign/audio.hpp"
#include "fpalign/csv.hpp"
#include "fpalign/error.hpp"
#include "signals.hpp"

using namespace fpalign;

TEST_SUITE("io") {
  TEST_CASE("csv quoting and blank lines") {
    testsupport::TempDir dir("csv");
    std::ofstream(dir / "t.csv") << "a,b,c\n1,\"x,y\",\"say \"\"hi\"\"\"\n\n2,,z\r\n";
    const auto t = csv::read(dir / "t.csv");
    CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].fields[1] == "x,y");
    CHECK(t.rows[0].fields[2] == "say \"hi\"");
    CHECK(t.rows[1].line == 4);
    CHECK(t.rows[1].fields[1].empty());
    CHECK(t.rows[1].fields[2] == "z");
    CHECK(t.column("c") == 2);
    CHECK(!t.has_column("d"));
    CHECK_THROWS_AS(t.column("d"), Error);
    CHECK(csv::escape("plain") == "plain");
    CHECK(csv::escape("a,b") == "\"a,b\"");
  }

  TEST_CASE("csv numbers") {
    CHECK(csv::to_double("2.5", 1, "x") == 2.5);
    CHECK_THROWS_AS(csv::to_double("abc", 3, "x"), Error);
    CHECK_THROWS_AS(csv::to_double("nan", 3, "x"), Error);
    CHECK_THROWS_AS(csv::to_double("1.5z", 3, "x"), Error);
  }

  TEST_CASE("missing files are io errors") {
    try {
      csv::read("/nonexistent/file.csv");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Io);
    }
    CHECK_THROWS_AS(read_wav("/nonexistent/file.wav"), Error);
  }

  TEST_CASE("stereo wav is downmixed") {
    testsupport::TempDir dir("stereo");
    std::ofstream out(dir / "s.wav", std::ios::binary);
    auto put = [&](auto v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
    out.write("RIFF", 4);
    put(std::uint32_t{36 + 8});
    out.write("WAVEfmt ", 8);
    put(std::uint32_t{16});
    put(std::uint16_t{1});
    put(std::uint16_t{2});
    put(std::uint32_t{8000});
    put(std::uint32_t{8000 * 4});
    put(std::uint16_t{4});
    put(std::uint16_t{16});
    out.write("data", 4);
    put(std::uint32_t{8});
    put(std::int16_t{16384});
    put(std::int16_t{0});
    put(std::int16_t{-16384});
    put(std::int16_t{-16384});
    out.close();
    const auto a = read_wav(dir / "s.wav");
    CHECK(a.sample_rate == 8000);
    REQUIRE(a.samples.size() == 2);
    CHECK(a.samples[0] == doctest::Approx(0.25));
    CHECK(a.samples[1] == doctest::Approx(-0.5));
  }
}
