#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "sosuq/config.hpp"
#include "sosuq/errors.hpp"
#include "sosuq/tensor.hpp"

using namespace sosuq;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "sosuq_test_tensor";
  fs::create_directories(p);
  return p;
}

} // namespace

TEST_CASE("crc32 matches the standard check value") {
  const char* s = "123456789";
  CHECK(crc32(s, 9) == 0xCBF43926u);
  CHECK(crc32(s, 0) == 0x00000000u);
  // Chaining via the seed equals one pass over the concatenation.
  const uint32_t part = crc32(s, 4);
  CHECK(crc32(s + 4, 5, part) == 0xCBF43926u);
}

TEST_CASE("f64 tensors round-trip bit-exactly through bytes") {
  Tensor t(Dtype::f64, {2, 3});
  t.values = {1.0 / 3.0, -0.0, 5e-324, 1.7976931348623157e308, -2.5, 0.1};
  const std::string bytes = tensor_to_bytes(t);
  const Tensor u = tensor_from_bytes(bytes);
  CHECK(u.dtype == Dtype::f64);
  REQUIRE(u.dims == t.dims);
  REQUIRE(u.values.size() == t.values.size());
  for (size_t i = 0; i < t.values.size(); ++i) {
    uint64_t a, b;
    std::memcpy(&a, &t.values[i], 8);
    std::memcpy(&b, &u.values[i], 8);
    CHECK(a == b);  // bitwise, catches -0.0 and subnormals
  }
  // Same tensor -> same bytes (serialization is a pure function).
  CHECK(tensor_to_bytes(t) == bytes);
}

TEST_CASE("f32 tensors quantize to float on write") {
  Tensor t(Dtype::f32, {3});
  t.values = {0.1, 1.0 / 3.0, -7.25};
  const Tensor u = tensor_from_bytes(tensor_to_bytes(t));
  CHECK(u.dtype == Dtype::f32);
  for (size_t i = 0; i < t.values.size(); ++i)
    CHECK(u.values[i] == static_cast<double>(static_cast<float>(t.values[i])));
}

TEST_CASE("tensor container detects corruption and truncation") {
  Tensor t(Dtype::f64, {4, 4});
  for (size_t i = 0; i < t.values.size(); ++i) t.values[i] = 0.5 * double(i);
  std::string bytes = tensor_to_bytes(t);

  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;  // damage the payload
  CHECK_THROWS_AS(tensor_from_bytes(flipped), IoError);

  std::string truncated = bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(tensor_from_bytes(truncated), IoError);

  std::string badmagic = bytes;
  badmagic[0] = 'X';
  CHECK_THROWS_AS(tensor_from_bytes(badmagic), IoError);

  std::string trailing = bytes + "zz";
  CHECK_THROWS_AS(tensor_from_bytes(trailing), IoError);
}

TEST_CASE("tensor file i/o round-trips and reports missing files") {
  const fs::path dir = temp_dir();
  Tensor t(Dtype::f64, {5});
  t.values = {1, 2, 3, 4, 5};
  const fs::path p = dir / "roundtrip.t";
  write_tensor(p, t);
  const Tensor u = read_tensor(p);
  CHECK(u.values == t.values);
  CHECK(u.dims == t.dims);
  CHECK_THROWS_AS(read_tensor(dir / "does_not_exist.t"), IoError);
}

TEST_CASE("config parses key-value lines with comments") {
  Config c = Config::parse_string(
      "# header comment\n"
      "alpha = 1.5   # trailing comment\n"
      "  name =  hello world \n"
      "\n"
      "flag = true\n"
      "count = 42\n");
  CHECK(c.get_double("alpha", 0.0) == 1.5);
  CHECK(c.get_string("name", "") == "hello world");
  CHECK(c.get_bool("flag", false) == true);
  CHECK(c.get_int("count", 0) == 42);
  CHECK(c.get_int64("big", 7) == 7);  // default path
  CHECK_NOTHROW(c.require_all_read());
}

TEST_CASE("config rejects malformed lines and badly typed values") {
  CHECK_THROWS_AS(Config::parse_string("just some words\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse_string("= 3\n"), ConfigError);

  Config c = Config::parse_string("x = notanumber\nb = maybe\nn = 12.5\n");
  CHECK_THROWS_AS(c.get_double("x", 0.0), ConfigError);
  CHECK_THROWS_AS(c.get_bool("b", false), ConfigError);
  CHECK_THROWS_AS(c.get_int("n", 0), ConfigError);  // not an integer
}

TEST_CASE("config tracks unread keys and echoes resolved values") {
  Config c = Config::parse_string("used = 1\nmisspelled = 2\n");
  CHECK(c.get_int("used", 0) == 1);
  CHECK(c.unread_keys() == std::set<std::string>{"misspelled"});
  CHECK_THROWS_AS(c.require_all_read(), ConfigError);

  // Defaults that were read appear in the resolved echo.
  Config d = Config::parse_string("a = 2\n");
  CHECK(d.get_int("a", 0) == 2);
  CHECK(d.get_double("missing.with_default", 1.25) == 1.25);
  const std::string echo = d.resolved_text();
  CHECK(echo.find("a = 2") != std::string::npos);
  CHECK(echo.find("missing.with_default = 1.25") != std::string::npos);

  // Reparsing the echo yields identical resolved values (fixpoint).
  Config e = Config::parse_string(echo);
  CHECK(e.get_int("a", 0) == 2);
  CHECK(e.get_double("missing.with_default", 0.0) == 1.25);
  CHECK(e.resolved_hash() == d.resolved_hash());

  // Different values hash differently.
  Config f = Config::parse_string("a = 3\n");
  CHECK(f.get_int("a", 0) == 3);
  CHECK(f.get_double("missing.with_default", 1.25) == 1.25);
  CHECK(f.resolved_hash() != d.resolved_hash());
}

TEST_CASE("config file loading") {
  const fs::path dir = temp_dir();
  const fs::path p = dir / "test.cfg";
  std::ofstream(p) << "k = v\n";
  Config c = Config::parse_file(p);
  CHECK(c.get_string("k", "") == "v");
  CHECK_THROWS_AS(Config::parse_file(dir / "missing.cfg"), IoError);
}
