#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "support.hpp"
#include "toolgym/rng.hpp"
#include "toolgym/tool_repository.hpp"

using namespace toolgym;
using toolgym::testing::contains;
using toolgym::testing::TempDir;
using toolgym::testing::write_file;

namespace {

std::string record(const std::string& name, const std::string& category) {
  return "{\"name\": \"" + name + "\", \"description\": \"d\", \"category\": \"" +
         category + "\", \"parameters\": []}\n";
}

Repository small_repo() {
  std::string text = record("a1", "A") + record("a2", "A") + record("b1", "B") +
                     record("b2", "B") + record("b3", "B");
  auto repo = parse_repository(text);
  REQUIRE(repo.ok());
  return std::move(repo).value();
}

// Step-by-step reimplementation of the documented sampling procedure:
// categories in lexicographic order, one bounded() draw picks an unused
// category, one shuffle() orders its members, consumed front to back.
std::vector<std::string> oracle_sample(const Repository& repo, size_t count,
                                       uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> unused;
  for (const auto& [name, indices] : repo.categories()) {
    (void)indices;
    unused.push_back(name);
  }
  std::vector<std::string> picked;
  while (picked.size() < count) {
    size_t slot = static_cast<size_t>(rng.bounded(unused.size()));
    std::string category = unused[slot];
    unused.erase(unused.begin() + static_cast<long>(slot));
    std::vector<size_t> members = repo.categories().at(category);
    rng.shuffle(members);
    for (size_t idx : members) {
      if (picked.size() == count) break;
      picked.push_back(repo.tools()[idx].name);
    }
  }
  return picked;
}

}  // namespace

TEST_CASE("load: two tools one category") {
  TempDir dir;
  write_file(dir.file("tools.jsonl"), record("get_w", "weather") +
                                          record("get_f", "weather"));
  auto repo = load_repository(dir.file("tools.jsonl"));
  REQUIRE(repo.ok());
  CHECK(repo.value().size() == 2);
  CHECK(repo.value().categories().size() == 1);
  CHECK(repo.value().categories().count("weather") == 1);
}

TEST_CASE("load: blank lines ignored, parameters optional") {
  auto repo = parse_repository(
      "\n" + record("x", "c") +
      "   \n{\"name\": \"y\", \"description\": \"d\", \"category\": \"c\"}\n");
  REQUIRE(repo.ok());
  CHECK(repo.value().size() == 2);
  CHECK(repo.value().find("y")->parameters.empty());
}

TEST_CASE("load: duplicate tool name names the offender") {
  auto repo = parse_repository(record("dup", "A") + record("dup", "B"));
  REQUIRE_FALSE(repo.ok());
  CHECK(repo.error().kind == ErrorKind::invalid_input);
  CHECK(contains(repo.error().detail, "dup"));
  CHECK(contains(repo.error().detail, "duplicate"));
}

TEST_CASE("load: malformed record reports its line") {
  auto repo = parse_repository(
      record("ok", "A") +
      "{\"description\": \"no name\", \"category\": \"A\"}\n");
  REQUIRE_FALSE(repo.ok());
  CHECK(contains(repo.error().detail, "line 2"));
  CHECK(contains(repo.error().detail, "name"));

  auto bad_json = parse_repository("not json\n");
  REQUIRE_FALSE(bad_json.ok());
  CHECK(contains(bad_json.error().detail, "line 1"));
}

TEST_CASE("load: unknown parameter type rejected") {
  auto repo = parse_repository(
      "{\"name\": \"x\", \"description\": \"d\", \"category\": \"c\", "
      "\"parameters\": [{\"name\": \"p\", \"type\": \"tuple\"}]}\n");
  REQUIRE_FALSE(repo.ok());
  CHECK(contains(repo.error().detail, "tuple"));
}

TEST_CASE("load: empty repository rejected") {
  auto repo = parse_repository("\n\n");
  REQUIRE_FALSE(repo.ok());
  CHECK(contains(repo.error().detail, "no tools"));
}

TEST_CASE("load: missing file is an io error") {
  auto repo = load_repository("/nonexistent/tools.jsonl");
  REQUIRE_FALSE(repo.ok());
  CHECK(repo.error().kind == ErrorKind::io_error);
}

TEST_CASE("load: empty name and empty category rejected") {
  CHECK_FALSE(parse_repository(record("", "A")).ok());
  CHECK_FALSE(parse_repository(record("x", "")).ok());
}

TEST_CASE("load: duplicate parameter name rejected") {
  auto repo = parse_repository(
      "{\"name\": \"x\", \"description\": \"d\", \"category\": \"c\", "
      "\"parameters\": [{\"name\": \"p\", \"type\": \"string\"}, "
      "{\"name\": \"p\", \"type\": \"integer\"}]}\n");
  REQUIRE_FALSE(repo.ok());
}

TEST_CASE("categories: lexicographic keys partitioning the tools") {
  Repository repo = small_repo();
  std::vector<std::string> keys;
  for (const auto& [name, indices] : repo.categories()) {
    (void)indices;
    keys.push_back(name);
  }
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  size_t total = 0;
  for (const auto& [name, indices] : repo.categories()) {
    for (size_t idx : indices) {
      CHECK(repo.tools()[idx].category == name);
      ++total;
    }
  }
  CHECK(total == repo.size());
}

TEST_CASE("find: present and absent") {
  Repository repo = small_repo();
  REQUIRE(repo.find("b2") != nullptr);
  CHECK(repo.find("b2")->category == "B");
  CHECK(repo.find("nope") == nullptr);
}

TEST_CASE("param_kind_from_string covers the six kinds") {
  const char* names[] = {"string", "number", "integer",
                         "boolean", "array",  "object"};
  for (const char* name : names) {
    auto kind = param_kind_from_string(name);
    REQUIRE(kind.ok());
    CHECK(std::string(to_string(kind.value())) == name);
  }
  CHECK_FALSE(param_kind_from_string("float").ok());
}

TEST_CASE("tool spec json round-trip") {
  ToolSpec tool;
  tool.name = "t";
  tool.description = "does things";
  tool.category = "c";
  tool.parameters.push_back(ParamSpec{"p", ParamKind::integer, "a number", true});
  nlohmann::json j = tool;
  CHECK(j["parameters"][0]["type"] == "integer");
  auto back = j.get<ToolSpec>();
  CHECK(back == tool);
}

TEST_CASE("sample: seeded draw matches the procedure oracle") {
  Repository repo = small_repo();
  for (uint64_t seed = 0; seed < 50; ++seed) {
    for (size_t count = 1; count <= repo.size(); ++count) {
      Rng rng(seed);
      auto sample = sample_tools(repo, count, rng);
      REQUIRE(sample.ok());
      std::vector<std::string> names;
      for (const auto& tool : sample.value()) names.push_back(tool.name);
      CHECK(names == oracle_sample(repo, count, seed));
    }
  }
}

TEST_CASE("sample: category exhausted before the next one opens") {
  // {A: 2 tools, B: 3 tools}, count=3: whichever category opens first is
  // fully drained, so the result is never a 1+2 split against A.
  Repository repo = small_repo();
  bool saw_a_first = false;
  bool saw_b_first = false;
  for (uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    auto sample = sample_tools(repo, 3, rng);
    REQUIRE(sample.ok());
    std::map<std::string, int> per_category;
    for (const auto& tool : sample.value()) ++per_category[tool.category];
    if (sample.value()[0].category == "A") {
      saw_a_first = true;
      CHECK(per_category["A"] == 2);
      CHECK(per_category["B"] == 1);
    } else {
      saw_b_first = true;
      CHECK(per_category["B"] == 3);
      CHECK(per_category.count("A") == 0);
    }
  }
  CHECK(saw_a_first);
  CHECK(saw_b_first);
}

TEST_CASE("sample: full draw returns every tool") {
  Repository repo = small_repo();
  Rng rng(11);
  auto sample = sample_tools(repo, repo.size(), rng);
  REQUIRE(sample.ok());
  std::set<std::string> names;
  for (const auto& tool : sample.value()) names.insert(tool.name);
  CHECK(names == std::set<std::string>{"a1", "a2", "b1", "b2", "b3"});
}

TEST_CASE("sample: count bounds") {
  Repository repo = small_repo();
  Rng rng(1);
  CHECK_FALSE(sample_tools(repo, 0, rng).ok());
  CHECK_FALSE(sample_tools(repo, repo.size() + 1, rng).ok());
}

TEST_CASE("sample: no duplicates over 1000 random draws") {
  Repository repo = small_repo();
  Rng seeds(99);
  for (int i = 0; i < 1000; ++i) {
    Rng rng(seeds.next());
    size_t count = 1 + static_cast<size_t>(seeds.bounded(repo.size()));
    auto sample = sample_tools(repo, count, rng);
    REQUIRE(sample.ok());
    std::set<std::string> names;
    for (const auto& tool : sample.value()) names.insert(tool.name);
    CHECK(names.size() == sample.value().size());
  }
}

TEST_CASE("sample: category-exhaustion bound with equal sizes") {
  std::string text;
  for (char c : {'p', 'q', 'r'}) {
    for (int i = 0; i < 3; ++i) {
      text += record(std::string(1, c) + std::to_string(i), std::string(1, c));
    }
  }
  auto repo = parse_repository(text);
  REQUIRE(repo.ok());
  for (uint64_t seed = 0; seed < 100; ++seed) {
    for (size_t k = 1; k <= 9; ++k) {
      Rng rng(seed);
      auto sample = sample_tools(repo.value(), k, rng);
      REQUIRE(sample.ok());
      std::set<std::string> cats;
      for (const auto& tool : sample.value()) cats.insert(tool.category);
      size_t bound = (k + 2) / 3;
      CHECK(cats.size() <= bound);
    }
  }
}

TEST_CASE("sample: reproducible under the same seed") {
  Repository repo = small_repo();
  Rng a(1234);
  Rng b(1234);
  auto first = sample_tools(repo, 4, a);
  auto second = sample_tools(repo, 4, b);
  REQUIRE(first.ok());
  REQUIRE(second.ok());
  CHECK(first.value() == second.value());
}

TEST_CASE("bundled example repository loads") {
  auto repo = load_repository("data/example_tools.jsonl");
  REQUIRE(repo.ok());
  CHECK(repo.value().size() == 12);
  CHECK(repo.value().categories().size() == 3);
  CHECK(repo.value().categories().count("weather") == 1);
  CHECK(repo.value().categories().count("email") == 1);
  CHECK(repo.value().categories().count("calendar") == 1);
}
