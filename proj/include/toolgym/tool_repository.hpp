#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toolgym/result.hpp"
#include "toolgym/rng.hpp"

namespace toolgym {

enum class ParamKind { string_, number, integer, boolean, array, object };

Result<ParamKind> param_kind_from_string(const std::string& s);
const char* to_string(ParamKind kind);

struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::string_;
  std::string description;
  bool required = false;

  bool operator==(const ParamSpec&) const = default;
};

// One textual tool definition. Tools are descriptions only; nothing here
// is executable.
struct ToolSpec {
  std::string name;
  std::string description;
  std::string category;
  std::vector<ParamSpec> parameters;

  bool operator==(const ToolSpec&) const = default;
};

// Same shape as the repository file records.
void to_json(nlohmann::json& j, const ParamSpec& param);
void from_json(const nlohmann::json& j, ParamSpec& param);
void to_json(nlohmann::json& j, const ToolSpec& tool);
void from_json(const nlohmann::json& j, ToolSpec& tool);

// Immutable after load; sharing across rollout workers is safe.
class Repository {
 public:
  static Result<Repository> from_tools(std::vector<ToolSpec> tools);

  const std::vector<ToolSpec>& tools() const { return tools_; }
  size_t size() const { return tools_.size(); }

  // category -> indices into tools(), keyed in lexicographic order.
  const std::map<std::string, std::vector<size_t>>& categories() const {
    return categories_;
  }

  const ToolSpec* find(const std::string& name) const;

 private:
  std::vector<ToolSpec> tools_;
  std::map<std::string, std::vector<size_t>> categories_;
};

// Loads a UTF-8 line-delimited file, one JSON tool record per line.
// Blank lines are ignored. Errors carry the offending record's line number.
Result<Repository> load_repository(const std::string& path);

// Parses the same record format from an in-memory string (used by tests
// and by anything that already has the bytes).
Result<Repository> parse_repository(const std::string& text);

// Draws `count` distinct tools. A uniformly random category is picked and
// exhausted in shuffled order before the next unused category is opened.
//
// Draw order, for reproducibility: categories are indexed in lexicographic
// name order; each category pick consumes one bounded() draw over the
// unused categories; opening a category consumes one shuffle() of its
// tools in repository insertion order.
Result<std::vector<ToolSpec>> sample_tools(const Repository& repo,
                                           size_t count, Rng& rng);

}  // namespace toolgym
