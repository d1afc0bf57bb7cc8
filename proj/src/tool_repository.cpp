#include "toolgym/tool_repository.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace toolgym {

using nlohmann::json;

const char* to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::string_: return "string";
    case ParamKind::number: return "number";
    case ParamKind::integer: return "integer";
    case ParamKind::boolean: return "boolean";
    case ParamKind::array: return "array";
    case ParamKind::object: return "object";
  }
  return "string";
}

Result<ParamKind> param_kind_from_string(const std::string& s) {
  if (s == "string") return ParamKind::string_;
  if (s == "number") return ParamKind::number;
  if (s == "integer") return ParamKind::integer;
  if (s == "boolean") return ParamKind::boolean;
  if (s == "array") return ParamKind::array;
  if (s == "object") return ParamKind::object;
  return make_error(ErrorKind::invalid_input, "unknown parameter type: " + s);
}

Result<Repository> Repository::from_tools(std::vector<ToolSpec> tools) {
  if (tools.empty()) {
    return make_error(ErrorKind::invalid_input, "repository has no tools");
  }
  std::set<std::string> seen;
  for (const auto& tool : tools) {
    if (tool.name.empty()) {
      return make_error(ErrorKind::invalid_input, "tool with empty name");
    }
    if (tool.category.empty()) {
      return make_error(ErrorKind::invalid_input,
                        "tool '" + tool.name + "' has empty category");
    }
    if (!seen.insert(tool.name).second) {
      return make_error(ErrorKind::invalid_input,
                        "duplicate tool name: " + tool.name);
    }
    std::set<std::string> param_names;
    for (const auto& p : tool.parameters) {
      if (p.name.empty() || !param_names.insert(p.name).second) {
        return make_error(ErrorKind::invalid_input,
                          "tool '" + tool.name +
                              "' has an empty or duplicate parameter name");
      }
    }
  }
  Repository repo;
  repo.tools_ = std::move(tools);
  for (size_t i = 0; i < repo.tools_.size(); ++i) {
    repo.categories_[repo.tools_[i].category].push_back(i);
  }
  return repo;
}

const ToolSpec* Repository::find(const std::string& name) const {
  for (const auto& tool : tools_) {
    if (tool.name == name) return &tool;
  }
  return nullptr;
}

void to_json(json& j, const ParamSpec& param) {
  j = json{{"name", param.name},
           {"type", to_string(param.kind)},
           {"description", param.description},
           {"required", param.required}};
}

void from_json(const json& j, ParamSpec& param) {
  param.name = j.at("name").get<std::string>();
  auto kind = param_kind_from_string(j.at("type").get<std::string>());
  param.kind = kind.ok() ? kind.value() : ParamKind::string_;
  param.description = j.value("description", std::string{});
  param.required = j.value("required", false);
}

void to_json(json& j, const ToolSpec& tool) {
  j = json{{"name", tool.name},
           {"description", tool.description},
           {"category", tool.category},
           {"parameters", tool.parameters}};
}

void from_json(const json& j, ToolSpec& tool) {
  tool.name = j.at("name").get<std::string>();
  tool.description = j.at("description").get<std::string>();
  tool.category = j.at("category").get<std::string>();
  tool.parameters.clear();
  if (j.contains("parameters")) {
    tool.parameters = j.at("parameters").get<std::vector<ParamSpec>>();
  }
}

namespace {

Result<ToolSpec> parse_tool_record(const json& rec) {
  if (!rec.is_object()) {
    return make_error(ErrorKind::invalid_input, "record is not an object");
  }
  ToolSpec tool;
  if (!rec.contains("name") || !rec["name"].is_string()) {
    return make_error(ErrorKind::invalid_input, "missing string field 'name'");
  }
  tool.name = rec["name"].get<std::string>();
  if (!rec.contains("description") || !rec["description"].is_string()) {
    return make_error(ErrorKind::invalid_input,
                      "missing string field 'description'");
  }
  tool.description = rec["description"].get<std::string>();
  if (!rec.contains("category") || !rec["category"].is_string()) {
    return make_error(ErrorKind::invalid_input,
                      "missing string field 'category'");
  }
  tool.category = rec["category"].get<std::string>();
  if (rec.contains("parameters")) {
    if (!rec["parameters"].is_array()) {
      return make_error(ErrorKind::invalid_input, "'parameters' is not a list");
    }
    for (const auto& p : rec["parameters"]) {
      if (!p.is_object() || !p.contains("name") || !p["name"].is_string() ||
          !p.contains("type") || !p["type"].is_string()) {
        return make_error(ErrorKind::invalid_input,
                          "parameter record needs string 'name' and 'type'");
      }
      ParamSpec spec;
      spec.name = p["name"].get<std::string>();
      auto kind = param_kind_from_string(p["type"].get<std::string>());
      if (!kind) return kind.error();
      spec.kind = kind.value();
      if (p.contains("description") && p["description"].is_string()) {
        spec.description = p["description"].get<std::string>();
      }
      if (p.contains("required")) {
        if (!p["required"].is_boolean()) {
          return make_error(ErrorKind::invalid_input,
                            "parameter 'required' is not a boolean");
        }
        spec.required = p["required"].get<bool>();
      }
      tool.parameters.push_back(std::move(spec));
    }
  }
  return tool;
}

}  // namespace

Result<Repository> parse_repository(const std::string& text) {
  std::vector<ToolSpec> tools;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) {
      return make_error(ErrorKind::invalid_input,
                        "line " + std::to_string(line_no) +
                            ": record is not valid JSON");
    }
    auto tool = parse_tool_record(rec);
    if (!tool) {
      return make_error(ErrorKind::invalid_input,
                        "line " + std::to_string(line_no) + ": " +
                            tool.error().detail);
    }
    tools.push_back(std::move(tool).value());
  }
  auto repo = Repository::from_tools(std::move(tools));
  if (!repo) {
    return make_error(ErrorKind::invalid_input, repo.error().detail);
  }
  return repo;
}

Result<Repository> load_repository(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return make_error(ErrorKind::io_error,
                      "cannot open repository file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  auto repo = parse_repository(buf.str());
  if (!repo) {
    return make_error(repo.error().kind, path + ": " + repo.error().detail);
  }
  return repo;
}

Result<std::vector<ToolSpec>> sample_tools(const Repository& repo,
                                           size_t count, Rng& rng) {
  if (count < 1) {
    return make_error(ErrorKind::invalid_input, "sample count must be >= 1");
  }
  if (count > repo.size()) {
    return make_error(ErrorKind::invalid_input,
                      "sample count " + std::to_string(count) +
                          " exceeds repository size " +
                          std::to_string(repo.size()));
  }

  std::vector<std::string> unused;
  unused.reserve(repo.categories().size());
  for (const auto& [name, indices] : repo.categories()) {
    (void)indices;
    unused.push_back(name);
  }

  std::vector<ToolSpec> picked;
  picked.reserve(count);
  while (picked.size() < count) {
    size_t slot = static_cast<size_t>(rng.bounded(unused.size()));
    std::string category = unused[slot];
    unused.erase(unused.begin() + static_cast<long>(slot));

    std::vector<size_t> members = repo.categories().at(category);
    rng.shuffle(members);
    for (size_t idx : members) {
      if (picked.size() == count) break;
      picked.push_back(repo.tools()[idx]);
    }
  }
  return picked;
}

}  // namespace toolgym
