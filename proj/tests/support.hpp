#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "toolgym/lm_backend.hpp"
#include "toolgym/result.hpp"

namespace toolgym::testing {

// Backend driven by a lambda; the call log makes request assertions easy.
class FnBackend : public Backend {
 public:
  using Fn = std::function<Result<std::string>(
      const std::vector<ChatMessage>&, const CompletionParams&)>;

  explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}

  Result<std::string> complete(const std::vector<ChatMessage>& messages,
                               const CompletionParams& params) override {
    calls.push_back(messages);
    return fn_(messages, params);
  }

  std::vector<std::vector<ChatMessage>> calls;

 private:
  Fn fn_;
};

// Self-deleting scratch directory.
class TempDir {
 public:
  TempDir() {
    std::string pattern =
        (std::filesystem::temp_directory_path() / "toolgym_test_XXXXXX")
            .string();
    std::vector<char> buffer(pattern.begin(), pattern.end());
    buffer.push_back('\0');
    char* made = mkdtemp(buffer.data());
    path_ = made != nullptr ? made : pattern;
  }

  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }

  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::string& path() const { return path_; }

  std::string file(const std::string& name) const {
    return (std::filesystem::path(path_) / name).string();
  }

 private:
  std::string path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

inline bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace toolgym::testing
