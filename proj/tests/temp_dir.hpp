// Scoped temporary directory for tests.
#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <string>

#include <unistd.h>

namespace testutil {

class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    char buf[256];
    std::snprintf(buf, sizeof(buf), "leukonet_%s_%d_%d", tag.c_str(),
                  static_cast<int>(::getpid()), counter.fetch_add(1));
    path_ = std::filesystem::temp_directory_path() / buf;
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
  std::filesystem::path path_;
};

}  // namespace testutil
