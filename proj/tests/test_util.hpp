#pragma once

#include <filesystem>
#include <string>

namespace testutil {

// Fresh scratch directory under the system temp root; wiped on creation so
// reruns start clean.
inline std::string temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "dlglc_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace testutil
