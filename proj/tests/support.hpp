#pragma once

#include <filesystem>
#include <optional>
#include <random>

#include "lfctl/config.hpp"
#include "lfctl/dmdc.hpp"

namespace lfctl::testing {

inline std::filesystem::path source_dir() { return LFCTL_SOURCE_DIR; }
inline std::filesystem::path fixture_dir() { return LFCTL_FIXTURE_DIR; }

inline AppConfig base_config() { return load_config(source_dir() / "config" / "base.json"); }

// The model written by the fixture_fit_model test.
inline const StateSpaceModel& plant_model() {
  static const StateSpaceModel m = load_model((fixture_dir() / "model.json").string());
  return m;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("lfctl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace lfctl::testing
