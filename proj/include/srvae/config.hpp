#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "srvae/data.hpp"
#include "srvae/models.hpp"
#include "srvae/training.hpp"

namespace srvae {

/// Everything a CLI run needs. Parsed from `key = value` lines; `#` starts a
/// comment; unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string dataset = "toy";  // toy | cifar10
  std::size_t toy_train_size = 512;
  std::size_t toy_test_size = 64;
  std::vector<std::filesystem::path> cifar10_train;
  std::vector<std::filesystem::path> cifar10_test;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;

  /// Canonical `key = value` rendering of every key, in table order.
  std::string echo() const;

  ImageDataset train_set() const;
  ImageDataset test_set() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  bool required = false;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();
/// One line per key for --help output.
std::string config_key_help();

/// Splits text into key/value pairs. Errors name the line number.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

/// Applies file entries then `key=value` overrides, validates, and returns the
/// result. Model and training seeds follow `seed`.
RunConfig parse_run_config(std::string_view text, std::span<const std::string> overrides = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          std::span<const std::string> overrides = {});

/// Shortest decimal that round-trips, always with '.' as separator.
std::string format_double(double v);

}  // namespace srvae
