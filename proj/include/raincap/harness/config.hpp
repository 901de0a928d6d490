#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "raincap/caption/captioner.hpp"
#include "raincap/irs/irs.hpp"
#include "raincap/rain/rain_model.hpp"
#include "raincap/svfm/svfm.hpp"

namespace raincap::harness {

/// Bad key, bad value or unreadable config file. The CLI treats it as a usage
/// error.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Flat key=value settings. Defaults are the desk-scale run the acceptance
/// checks use.
struct ExperimentConfig {
  std::uint64_t seed = 42;
  int count = 50;  // scenes for gen-data
  rain::StreakRanges rain;
  int guided_radius = decomp::kDefaultRadius;
  double guided_eps = decomp::kDefaultEps;
  irs::IrsTrainConfig irs;
  caption::CaptionDims dims;
  caption::CaptionTrainConfig cap;
  svfm::SvfmTrainConfig svfm;
  int nic_s_epochs = 40;
  std::string out = "out";

  ExperimentConfig();

  /// Throws ConfigError for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  /// '#' starts a comment; blank lines are ignored.
  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);

  std::vector<std::string> keys() const;
  /// Every key but `out`, sorted, one "key=value" per line. Rerunning with the
  /// same canonical text reproduces the same artifacts.
  std::string canonical() const;
  std::string hash() const;

  /// Propagates the shared guided-filter setting and checks every section.
  void validate() const;
  irs::IrsTrainConfig irs_config() const;
  svfm::SvfmTrainConfig svfm_config() const;
  svfm::SvfmTrainConfig nic_s_config() const;
};

}  // namespace raincap::harness
