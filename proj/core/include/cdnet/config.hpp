#pragma once

#include <string>

#include "cdnet/losses.hpp"
#include "cdnet/network.hpp"
#include "cdnet/train.hpp"

namespace cdnet {

// Paths used by the CLI commands; kept alongside the numeric settings so a
// single file fully describes a run.
struct PathConfig {
  std::string data;
  std::string out;
  std::string ckpt;
};

// Union of all tunables, serialized as a flat "section.key = value" text file.
// '#' starts a comment; every key has a default; unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  PathConfig paths;

  void validate() const {
    model.validate();
    loss.validate();
    train.validate();
  }
};

bool operator==(const PathConfig& a, const PathConfig& b);
bool operator==(const ModelConfig& a, const ModelConfig& b);
bool operator==(const LossConfig& a, const LossConfig& b);
bool operator==(const TrainConfig& a, const TrainConfig& b);
bool operator==(const RunConfig& a, const RunConfig& b);

// Renders every key in a fixed order. Doubles use %.17g so that
// parse_config(echo_config(cfg)) == cfg exactly.
std::string echo_config(const RunConfig& cfg);

// Parses text produced by echo_config (or hand-written files with any subset
// of keys). Throws DataError on unknown keys or malformed values.
RunConfig parse_config(const std::string& text);

// Reads and parses a config file.
RunConfig load_config_file(const std::string& path);

// Applies one "key=value" override (as passed via --set on the CLI).
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace cdnet
