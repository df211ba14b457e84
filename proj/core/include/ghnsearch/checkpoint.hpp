#pragma once

#include <string>
#include <vector>

#include "ghnsearch/ghn.hpp"
#include "ghnsearch/nn.hpp"

namespace ghn {

/// Serialized training state: model parameters (one or more position models),
/// optimizer moments and the step counter, with a free-form config echo.
/// JSON envelope {schema:"ghn-ckpt/1", config, tensors: name -> {shape,
/// data}} where data is the base64 little-endian f64 payload. Round trips are
/// bit-exact.
struct Checkpoint {
  std::vector<GhnModel> models;
  AdamState opt;
  int64_t step = 0;
  std::string config_echo;  // JSON object text stored under "config"."run"
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ghn
