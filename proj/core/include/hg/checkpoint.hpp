#pragma once

#include <string>

#include "hg/config.hpp"
#include "hg/params.hpp"

namespace hg {

// Binary checkpoint: magic "HGCKPT1\0", u64 header length, JSON header
// (config entries and the parameter list), then each parameter's values as
// little-endian float64 in header order.
void save_checkpoint(const std::string& path, const KeyValues& config, const ParamStore& params);

struct CheckpointData {
  KeyValues config;
  ParamStore params;
};
CheckpointData read_checkpoint(const std::string& path);

// Copies checkpoint values into `dst`. Names and shapes must match exactly.
void load_params_into(const ParamStore& src, ParamStore& dst);

}  // namespace hg
