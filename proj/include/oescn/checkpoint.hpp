#pragma once

#include <optional>
#include <string>

#include "oescn/adam.hpp"
#include "oescn/model.hpp"

namespace oescn {

// Binary parameter container. Layout (little-endian):
//   magic "OESCKPT1", u32 version, u32 item count,
//   per item: u32 name length, name bytes, u8 trainable,
//             u32 ndim, u64 dims[ndim], f64 values[numel],
//   u8 has_adam, and if set: f64 lr/beta1/beta2/eps, u64 step_count,
//             f64 m/v pairs for every trainable item in file order.
// Round-trips are bit-exact.
struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> adam;
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamState* adam = nullptr);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace oescn
