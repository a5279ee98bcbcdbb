/* Copyright 2026 The firp-infer Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Binary checkpoint layout, all integers little-endian u32:
//
//   "FIRP" | version | config_len | config JSON (UTF-8)
//   tensor_count | tensor*
//   tensor := name_len | name | rank | dims[rank] | f32 payload
//
// Tensors follow ModelWeights::for_each order, then "firp.proj.<i>.W" and
// "firp.proj.<i>.b" for i = 1..K. Projection layers and the visibility mode
// live in a JSON sidecar next to the checkpoint (see sidecar_path).

#include <cstdint>
#include <string>

#include "firp/model.hpp"
#include "firp/projection.hpp"

namespace firp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelWeights weights;
  ProjectionSet projections;  // K == 0 for a bare model
};

std::string sidecar_path(const std::string& checkpoint_path);

// Writes the checkpoint and, when projections are present, the sidecar.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Throws IoError on a missing file, bad magic, unknown version, truncated
// payload, or tensor names/shapes that do not match the config.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace firp
