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

#include <stdexcept>
#include <string>

namespace firp {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FIRP_DEFINE_ERROR(Name)            \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  };

FIRP_DEFINE_ERROR(DimensionError)   // tensor shape mismatch
FIRP_DEFINE_ERROR(ContractError)    // violated precondition on an API
FIRP_DEFINE_ERROR(DataError)        // empty or degenerate input data
FIRP_DEFINE_ERROR(VocabularyError)  // token id outside the vocabulary
FIRP_DEFINE_ERROR(CapacityError)    // sequence or cache exceeds max_seq_len
FIRP_DEFINE_ERROR(TrainingError)    // non-finite loss or gradient
FIRP_DEFINE_ERROR(TemplateError)    // malformed draft-tree template
FIRP_DEFINE_ERROR(TableError)       // accuracy table lookup out of range
FIRP_DEFINE_ERROR(ParameterError)   // invalid hyper-parameter
FIRP_DEFINE_ERROR(IoError)          // unreadable file or corrupt checkpoint
FIRP_DEFINE_ERROR(DependencyError)  // curriculum order violated

#undef FIRP_DEFINE_ERROR

}  // namespace firp
