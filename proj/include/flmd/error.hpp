// Copyright 2026 The FLMD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLMD_ERROR_HPP
#define FLMD_ERROR_HPP

#include <stdexcept>
#include <string>

namespace flmd {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FLMD_DEFINE_ERROR(Name)            \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  };

FLMD_DEFINE_ERROR(ParseError)
FLMD_DEFINE_ERROR(SchemaError)
FLMD_DEFINE_ERROR(SplitError)
FLMD_DEFINE_ERROR(IndexError)
FLMD_DEFINE_ERROR(IoError)
FLMD_DEFINE_ERROR(DataError)
FLMD_DEFINE_ERROR(AlignmentError)
FLMD_DEFINE_ERROR(ShapeError)
FLMD_DEFINE_ERROR(NumericError)
FLMD_DEFINE_ERROR(DomainError)
FLMD_DEFINE_ERROR(GraphError)
FLMD_DEFINE_ERROR(StateError)
FLMD_DEFINE_ERROR(ConfigError)
// AUC / nDCG requested on input where the metric is not defined.
FLMD_DEFINE_ERROR(MetricError)

#undef FLMD_DEFINE_ERROR

}  // namespace flmd

#endif  // FLMD_ERROR_HPP
