// Copyright (c) 2026 The DVFL Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace dvfl {

enum class ErrorCode {
  kInvalidArgument,
  kConfig,
  kProtocol,
  kData,
  kCrypto,
  kShape,
  kChannelClosed,
  kShutdown,
};

// All library failures are reported through this exception; the CLI maps the
// code to a process exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// 0 ok, 2 config, 3 protocol, 4 data, 1 anything else.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
      return 2;
    case ErrorCode::kProtocol:
    case ErrorCode::kChannelClosed:
    case ErrorCode::kShutdown:
      return 3;
    case ErrorCode::kData:
      return 4;
    default:
      return 1;
  }
}

}  // namespace dvfl
