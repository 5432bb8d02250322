/******************************************************************************
 * Copyright 2026 The mapfuse Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mapfuse/error.hpp"
#include "mapfuse/simlab.hpp"

namespace mapfuse {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInput = 1,
  kExitNotConverged = 2,
  kExitCompression = 3,
  kExitOverlap = 4,
};

int exit_code_for(ErrorKind kind);

/// Runs `mapfuse <args...>` in-process. args excludes the program name. Machine-readable JSON goes
/// to `out`, logs to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// One CSV row per record with a header line; numbers at 17 significant digits.
std::string records_csv(const std::vector<ExperimentRecord>& records);

}  // namespace mapfuse
