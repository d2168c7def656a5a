// Copyright 2026 the uth authors
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

#include <iosfwd>
#include <string>
#include <vector>

namespace uth {

/// Process exit codes shared by every command.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,       // bad flags, unknown config keys, bad values
    kExitData = 2,        // unreadable or malformed inputs, shape mismatches
    kExitDivergence = 3,  // training produced non-finite values
};

/// Runs the `uth` command line. `args` excludes the program name.
/// Never throws; errors are reported on `err` and mapped to an ExitCode.
int
run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace uth
