// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// The `hawaii` command line, callable in-process so tests can drive it.

#ifndef HAWAII_TOOLS_CLI_HPP
#define HAWAII_TOOLS_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace hawaii::cli {

enum ExitCode : int {
    kOk = 0,
    kVerificationFailed = 1,  // gradcheck or selftest found a violation
    kInvalidInput = 2,        // bad usage, invalid config, oversize gradcheck
    kNonFiniteLoss = 3,
    kIoError = 4,             // unreadable/unwritable files, checkpoint mismatch
    kInternalError = 5,
};

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hawaii::cli

#endif  // HAWAII_TOOLS_CLI_HPP
