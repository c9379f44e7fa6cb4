// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef HAWAII_IO_HPP
#define HAWAII_IO_HPP

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hawaii {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

}  // namespace hawaii

#endif  // HAWAII_IO_HPP
