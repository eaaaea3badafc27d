#pragma once

#include <string>

namespace twobox {

// Writes to `path.tmp` then renames over `path`; no partial file on failure.
void atomic_write(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);
// %.17g, round-trips doubles exactly.
std::string format_double(double x);

}  // namespace twobox
