#pragma once

// Command-line front end. Exit codes: 0 success, 2 validation error, 3
// numerical failure.

#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

namespace twobox {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Run configuration with every key at its default; config files may only
// override keys that appear here.
nlohmann::json default_run_config();

// Angle literal: a number, or a multiple/fraction of pi ("pi", "-pi/2", "0.5*pi").
double parse_angle(const std::string& text);

}  // namespace twobox
