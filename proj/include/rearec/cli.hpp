#pragma once

#include <map>
#include <string>
#include <vector>

namespace rearec::cli {

// Full pipeline entry point. Subcommands: synth, prepare, train, eval,
// groups, oracle, trace, similarity, bench. Returns the process exit code:
// 0 success, 1 usage/argument error, 2 data or file-format error.
int dispatch(int argc, const char* const* argv);

int dispatch(const std::vector<std::string>& args);

// Flat key=value run configuration (# starts a comment). Unknown keys are
// rejected against the published schema.
std::map<std::string, std::string> parse_config_file(const std::string& path);

}  // namespace rearec::cli
