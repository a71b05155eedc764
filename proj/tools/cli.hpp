#pragma once

// Command-line front end. Every command writes a run manifest recording the
// resolved config, input hashes, seeds and digests of its outputs; `replay`
// re-executes a manifest and compares the digests.

#include <iosfwd>
#include <string>
#include <vector>

namespace prosody::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prosody::cli
