#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace detco::cli {

std::string usage();

/// Creates `<base>/<prefix>-<YYYYmmdd-HHMMSS>[-N]`, never reusing an
/// existing directory.
std::filesystem::path make_experiment_dir(const std::filesystem::path& base, const std::string& prefix);

/// Runs one subcommand. Returns 0 on success, 1 on a runtime failure (the
/// error class is printed as `error[<Kind>]: message`), 2 on usage errors.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace detco::cli
