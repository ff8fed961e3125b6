#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace volfn::cli {

// Runs the command line; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Git-style blob hash: sha1("blob <size>\0" + bytes), lowercase hex.
std::string git_blob_sha1(const std::string& bytes);

}  // namespace volfn::cli
