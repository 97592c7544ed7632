#pragma once
// Command-line entry point. Exit codes: 0 success, 1 runtime failure,
// 2 usage or configuration error.

namespace sgs {

int cli_main(int argc, char** argv);

}  // namespace sgs
