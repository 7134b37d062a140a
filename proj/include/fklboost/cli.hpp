#ifndef FKLBOOST_CLI_HPP
#define FKLBOOST_CLI_HPP

namespace fklboost {

/// Entry point behind the fklboost binary; exposed so tests can drive the
/// command surface in-process. Returns the process exit code: 0 on success,
/// 2 on configuration errors, 3 on numerical aborts.
int run_cli(int argc, const char* const* argv);

}  // namespace fklboost

#endif  // FKLBOOST_CLI_HPP
