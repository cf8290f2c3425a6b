#pragma once

#include <stdexcept>
#include <string>

namespace pipevc {

enum class Errc {
  cycle_detected,
  dangling_edge,
  empty_spec,
  duplicate_slot,
  unknown_slot,
  schema_flag_mismatch,
  io_failure,
  missing_chunk,
  already_exists,
  duplicate_branch,
  unknown_commit,
  unknown_branch,
  incompatible_pipeline,
  no_common_ancestor,
  not_fast_forward,
  empty_space,
  component_run_failure,
  not_mergeable,
  out_of_range,
  non_zero_exit,
  missing_output,
  schema_mismatch,
  bad_config,
  out_of_domain,
  missing_metric,
  exhausted,
  unsupported_topology,
};

const char* errc_name(Errc c);

// Single exception type for the whole engine; `code()` is machine-readable
// and surfaces verbatim in the CLI's machine output.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg),
        code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) {
  throw Error(code, msg);
}

}  // namespace pipevc
