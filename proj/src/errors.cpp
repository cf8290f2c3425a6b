#include "pipevc/errors.hpp"

namespace pipevc {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::cycle_detected: return "CycleDetected";
    case Errc::dangling_edge: return "DanglingEdge";
    case Errc::empty_spec: return "EmptySpec";
    case Errc::duplicate_slot: return "DuplicateSlot";
    case Errc::unknown_slot: return "UnknownSlot";
    case Errc::schema_flag_mismatch: return "SchemaFlagMismatch";
    case Errc::io_failure: return "IoFailure";
    case Errc::missing_chunk: return "MissingChunk";
    case Errc::already_exists: return "AlreadyExists";
    case Errc::duplicate_branch: return "DuplicateBranch";
    case Errc::unknown_commit: return "UnknownCommit";
    case Errc::unknown_branch: return "UnknownBranch";
    case Errc::incompatible_pipeline: return "IncompatiblePipeline";
    case Errc::no_common_ancestor: return "NoCommonAncestor";
    case Errc::not_fast_forward: return "NotFastForward";
    case Errc::empty_space: return "EmptySpace";
    case Errc::component_run_failure: return "ComponentRunFailure";
    case Errc::not_mergeable: return "NotMergeable";
    case Errc::out_of_range: return "OutOfRange";
    case Errc::non_zero_exit: return "NonZeroExit";
    case Errc::missing_output: return "MissingOutput";
    case Errc::schema_mismatch: return "SchemaMismatch";
    case Errc::bad_config: return "BadConfig";
    case Errc::out_of_domain: return "OutOfDomain";
    case Errc::missing_metric: return "MissingMetric";
    case Errc::exhausted: return "Exhausted";
    case Errc::unsupported_topology: return "UnsupportedTopology";
  }
  return "UnknownError";
}

}  // namespace pipevc
