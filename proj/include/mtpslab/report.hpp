#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mtpslab {

inline constexpr int kSchemaVersion = 1;

struct StageTimes {
  double projector_ms = 0.0;
  double backbone_ms = 0.0;
  double mtp_modules_ms = 0.0;
  double heads_ms = 0.0;
};

/// Per-run record of one generation: emitted tokens (including the terminal
/// EOS when generation stopped at EOS), backbone forward count, per-stage
/// wall time and, when measured pairwise, the realized speedup against an
/// m=1 run.
struct GenerationReport {
  std::vector<int> tokens;
  int64_t backbone_forwards = 0;
  double tokens_per_forward = 0.0;
  StageTimes stages;
  double total_ms = 0.0;
  double realized_speedup = 0.0;  // 0 when not measured

  std::string to_json() const;
};

}  // namespace mtpslab
