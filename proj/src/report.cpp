#include "mtpslab/report.hpp"

#include "json.hpp"

namespace mtpslab {

std::string GenerationReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["tokens"] = tokens;
  j["backbone_forwards"] = backbone_forwards;
  j["tokens_per_forward"] = tokens_per_forward;
  j["stages"]["projector_ms"] = stages.projector_ms;
  j["stages"]["backbone_ms"] = stages.backbone_ms;
  j["stages"]["mtp_modules_ms"] = stages.mtp_modules_ms;
  j["stages"]["heads_ms"] = stages.heads_ms;
  j["total_ms"] = total_ms;
  j["realized_speedup"] = realized_speedup;
  return j.dump();
}

}  // namespace mtpslab
