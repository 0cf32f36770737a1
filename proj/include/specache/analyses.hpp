#pragma once

#include <string>
#include <vector>

#include "specache/fixpoint.hpp"

namespace specache {

enum class HitVerdict { MustHit, MayMiss };

struct SlotVerdict {
  Color color = 0;
  HitVerdict verdict = HitVerdict::MayMiss;
};

struct SiteVerdict {
  Site site;
  std::string target; // variable or region name accessed
  bool normally_reached = false;
  HitVerdict normal = HitVerdict::MayMiss;
  std::vector<SlotVerdict> speculative; // slots crossing the site
};

struct LeakEntry {
  Site site;
  std::string region;
  bool leaking = false;
  std::vector<std::string> must_hit_lines;
  std::vector<std::string> possibly_evicted_lines;
  bool all_lines_possibly_evicted = false; // uniform-miss shape, flagged for triage
};

struct AnalysisReport {
  std::vector<SiteVerdict> verdicts;
  int miss_count = 0;      // sites MayMiss on the normal flow
  int spec_miss_count = 0; // must-hit normally but MayMiss in some slot,
                           // plus sites reachable only speculatively
  std::vector<LeakEntry> leaks;
  std::uint64_t iterations = 0;
};

std::vector<SiteVerdict> classify(const FixpointResult& result, const Program& program,
                                  const EngineConfig& engine);

std::vector<LeakEntry> detect_leaks(const FixpointResult& result, const Program& program,
                                    const EngineConfig& engine);

std::pair<int, int> count_misses(const std::vector<SiteVerdict>& verdicts);

AnalysisReport analyze(const FixpointResult& result, const Program& program,
                       const EngineConfig& engine);

// JSON object {config, verdicts[], miss_count, spec_miss_count, leaks[],
// iterations} with stable field order.
std::string report_to_json(const AnalysisReport& report, const EngineConfig& engine);

// Human-readable table alongside the JSON interface.
std::string report_to_text(const AnalysisReport& report, const EngineConfig& engine);

} // namespace specache
