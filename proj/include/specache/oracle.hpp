#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "specache/analyses.hpp"
#include "specache/fixpoint.hpp"

namespace specache {

// Fully associative LRU cache: line variables ordered youngest first.
class ConcreteCache {
public:
  explicit ConcreteCache(int num_lines) : capacity_(num_lines) {}

  // Touches v; returns true on a hit. On a miss the LRU line is evicted once
  // the cache is full.
  bool access(int v);
  bool cached(int v) const;
  // 1-based LRU position; capacity()+1 if not cached.
  int age(int v) const;
  int capacity() const { return capacity_; }
  const std::vector<int>& lines() const { return lines_; }

private:
  int capacity_;
  std::vector<int> lines_;
};

// One fully resolved execution. Choices are consumed in encounter order:
// branch outcome, branch prediction, then per window step continue/rollback,
// inner window directions, and unknown-index line picks.
struct RunChoices {
  std::vector<int> values;
  friend bool operator==(const RunChoices& a, const RunChoices& b) {
    return a.values == b.values;
  }
};

struct TracePoint {
  SiteKey site;
  bool speculative = false; // inside a not-yet-rolled-back window
  int var = -1;             // concrete line touched
  bool hit = false;
  std::vector<int> cache_after; // youngest first
};

struct ConcreteRun {
  RunChoices choices;
  std::vector<TracePoint> trace;
  bool truncated = false; // loop cap hit; coverage of this run is partial
};

struct OracleOptions {
  std::uint64_t budget = 1'000'000; // max complete runs per program
  int loop_cap = 16;                // back-edge traversals per run
  bool strict_depth = false;        // concrete entitlement is always b_m
  bool parallel = false;            // OpenMP over enumerated runs
};

// Replays one choice vector. Throws std::invalid_argument if the vector is
// incomplete or a choice is out of range.
ConcreteRun simulate(const Program& program, const RunChoices& choices,
                     const EngineConfig& engine, const OracleOptions& opts,
                     const FixpointResult* rotation = nullptr);

// Every run over all branch outcomes x predictions x rollback points x
// unknown-index choices, in lexicographic choice order. For a baseline
// engine (no SpecConfig) predictions are forced correct. Returns false from
// the callback to stop early.
struct EnumerationStats {
  std::uint64_t runs = 0;
  bool budget_exceeded = false;
  bool any_truncated = false;
};
EnumerationStats enumerate_runs(const Program& program, const EngineConfig& engine,
                                const OracleOptions& opts,
                                const FixpointResult* rotation,
                                const std::function<bool(const RunChoices&)>& yield);

struct Violation {
  RunChoices choices;
  std::uint64_t run_index = 0;
  SiteKey site;
  std::string what;
};

struct SoundnessVerdict {
  bool ok = true;
  std::uint64_t runs = 0;
  bool budget_exceeded = false;
  bool any_truncated = false;
  std::optional<Violation> violation; // lexicographically least
};

// Machine-checks the abstraction: runs the configured engine, enumerates
// concrete runs and verifies, at every post-resolution access, that a
// combined must-hit claim implies a concrete hit and that every cached
// variable's concrete age lies within [shadow age, must age] of the covering
// abstract state.
SoundnessVerdict check_soundness(const Program& program, const EngineConfig& engine,
                                 const OracleOptions& opts);

std::string violation_to_json(const Violation& v, const Program& program);
std::optional<RunChoices> choices_from_json(const std::string& text);

struct FuzzSpec {
  int max_vars = 6;
  int max_blocks = 8;
  int max_branches = 3;
  int max_region_size = 2;
  int max_body = 3;
  bool loop_allowed = true;
  std::uint64_t seed = 0;
};

// Seed-deterministic well-formed random program within the bounds.
Program gen_program(const FuzzSpec& fuzz);

} // namespace specache
