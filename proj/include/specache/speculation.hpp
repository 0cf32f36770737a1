#pragma once

#include <optional>
#include <vector>

#include "specache/cache_domain.hpp"
#include "specache/ir.hpp"

namespace specache {

enum class MergeStrategy {
  RollbackMerge, // speculative states joined into the normal flow at the arm entry
  JustInTime,    // kept in a speculative slot until the branch's join point
};

struct SpecConfig {
  int depth_hit = 20;   // b_h
  int depth_miss = 200; // b_m
  MergeStrategy strategy = MergeStrategy::JustInTime;
  bool colors_enabled = true; // one slot per branch vs a single shared slot
};

using Color = int; // 1-based; 0 is the shared slot when colors are disabled

struct PlanEntry {
  int branch_block = -1;
  Color color = 0;
  int then_entry = -1;
  int else_entry = -1;
  int stop = -1; // immediate postdominator of the branch block; -1 = exit sink
};

struct SpecPlan {
  std::vector<PlanEntry> entries; // ordered by branch block index
  const PlanEntry* for_branch(int block) const {
    for (const PlanEntry& e : entries)
      if (e.branch_block == block) return &e;
    return nullptr;
  }
};

// One color per Branch terminator; stop nodes via immediate postdominators
// (multiple exits funnel through a synthetic sink).
SpecPlan build_spec_plan(const Program& program);

// b_h when every condition variable is a must-hit in s (or the condition
// reads no memory), b_m otherwise.
int select_depth(const Terminator& branch, const AbstractCacheState& s,
                 const CacheConfig& cfg, const SpecConfig& spec);

struct RollbackJoin {
  AbstractCacheState state;
};

// Join over every rollback point of a depth-bounded speculative window: the
// step-indexed walk starts at wrong_entry with state s0, fans out through
// branches, and accumulates the state after every k in [0, depth]
// instructions. Unknown-index refs inside the window use havoc regardless of
// the engine's region mode.
RollbackJoin rollback_join(const AbstractCacheState& s0, int wrong_entry,
                           int depth, const Program& program,
                           const CacheConfig& cfg);

enum class Direction { Then, Else }; // the arm actually taken after rollback

struct Injection {
  int node = -1;
  std::optional<Color> slot; // empty: join into the normal state S[node]
  AbstractCacheState state;
};

// Placement of a rollback join per the merge strategy: JustInTime feeds the
// speculative slot at the correct arm's entry; RollbackMerge joins straight
// into the normal state there.
std::vector<Injection> inject(const SpecPlan& plan, int branch_block,
                              Direction direction, const RollbackJoin& rj,
                              const SpecConfig& spec);

} // namespace specache
