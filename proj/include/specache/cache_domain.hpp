#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specache/ir.hpp"

namespace specache {

// Ages live in [1, N+1]; N+1 means "outside of the cache".
using Age = std::int32_t;

struct CacheConfig {
  int num_lines = 1; // N
  bool shadow = false;
  // Test hook: count shadows strictly younger than u when computing the
  // aging refinement. Unsound on purpose; exists so the oracle's power to
  // catch a broken aging rule can be demonstrated.
  bool mutate_refine_count = false;

  Age evicted() const { return static_cast<Age>(num_lines) + 1; }
};

// Per-variable must ages (upper bounds) and, with shadow enabled, may ages
// (lower bounds: the youngest line that may hold the variable on some path).
// reached == false encodes bottom; both vectors are empty in that case.
struct AbstractCacheState {
  bool reached = false;
  std::vector<Age> must;
  std::vector<Age> may; // sized like must iff shadow is enabled

  friend bool operator==(const AbstractCacheState& a, const AbstractCacheState& b) {
    return a.reached == b.reached && a.must == b.must && a.may == b.may;
  }
  friend bool operator!=(const AbstractCacheState& a, const AbstractCacheState& b) {
    return !(a == b);
  }
};

// Resolved memory effect of one instruction.
struct AccessEffect {
  enum class Kind { None, Known, UnknownHavoc } kind = Kind::None;
  int var = -1;          // Known
  int region_first = -1; // UnknownHavoc: first line variable of the region
  int region_size = 0;   // UnknownHavoc: number of lines
};

AbstractCacheState bottom();
// Cold cache with no path information: every variable outside the cache.
AbstractCacheState top(int num_vars, const CacheConfig& cfg);

// Resolves an instruction to its effect. Rotating sites are handled by the
// caller (they become Known effects on the designated line); this helper
// covers Nop, Ref and the havoc interpretation of unknown-index accesses.
AccessEffect havoc_effect(const Instruction& inst, const Program& program);

AbstractCacheState transfer(const AbstractCacheState& s, const AccessEffect& e,
                            const CacheConfig& cfg);

// Join at a control-flow merge: pointwise max on must ages, pointwise min on
// may ages. Bottom is the identity.
AbstractCacheState join(const AbstractCacheState& a, const AbstractCacheState& b,
                        const CacheConfig& cfg);

// Partial order tested by the worklist: a <= b iff a is bottom, or both are
// reached and every must age of a is <= b's while every may age is >= b's.
bool leq(const AbstractCacheState& a, const AbstractCacheState& b);

// --- Canonical printing -----------------------------------------------------
//
// Age-bucket rows. A position with no variable prints "{}" while it is
// younger than the oldest cached variable of the row and "⊥" beyond it;
// multi-variable buckets print "{a,b}" (declaration order), singletons print
// bare. Shadow entries carry the "∃" marker and precede regular variables
// within a bucket.

// Must ages only, positions 1..width (width defaults to N).
std::string format_must_row(const AbstractCacheState& s, const Program& p,
                            const CacheConfig& cfg, int width = -1);
// May ages only.
std::string format_may_row(const AbstractCacheState& s, const Program& p,
                           const CacheConfig& cfg, int width = -1);
// Combined row: shadows and regular variables share buckets.
std::string format_state(const AbstractCacheState& s, const Program& p,
                         const CacheConfig& cfg, int width = -1);
// Trace-style row "{v1, v2, ∅, v3}": must ages youngest first, empties as
// "∅", truncated at the oldest cached variable. Empty cache prints "{ }".
// Region lines print as "<region>[<i+1>*]".
std::string format_trace_row(const AbstractCacheState& s, const Program& p,
                             const CacheConfig& cfg);

} // namespace specache
