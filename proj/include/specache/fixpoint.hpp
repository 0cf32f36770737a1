#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "specache/cache_domain.hpp"
#include "specache/ir.hpp"
#include "specache/speculation.hpp"

namespace specache {

enum class RegionMode {
  Havoc,    // unknown-index accesses age everything; provably sound
  Rotating, // successive distinct visits walk the region's lines in order
};

struct EngineConfig {
  CacheConfig cache;
  std::optional<SpecConfig> spec; // absent: baseline analysis
  RegionMode region_mode = RegionMode::Havoc;
  std::uint64_t max_pops = 0; // 0: derived from the domain-height bound
};

struct SiteKey {
  int block = -1;
  int index = -1;
  friend bool operator<(const SiteKey& a, const SiteKey& b) {
    return a.block != b.block ? a.block < b.block : a.index < b.index;
  }
  friend bool operator==(const SiteKey& a, const SiteKey& b) {
    return a.block == b.block && a.index == b.index;
  }
};

struct SiteStates {
  AbstractCacheState normal; // bottom if the site is not normally reached
  std::map<Color, AbstractCacheState> slots;
};

struct FixpointResult {
  // In-states: state_at[n] is the join of everything arriving at block n.
  std::vector<AbstractCacheState> state_at;
  std::vector<std::map<Color, AbstractCacheState>> spec_at;
  std::uint64_t iterations = 0; // worklist pops
  SpecPlan plan;
  std::map<SiteKey, SiteStates> per_site_in;
  // Final line chosen per rotating site (var index).
  std::map<SiteKey, int> rotating_line;
};

// Least fixpoint of transfer/join over the CFG, S[entry] = top.
FixpointResult run_baseline(const Program& program, const EngineConfig& engine);

// Joint fixpoint over normal states and per-color speculative slots with
// depth-bounded rollback joins injected at branch arms.
FixpointResult run_speculative(const Program& program, const EngineConfig& engine);

// One extra sweep of transfer + inject over the final states; true iff
// nothing grows (the fixpoint really is one).
bool verify_fixpoint(const Program& program, const EngineConfig& engine,
                     const FixpointResult& result);

// Domain-height termination bound on worklist pops.
std::uint64_t pop_bound(const Program& program, const EngineConfig& engine);

} // namespace specache
