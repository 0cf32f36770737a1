#include "specache/fixpoint.hpp"

#include <algorithm>
#include <cassert>
#include <deque>
#include <functional>
#include <stdexcept>
#include <tuple>

namespace specache {

std::uint64_t pop_bound(const Program& p, const EngineConfig& engine) {
  if (engine.max_pops) return engine.max_pops;
  const std::uint64_t nodes = p.blocks.size();
  const std::uint64_t vars = p.vars.size() ? p.vars.size() : 1;
  const std::uint64_t height =
      2 * vars * (static_cast<std::uint64_t>(engine.cache.num_lines) + 1) + 1;
  std::uint64_t colors = 1;
  if (engine.spec) {
    for (const BasicBlock& b : p.blocks)
      if (b.term.kind == TermKind::Branch) ++colors;
  }
  return nodes * height * colors + nodes + 16;
}

namespace {

class Engine {
public:
  Engine(const Program& p, const EngineConfig& cfg) : p_(p), cfg_(cfg) {
    if (cfg_.spec) plan_ = build_spec_plan(p_);
  }

  FixpointResult run() {
    const int n = static_cast<int>(p_.blocks.size());
    S_.assign(static_cast<size_t>(n), bottom());
    SS_.assign(static_cast<size_t>(n), {});
    S_[static_cast<size_t>(p_.entry)] =
        top(static_cast<int>(p_.vars.size()), cfg_.cache);

    std::deque<int> queue{p_.entry};
    std::vector<char> queued(static_cast<size_t>(n), 0);
    queued[static_cast<size_t>(p_.entry)] = 1;

    const std::uint64_t bound = pop_bound(p_, cfg_);
    std::uint64_t pops = 0;
    auto enqueue = [&](int b) {
      if (!queued[static_cast<size_t>(b)]) {
        queued[static_cast<size_t>(b)] = 1;
        queue.push_back(b);
      }
    };

    while (!queue.empty()) {
      if (++pops > bound)
        throw std::runtime_error("fixpoint did not stabilize within the "
                                 "domain-height bound (engine bug)");
      const int node = queue.front();
      queue.pop_front();
      queued[static_cast<size_t>(node)] = 0;

      process(node, [&](int target, std::optional<Color> slot,
                        const AbstractCacheState& st) {
        if (apply(target, slot, st)) enqueue(target);
      });
    }

    FixpointResult r;
    r.state_at = S_;
    r.spec_at = SS_;
    r.iterations = pops;
    r.plan = plan_;
    finalize(r);
    return r;
  }

  // Re-applies one sweep against frozen states; true iff nothing would grow.
  bool sweep_is_stable() {
    for (int node = 0; node < static_cast<int>(p_.blocks.size()); ++node) {
      bool grew = false;
      process(node, [&](int target, std::optional<Color> slot,
                        const AbstractCacheState& st) {
        if (would_grow(target, slot, st)) grew = true;
      });
      if (grew) return false;
    }
    return true;
  }

  void seed_from(const FixpointResult& r) {
    S_ = r.state_at;
    SS_ = r.spec_at;
    frozen_lines_ = r.rotating_line;
    frozen_ = true;
  }

private:
  using Emit = std::function<void(int, std::optional<Color>, const AbstractCacheState&)>;

  void process(int node, const Emit& emit) {
    const BasicBlock& bb = p_.blocks[static_cast<size_t>(node)];
    AbstractCacheState out = bottom();
    if (S_[static_cast<size_t>(node)].reached)
      out = fold(node, S_[static_cast<size_t>(node)], /*pin=*/true);

    std::map<Color, AbstractCacheState> slot_out;
    for (const auto& [c, st] : SS_[static_cast<size_t>(node)])
      if (st.reached) slot_out[c] = fold(node, st, /*pin=*/false);

    if (cfg_.spec && bb.term.kind == TermKind::Branch && out.reached) {
      // Speculation is planned from every state still in flight at the
      // branch: a run may reach it with an unconverted slot from an earlier
      // misprediction, and the new window builds on that cache.
      AbstractCacheState base = out;
      for (const auto& [c, st] : slot_out) base = join(base, st, cfg_.cache);
      const int d = select_depth(bb.term, base, cfg_.cache, *cfg_.spec);
      for (Direction dir : {Direction::Then, Direction::Else}) {
        const int wrong = dir == Direction::Then ? bb.term.else_target
                                                 : bb.term.target;
        const RollbackJoin rj = cached_rollback(node, wrong, base, d);
        for (Injection inj : inject(plan_, node, dir, rj, *cfg_.spec)) {
          // A slot injection whose target already is the stop node rejoins
          // the normal flow immediately.
          if (inj.slot && stop_color_at(inj.node, *inj.slot))
            inj.slot.reset();
          emit(inj.node, inj.slot, inj.state);
        }
      }
    }

    for (int m : p_.successors(node)) {
      if (out.reached) emit(m, std::nullopt, out);
      for (const auto& [c, st] : slot_out) {
        if (stop_color_at(m, c)) {
          // vn_stop: back to the normal flow, and into any other slot still
          // live across this point (its flow reaches the converting node).
          emit(m, std::nullopt, st);
          for (const auto& [other, ost] : SS_[static_cast<size_t>(node)])
            if (other != c && ost.reached && !stop_color_at(m, other))
              emit(m, other, st);
        } else {
          emit(m, c, st);
        }
      }
    }
  }

  bool stop_color_at(int node, Color c) const {
    if (!cfg_.spec) return false;
    if (cfg_.spec->colors_enabled) {
      for (const PlanEntry& e : plan_.entries)
        if (e.color == c) return e.stop == node;
      return false;
    }
    // Shared slot: any branch's stop converts it.
    for (const PlanEntry& e : plan_.entries)
      if (e.stop == node) return true;
    return false;
  }

  bool apply(int target, std::optional<Color> slot, const AbstractCacheState& st) {
    AbstractCacheState& dst =
        slot ? SS_[static_cast<size_t>(target)][*slot] : S_[static_cast<size_t>(target)];
    if (leq(st, dst)) return false;
    dst = join(dst, st, cfg_.cache);
    return true;
  }

  bool would_grow(int target, std::optional<Color> slot,
                  const AbstractCacheState& st) const {
    if (slot) {
      const auto& m = SS_[static_cast<size_t>(target)];
      auto it = m.find(*slot);
      if (it == m.end()) return st.reached;
      return !leq(st, it->second);
    }
    return !leq(st, S_[static_cast<size_t>(target)]);
  }

  // Folds a state through the block body. pin=true drives the rotating
  // line assignment (normal flow only); slot folds reuse the pinned lines.
  AbstractCacheState fold(int node, const AbstractCacheState& in, bool pin) {
    AbstractCacheState st = in;
    const BasicBlock& bb = p_.blocks[static_cast<size_t>(node)];
    for (int i = 0; i < static_cast<int>(bb.body.size()); ++i)
      st = transfer(st, effect_at(node, i, st, pin), cfg_.cache);
    return st;
  }

  AccessEffect effect_at(int node, int index, const AbstractCacheState& in, bool pin) {
    const Instruction& inst = p_.blocks[static_cast<size_t>(node)].body[static_cast<size_t>(index)];
    const bool unknown =
        inst.kind == InstKind::RegionUnknown || inst.kind == InstKind::SecretRef;
    if (!unknown || cfg_.region_mode != RegionMode::Rotating)
      return havoc_effect(inst, p_);

    const SiteKey key{node, index};
    if (frozen_) {
      auto it = frozen_lines_.find(key);
      if (it == frozen_lines_.end()) return havoc_effect(inst, p_);
      return AccessEffect{AccessEffect::Kind::Known, it->second, -1, 0};
    }
    auto memo = rotation_memo_.find(key);
    if (pin) {
      if (memo == rotation_memo_.end() || memo->second.first != in) {
        const Region& r = p_.regions[static_cast<size_t>(inst.region)];
        int& counter = region_counter_[inst.region];
        counter = std::min(counter + 1, r.size);
        rotation_memo_[key] = {in, r.first_var + counter - 1};
        memo = rotation_memo_.find(key);
      }
    } else if (memo == rotation_memo_.end()) {
      // Slot reached the site before any normal flow pinned it; stay sound.
      return havoc_effect(inst, p_);
    }
    return AccessEffect{AccessEffect::Kind::Known, memo->second.second, -1, 0};
  }

  RollbackJoin cached_rollback(int branch, int wrong_entry,
                               const AbstractCacheState& s0, int depth) {
    // Window walks always use havoc for unknown-index refs; visit counters
    // are not meaningful inside a speculative window.
    auto key = std::make_tuple(branch, wrong_entry, depth);
    auto it = rollback_cache_.find(key);
    if (it != rollback_cache_.end() && it->second.first == s0)
      return it->second.second;
    RollbackJoin rj = rollback_join(s0, wrong_entry, depth, p_, cfg_.cache);
    rollback_cache_[key] = {s0, rj};
    return rj;
  }

  void finalize(FixpointResult& r) {
    for (int node = 0; node < static_cast<int>(p_.blocks.size()); ++node) {
      const BasicBlock& bb = p_.blocks[static_cast<size_t>(node)];
      if (S_[static_cast<size_t>(node)].reached) {
        AbstractCacheState st = S_[static_cast<size_t>(node)];
        for (int i = 0; i < static_cast<int>(bb.body.size()); ++i) {
          r.per_site_in[SiteKey{node, i}].normal = st;
          st = transfer(st, effect_at(node, i, st, /*pin=*/true), cfg_.cache);
        }
      }
      for (const auto& [c, slot] : SS_[static_cast<size_t>(node)]) {
        if (!slot.reached) continue;
        AbstractCacheState st = slot;
        for (int i = 0; i < static_cast<int>(bb.body.size()); ++i) {
          r.per_site_in[SiteKey{node, i}].slots[c] = st;
          st = transfer(st, effect_at(node, i, st, /*pin=*/false), cfg_.cache);
        }
      }
    }
    for (const auto& [key, pin] : rotation_memo_)
      r.rotating_line[key] = pin.second;
  }

  const Program& p_;
  EngineConfig cfg_;
  SpecPlan plan_;
  std::vector<AbstractCacheState> S_;
  std::vector<std::map<Color, AbstractCacheState>> SS_;
  std::map<SiteKey, std::pair<AbstractCacheState, int>> rotation_memo_;
  std::map<int, int> region_counter_;
  std::map<std::tuple<int, int, int>, std::pair<AbstractCacheState, RollbackJoin>>
      rollback_cache_;
  bool frozen_ = false;
  std::map<SiteKey, int> frozen_lines_;
};

} // namespace

FixpointResult run_baseline(const Program& p, const EngineConfig& engine) {
  EngineConfig cfg = engine;
  cfg.spec.reset();
  return Engine(p, cfg).run();
}

FixpointResult run_speculative(const Program& p, const EngineConfig& engine) {
  if (!engine.spec)
    throw std::invalid_argument("run_speculative requires a SpecConfig");
  return Engine(p, engine).run();
}

bool verify_fixpoint(const Program& p, const EngineConfig& engine,
                     const FixpointResult& result) {
  Engine e(p, engine);
  e.seed_from(result);
  return e.sweep_is_stable();
}

} // namespace specache
