#include "specache/speculation.hpp"

#include <cassert>
#include <map>

namespace specache {

SpecPlan build_spec_plan(const Program& p) {
  SpecPlan plan;
  std::vector<int> ipdom = compute_ipostdom(p);
  Color next = 1;
  for (size_t b = 0; b < p.blocks.size(); ++b) {
    const Terminator& t = p.blocks[b].term;
    if (t.kind != TermKind::Branch) continue;
    PlanEntry e;
    e.branch_block = static_cast<int>(b);
    e.color = next++;
    e.then_entry = t.target;
    e.else_entry = t.else_target;
    e.stop = ipdom[b];
    plan.entries.push_back(e);
  }
  return plan;
}

int select_depth(const Terminator& branch, const AbstractCacheState& s,
                 const CacheConfig& cfg, const SpecConfig& spec) {
  assert(s.reached);
  for (int v : branch.cond_vars)
    if (s.must[static_cast<size_t>(v)] > cfg.num_lines) return spec.depth_miss;
  return spec.depth_hit;
}

RollbackJoin rollback_join(const AbstractCacheState& s0, int wrong_entry,
                           int depth, const Program& p, const CacheConfig& cfg) {
  assert(s0.reached);
  // Positions are (block, next instruction index); a position past the body
  // stands for the terminator.
  using Pos = std::pair<int, int>;
  std::map<Pos, AbstractCacheState> layer;
  layer[{wrong_entry, 0}] = s0;

  AbstractCacheState acc = s0;
  for (int step = 0; step < depth && !layer.empty(); ++step) {
    std::map<Pos, AbstractCacheState> next;
    auto put = [&](Pos pos, const AbstractCacheState& st) {
      auto it = next.find(pos);
      if (it == next.end())
        next.emplace(pos, st);
      else
        it->second = join(it->second, st, cfg);
    };
    for (const auto& [pos, st] : layer) {
      const auto& [blk, idx] = pos;
      const BasicBlock& bb = p.blocks[static_cast<size_t>(blk)];
      if (idx < static_cast<int>(bb.body.size())) {
        AbstractCacheState st2 =
            transfer(st, havoc_effect(bb.body[static_cast<size_t>(idx)], p), cfg);
        put({blk, idx + 1}, st2);
      } else {
        // Terminators consume no step; hop through them until the next
        // instruction position (or the window dies at an exit).
        std::vector<Pos> frontier{{blk, idx}};
        std::vector<Pos> at_inst;
        std::map<Pos, bool> visited;
        while (!frontier.empty()) {
          Pos f = frontier.back();
          frontier.pop_back();
          if (visited[f]) continue;
          visited[f] = true;
          const BasicBlock& fb = p.blocks[static_cast<size_t>(f.first)];
          if (f.second < static_cast<int>(fb.body.size())) {
            at_inst.push_back(f);
            continue;
          }
          for (int s : p.successors(f.first)) frontier.push_back({s, 0});
        }
        // Re-dispatch: positions with an instruction execute it this step.
        for (Pos f : at_inst) {
          const BasicBlock& fb = p.blocks[static_cast<size_t>(f.first)];
          AbstractCacheState st2 = transfer(
              st, havoc_effect(fb.body[static_cast<size_t>(f.second)], p), cfg);
          put({f.first, f.second + 1}, st2);
        }
      }
    }
    if (next == layer) break; // saturated: every deeper layer repeats
    layer = std::move(next);
    for (const auto& [pos, st] : layer) acc = join(acc, st, cfg);
  }
  return RollbackJoin{std::move(acc)};
}

std::vector<Injection> inject(const SpecPlan& plan, int branch_block,
                              Direction direction, const RollbackJoin& rj,
                              const SpecConfig& spec) {
  const PlanEntry* e = plan.for_branch(branch_block);
  assert(e && "branch has no plan entry");
  const int entry =
      direction == Direction::Then ? e->then_entry : e->else_entry;
  Injection inj;
  inj.node = entry;
  inj.state = rj.state;
  if (spec.strategy == MergeStrategy::JustInTime)
    inj.slot = spec.colors_enabled ? e->color : 0;
  return {inj};
}

} // namespace specache
