#include "specache/oracle.hpp"

#include <algorithm>
#include <cassert>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace specache {

bool ConcreteCache::access(int v) {
  auto it = std::find(lines_.begin(), lines_.end(), v);
  const bool hit = it != lines_.end();
  if (hit) lines_.erase(it);
  lines_.insert(lines_.begin(), v);
  if (static_cast<int>(lines_.size()) > capacity_) lines_.pop_back();
  return hit;
}

bool ConcreteCache::cached(int v) const {
  return std::find(lines_.begin(), lines_.end(), v) != lines_.end();
}

int ConcreteCache::age(int v) const {
  for (size_t i = 0; i < lines_.size(); ++i)
    if (lines_[i] == v) return static_cast<int>(i) + 1;
  return capacity_ + 1;
}

namespace {

struct NeedChoice {
  int options;
};

struct PointInfo {
  SiteKey site;
  bool speculative = false;
  std::optional<Color> covering; // innermost active slot, JIT only
  int var = -1;
  bool hit = false;
  const ConcreteCache* before = nullptr;
};

// Returns false to abort the run.
using PointSink = std::function<bool(const PointInfo&)>;

class Executor {
public:
  Executor(const Program& p, const EngineConfig& engine, const OracleOptions& opts,
           const FixpointResult* rotation)
      : p_(p), engine_(engine), opts_(opts), rotation_(rotation),
        plan_(engine.spec ? build_spec_plan(p) : SpecPlan{}) {
    std::vector<int> idom = compute_dominators(p);
    auto dominates = [&](int a, int b) {
      while (true) {
        if (a == b) return true;
        if (b == p.entry || idom[static_cast<size_t>(b)] < 0 ||
            idom[static_cast<size_t>(b)] == b)
          return false;
        b = idom[static_cast<size_t>(b)];
      }
    };
    for (int b = 0; b < static_cast<int>(p.blocks.size()); ++b)
      for (int s : p.successors(b))
        if (dominates(s, b)) back_edges_.insert({b, s});
  }

  // Throws NeedChoice when the vector runs out (enumeration frontier) and
  // std::invalid_argument on a malformed replay vector.
  ConcreteRun run(const RunChoices& choices, const PointSink& sink,
                  bool build_trace) {
    choices_ = &choices;
    cursor_ = 0;
    cache_ = ConcreteCache(engine_.cache.num_lines);
    back_edge_count_ = 0;
    active_.clear();
    aborted_ = false;

    ConcreteRun out;
    out.choices = choices;
    trace_ = build_trace ? &out.trace : nullptr;
    sink_ = &sink;

    int block = p_.entry;
    while (!aborted_) {
      deactivate_at(block);
      const BasicBlock& bb = p_.blocks[static_cast<size_t>(block)];
      for (int i = 0; i < static_cast<int>(bb.body.size()) && !aborted_; ++i)
        exec_access(SiteKey{block, i}, bb.body[static_cast<size_t>(i)], false);
      if (aborted_) break;

      const Terminator& t = bb.term;
      if (t.kind == TermKind::Exit) break;
      int next;
      if (t.kind == TermKind::Goto) {
        next = t.target;
      } else {
        const int outcome = choose(2);
        const int actual = outcome == 0 ? t.target : t.else_target;
        if (engine_.spec) {
          const int pred = choose(2);
          const int predicted = pred == 0 ? t.target : t.else_target;
          if (predicted != actual) {
            const int entitlement = concrete_entitlement(t);
            window(predicted, entitlement);
            if (!aborted_ && engine_.spec->strategy == MergeStrategy::JustInTime)
              activate(block);
          }
        }
        next = actual;
      }
      if (!cross_edge(block, next)) {
        out.truncated = true;
        break;
      }
      block = next;
    }
    if (cursor_ != choices_->values.size() && !aborted_)
      throw std::invalid_argument("unused trailing choices in run vector");
    return out;
  }

private:
  int choose(int options) {
    if (cursor_ >= choices_->values.size()) throw NeedChoice{options};
    const int v = choices_->values[cursor_++];
    if (v < 0 || v >= options)
      throw std::invalid_argument("choice out of range");
    return v;
  }

  bool cross_edge(int from, int to) {
    if (back_edges_.count({from, to}) && ++back_edge_count_ > opts_.loop_cap)
      return false;
    return true;
  }

  int concrete_entitlement(const Terminator& t) const {
    if (opts_.strict_depth) return engine_.spec->depth_miss;
    for (int v : t.cond_vars)
      if (!cache_.cached(v)) return engine_.spec->depth_miss;
    return engine_.spec->depth_hit;
  }

  void activate(int branch_block) {
    const PlanEntry* e = plan_.for_branch(branch_block);
    assert(e);
    const Color c = engine_.spec->colors_enabled ? e->color : 0;
    active_.push_back({c, e->stop});
  }

  void deactivate_at(int block) {
    if (!engine_.spec) return;
    if (engine_.spec->colors_enabled) {
      active_.erase(std::remove_if(active_.begin(), active_.end(),
                                   [&](const ActiveSlot& a) { return a.stop == block; }),
                    active_.end());
    } else {
      // The shared slot converts at any branch's stop node.
      for (const PlanEntry& e : plan_.entries)
        if (e.stop == block) {
          active_.clear();
          return;
        }
    }
  }

  void window(int start, int entitlement) {
    int block = start;
    int idx = 0;
    int steps = 0;
    while (steps < entitlement && !aborted_) {
      if (choose(2) == 0) return; // roll back now
      // Hop through terminators to the next instruction.
      const BasicBlock* bb = &p_.blocks[static_cast<size_t>(block)];
      while (idx >= static_cast<int>(bb->body.size())) {
        const Terminator& t = bb->term;
        if (t.kind == TermKind::Exit) return; // window dies at program exit
        int next;
        if (t.kind == TermKind::Goto)
          next = t.target;
        else
          next = choose(2) == 0 ? t.target : t.else_target;
        if (!cross_edge(block, next)) return; // looped out its budget
        block = next;
        idx = 0;
        bb = &p_.blocks[static_cast<size_t>(block)];
      }
      exec_access(SiteKey{block, idx}, bb->body[static_cast<size_t>(idx)], true);
      ++idx;
      ++steps;
    }
  }

  void exec_access(const SiteKey& site, const Instruction& inst, bool speculative) {
    int v = -1;
    switch (inst.kind) {
    case InstKind::Nop: return;
    case InstKind::Ref: v = inst.var; break;
    case InstKind::RegionUnknown:
    case InstKind::SecretRef: {
      const Region& r = p_.regions[static_cast<size_t>(inst.region)];
      if (!speculative && engine_.region_mode == RegionMode::Rotating && rotation_) {
        auto it = rotation_->rotating_line.find(site);
        if (it != rotation_->rotating_line.end()) {
          v = it->second;
          break;
        }
      }
      v = r.first_var + choose(r.size);
      break;
    }
    }
    PointInfo pi;
    pi.site = site;
    pi.speculative = speculative;
    if (!active_.empty()) pi.covering = active_.back().color;
    pi.var = v;
    pi.hit = cache_.cached(v);
    pi.before = &cache_;
    if (sink_ && !(*sink_)(pi)) {
      aborted_ = true;
      return;
    }
    cache_.access(v);
    if (trace_)
      trace_->push_back(TracePoint{site, speculative, v, pi.hit, cache_.lines()});
  }

  struct ActiveSlot {
    Color color;
    int stop;
  };

  const Program& p_;
  const EngineConfig& engine_;
  const OracleOptions& opts_;
  const FixpointResult* rotation_;
  SpecPlan plan_;
  std::set<std::pair<int, int>> back_edges_;

  const RunChoices* choices_ = nullptr;
  size_t cursor_ = 0;
  ConcreteCache cache_{1};
  int back_edge_count_ = 0;
  std::vector<ActiveSlot> active_;
  bool aborted_ = false;
  std::vector<TracePoint>* trace_ = nullptr;
  const PointSink* sink_ = nullptr;
};

const PointSink kNoSink = [](const PointInfo&) { return true; };

} // namespace

ConcreteRun simulate(const Program& p, const RunChoices& choices,
                     const EngineConfig& engine, const OracleOptions& opts,
                     const FixpointResult* rotation) {
  Executor ex(p, engine, opts, rotation);
  try {
    return ex.run(choices, kNoSink, /*build_trace=*/true);
  } catch (const NeedChoice&) {
    throw std::invalid_argument("run-choice vector is incomplete");
  }
}

EnumerationStats enumerate_runs(const Program& p, const EngineConfig& engine,
                                const OracleOptions& opts,
                                const FixpointResult* rotation,
                                const std::function<bool(const RunChoices&)>& yield) {
  Executor ex(p, engine, opts, rotation);
  EnumerationStats stats;
  std::vector<RunChoices> stack{RunChoices{}};
  while (!stack.empty()) {
    RunChoices cur = std::move(stack.back());
    stack.pop_back();
    try {
      ConcreteRun run = ex.run(cur, kNoSink, /*build_trace=*/false);
      if (run.truncated) stats.any_truncated = true;
      ++stats.runs;
      if (!yield(cur)) return stats;
      if (stats.runs >= opts.budget) {
        stats.budget_exceeded = !stack.empty();
        return stats;
      }
    } catch (const NeedChoice& nc) {
      for (int opt = nc.options - 1; opt >= 0; --opt) {
        RunChoices next = cur;
        next.values.push_back(opt);
        stack.push_back(std::move(next));
      }
    }
  }
  return stats;
}

namespace {

// Precomputed per-site claims for the checking callback.
struct Claims {
  const FixpointResult* result;
  bool shadow = false;
  std::map<SiteKey, bool> combined_must_hit;
};

Claims build_claims(const Program& p, const EngineConfig& engine,
                    const FixpointResult& result) {
  Claims c;
  c.result = &result;
  c.shadow = engine.cache.shadow;
  std::vector<SiteVerdict> verdicts = classify(result, p, engine);
  std::map<SiteKey, bool> must;
  for (const SiteVerdict& v : verdicts) {
    // Recover the engine-side key through block/copy identity.
    int block = -1;
    for (int b = 0; b < static_cast<int>(p.blocks.size()); ++b)
      if (p.blocks[static_cast<size_t>(b)].source_id == v.site.block &&
          p.blocks[static_cast<size_t>(b)].copy == v.site.copy) {
        block = b;
        break;
      }
    bool all = v.normally_reached && v.normal == HitVerdict::MustHit;
    for (const SlotVerdict& s : v.speculative)
      if (s.verdict == HitVerdict::MayMiss) all = false;
    must[SiteKey{block, v.site.index}] = all;
  }
  c.combined_must_hit = std::move(must);
  return c;
}

std::optional<std::string> check_point(const Claims& claims, const PointInfo& pi) {
  auto site_it = claims.result->per_site_in.find(pi.site);
  if (site_it == claims.result->per_site_in.end())
    return "access at a site the analysis never reached";
  const SiteStates& states = site_it->second;
  const AbstractCacheState* covering = nullptr;
  if (pi.covering) {
    auto it = states.slots.find(*pi.covering);
    if (it == states.slots.end() || !it->second.reached)
      return "no speculative slot covers this post-rollback access";
    covering = &it->second;
  } else {
    if (!states.normal.reached) return "normal flow never reaches this site";
    covering = &states.normal;
  }
  auto claim = claims.combined_must_hit.find(pi.site);
  if (claim != claims.combined_must_hit.end() && claim->second && !pi.hit)
    return "site is classified must-hit but the access misses";
  const std::vector<int>& lines = pi.before->lines();
  for (size_t pos = 0; pos < lines.size(); ++pos) {
    const int w = lines[pos];
    const Age concrete = static_cast<Age>(pos) + 1;
    if (concrete > covering->must[static_cast<size_t>(w)]) {
      std::ostringstream os;
      os << "variable index " << w << " has concrete age " << concrete
         << " above its must age " << covering->must[static_cast<size_t>(w)];
      return os.str();
    }
    if (claims.shadow && covering->may[static_cast<size_t>(w)] > concrete) {
      std::ostringstream os;
      os << "variable index " << w << " has concrete age " << concrete
         << " below its shadow age " << covering->may[static_cast<size_t>(w)];
      return os.str();
    }
  }
  return std::nullopt;
}

} // namespace

SoundnessVerdict check_soundness(const Program& p, const EngineConfig& engine,
                                 const OracleOptions& opts) {
  FixpointResult result =
      engine.spec ? run_speculative(p, engine) : run_baseline(p, engine);
  Claims claims = build_claims(p, engine, result);
  const FixpointResult* rotation =
      engine.region_mode == RegionMode::Rotating ? &result : nullptr;

  SoundnessVerdict verdict;

  if (!opts.parallel) {
    Executor ex(p, engine, opts, rotation);
    std::vector<RunChoices> stack{RunChoices{}};
    while (!stack.empty() && !verdict.violation) {
      RunChoices cur = std::move(stack.back());
      stack.pop_back();
      try {
        std::optional<Violation> found;
        const PointSink sink = [&](const PointInfo& pi) {
          if (pi.speculative) return true;
          if (auto err = check_point(claims, pi)) {
            found = Violation{cur, verdict.runs, pi.site, *err};
            return false;
          }
          return true;
        };
        ConcreteRun run = ex.run(cur, sink, /*build_trace=*/false);
        if (run.truncated) verdict.any_truncated = true;
        ++verdict.runs;
        if (found) {
          verdict.ok = false;
          verdict.violation = std::move(found);
          break;
        }
        if (verdict.runs >= opts.budget) {
          verdict.budget_exceeded = !stack.empty();
          break;
        }
      } catch (const NeedChoice& nc) {
        for (int opt = nc.options - 1; opt >= 0; --opt) {
          RunChoices next = cur;
          next.values.push_back(opt);
          stack.push_back(std::move(next));
        }
      }
    }
    return verdict;
  }

  // Parallel mode: enumerate the choice vectors first, then re-simulate and
  // check them concurrently; the reported counterexample is the one with the
  // least enumeration index, matching the serial result.
  std::vector<RunChoices> all;
  EnumerationStats stats =
      enumerate_runs(p, engine, opts, rotation, [&](const RunChoices& c) {
        all.push_back(c);
        return true;
      });
  verdict.runs = stats.runs;
  verdict.budget_exceeded = stats.budget_exceeded;
  verdict.any_truncated = stats.any_truncated;

  std::int64_t best = -1;
  std::optional<Violation> best_violation;
#ifdef _OPENMP
#pragma omp parallel
  {
    std::int64_t local_best = -1;
    std::optional<Violation> local_violation;
    Executor ex(p, engine, opts, rotation);
#pragma omp for schedule(dynamic, 64)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(all.size()); ++i) {
      if (local_best >= 0 && local_best < i) continue;
      std::optional<Violation> found;
      const PointSink sink = [&](const PointInfo& pi) {
        if (pi.speculative) return true;
        if (auto err = check_point(claims, pi)) {
          found = Violation{all[static_cast<size_t>(i)],
                            static_cast<std::uint64_t>(i), pi.site, *err};
          return false;
        }
        return true;
      };
      ex.run(all[static_cast<size_t>(i)], sink, false);
      if (found && (local_best < 0 || i < local_best)) {
        local_best = i;
        local_violation = std::move(found);
      }
    }
#pragma omp critical
    {
      if (local_best >= 0 && (best < 0 || local_best < best)) {
        best = local_best;
        best_violation = std::move(local_violation);
      }
    }
  }
#else
  Executor ex(p, engine, opts, rotation);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(all.size()) && best < 0; ++i) {
    std::optional<Violation> found;
    const PointSink sink = [&](const PointInfo& pi) {
      if (pi.speculative) return true;
      if (auto err = check_point(claims, pi)) {
        found = Violation{all[static_cast<size_t>(i)], static_cast<std::uint64_t>(i),
                          pi.site, *err};
        return false;
      }
      return true;
    };
    ex.run(all[static_cast<size_t>(i)], sink, false);
    if (found) {
      best = i;
      best_violation = std::move(found);
    }
  }
#endif
  if (best_violation) {
    verdict.ok = false;
    verdict.violation = std::move(best_violation);
  }
  return verdict;
}

std::string violation_to_json(const Violation& v, const Program& p) {
  nlohmann::ordered_json j;
  j["choices"] = v.choices.values;
  j["run_index"] = v.run_index;
  nlohmann::ordered_json site;
  site["block"] = p.blocks[static_cast<size_t>(v.site.block)].id;
  site["index"] = v.site.index;
  j["site"] = site;
  j["violated"] = v.what;
  return j.dump(2) + "\n";
}

std::optional<RunChoices> choices_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) return std::nullopt;
  const nlohmann::json* arr = nullptr;
  if (j.is_array())
    arr = &j;
  else if (j.is_object() && j.contains("choices") && j["choices"].is_array())
    arr = &j["choices"];
  if (!arr) return std::nullopt;
  RunChoices c;
  for (const auto& e : *arr) {
    if (!e.is_number_integer()) return std::nullopt;
    c.values.push_back(e.get<int>());
  }
  return c;
}

Program gen_program(const FuzzSpec& fuzz) {
  std::mt19937_64 rng(fuzz.seed * 0x9e3779b97f4a7c15ull + 0xd1b54a32d192ed03ull);
  auto pick = [&rng](int n) { return static_cast<int>(rng() % static_cast<unsigned>(n)); };

  std::ostringstream src;
  const int nv = 2 + pick(std::max(1, fuzz.max_vars - 1));
  const bool with_region = fuzz.max_region_size >= 1 && pick(2) == 0;
  const int region_size = with_region ? 1 + pick(fuzz.max_region_size) : 0;
  src << "config lines=8\n"; // overridden by the engine config in use
  for (int i = 0; i < nv; ++i) src << "var v" << i << "\n";
  if (with_region) src << "region r0 size=" << region_size << "\n";
  const int nb = 2 + pick(std::max(1, fuzz.max_blocks - 1));
  src << "entry b0\n";

  int branches = 0;
  for (int b = 0; b < nb; ++b) {
    src << "block b" << b << ":\n";
    const int body = pick(fuzz.max_body + 1);
    for (int i = 0; i < body; ++i) {
      const int roll = pick(100);
      if (with_region && roll < 12)
        src << "  ref r0[*]\n";
      else if (with_region && roll < 18)
        src << "  ref r0[" << pick(region_size) << "]\n";
      else if (with_region && roll < 22)
        src << "  secret_ref r0\n";
      else if (roll < 30)
        src << "  nop\n";
      else
        src << "  ref v" << pick(nv) << "\n";
    }
    if (b == nb - 1) {
      src << "  exit\n";
      continue;
    }
    const int roll = pick(100);
    if (branches < fuzz.max_branches && roll < 35) {
      ++branches;
      const int t1 = b + 1;
      int t2 = b + 1 + pick(nb - b - 1);
      if (fuzz.loop_allowed && roll < 8 && b > 0) t2 = pick(b + 1); // back edge
      std::string cond;
      if (pick(3) != 0) cond = "v" + std::to_string(pick(nv));
      src << "  branch " << cond << " ? b" << t1 << " : b" << t2 << "\n";
    } else if (roll < 45) {
      src << "  exit\n";
    } else {
      src << "  goto b" << (b + 1) << "\n";
    }
  }
  return parse_program(src.str());
}

} // namespace specache
