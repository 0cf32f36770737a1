#include "specache/cache_domain.hpp"

#include <algorithm>
#include <cassert>
#include <sstream>

namespace specache {

AbstractCacheState bottom() { return AbstractCacheState{}; }

AbstractCacheState top(int num_vars, const CacheConfig& cfg) {
  AbstractCacheState s;
  s.reached = true;
  s.must.assign(static_cast<size_t>(num_vars), cfg.evicted());
  if (cfg.shadow) s.may.assign(static_cast<size_t>(num_vars), cfg.evicted());
  return s;
}

AccessEffect havoc_effect(const Instruction& inst, const Program& program) {
  switch (inst.kind) {
  case InstKind::Nop: return AccessEffect{};
  case InstKind::Ref:
    return AccessEffect{AccessEffect::Kind::Known, inst.var, -1, 0};
  case InstKind::RegionUnknown:
  case InstKind::SecretRef: {
    const Region& r = program.regions[static_cast<size_t>(inst.region)];
    return AccessEffect{AccessEffect::Kind::UnknownHavoc, -1, r.first_var, r.size};
  }
  }
  return AccessEffect{};
}

namespace {

// Shadow update on an access of v: the accessed shadow becomes youngest and
// shadows at ages <= its old age grow one step. Note the "<=" here versus the
// "<" in the must rule.
void update_may(std::vector<Age>& may, int v, Age cap) {
  const Age old = may[static_cast<size_t>(v)];
  for (Age& a : may)
    if (a <= old && a < cap) ++a;
  may[static_cast<size_t>(v)] = 1;
}

} // namespace

AbstractCacheState transfer(const AbstractCacheState& s, const AccessEffect& e,
                            const CacheConfig& cfg) {
  assert(s.reached && "transfer requires a reached state");
  const Age cap = cfg.evicted();
  AbstractCacheState out = s;

  if (e.kind == AccessEffect::Kind::None) return out;

  if (e.kind == AccessEffect::Kind::UnknownHavoc) {
    // The accessed line is unknown and possibly uncached: every cached
    // variable may age, and no must age improves. The may age of each region
    // line drops to 1 (the touched line is youngest on some path).
    for (Age& a : out.must)
      if (a < cap) ++a;
    if (cfg.shadow)
      for (int i = 0; i < e.region_size; ++i) {
        Age& a = out.may[static_cast<size_t>(e.region_first + i)];
        a = std::min<Age>(a, 1);
      }
    return out;
  }

  const int v = e.var;
  const Age old_v = s.must[static_cast<size_t>(v)];

  if (!cfg.shadow) {
    for (size_t u = 0; u < out.must.size(); ++u)
      if (out.must[u] < old_v && out.must[u] < cap) ++out.must[u];
    out.must[static_cast<size_t>(v)] = 1;
    return out;
  }

  // Shadow-refined rule: first the may side, then must aging gated by the
  // number of shadows at ages <= Age(u).
  update_may(out.may, v, cap);
  for (size_t u = 0; u < out.must.size(); ++u) {
    const Age age_u = s.must[u];
    if (!(age_u < old_v) || static_cast<int>(u) == v) continue;
    int n_young = 0;
    for (size_t w = 0; w < out.may.size(); ++w) {
      if (w == u) continue;
      const bool younger = cfg.mutate_refine_count ? (out.may[w] < age_u)
                                                   : (out.may[w] <= age_u);
      if (younger) ++n_young;
    }
    if (n_young >= age_u && out.must[u] < cap) ++out.must[u];
  }
  out.must[static_cast<size_t>(v)] = 1;
  return out;
}

AbstractCacheState join(const AbstractCacheState& a, const AbstractCacheState& b,
                        const CacheConfig& cfg) {
  (void)cfg;
  if (!a.reached) return b;
  if (!b.reached) return a;
  assert(a.must.size() == b.must.size());
  AbstractCacheState out = a;
  for (size_t i = 0; i < out.must.size(); ++i)
    out.must[i] = std::max(a.must[i], b.must[i]);
  for (size_t i = 0; i < out.may.size(); ++i)
    out.may[i] = std::min(a.may[i], b.may[i]);
  return out;
}

bool leq(const AbstractCacheState& a, const AbstractCacheState& b) {
  if (!a.reached) return true;
  if (!b.reached) return false;
  assert(a.must.size() == b.must.size());
  for (size_t i = 0; i < a.must.size(); ++i)
    if (a.must[i] > b.must[i]) return false;
  for (size_t i = 0; i < a.may.size(); ++i)
    if (a.may[i] < b.may[i]) return false;
  return true;
}

namespace {

struct BucketEntry {
  bool shadow;
  int var;
};

std::string render_buckets(const std::vector<std::vector<BucketEntry>>& buckets,
                           Age oldest, const Program& p, int width) {
  std::ostringstream os;
  os << "[";
  for (int pos = 1; pos <= width; ++pos) {
    if (pos > 1) os << ", ";
    const auto& entries = buckets[static_cast<size_t>(pos)];
    if (entries.empty()) {
      os << (pos <= oldest ? "{}" : "⊥");
      continue;
    }
    const bool braces = entries.size() > 1;
    if (braces) os << "{";
    for (size_t i = 0; i < entries.size(); ++i) {
      if (i) os << ",";
      if (entries[i].shadow) os << "∃";
      os << p.vars[static_cast<size_t>(entries[i].var)].name;
    }
    if (braces) os << "}";
  }
  os << "]";
  return os.str();
}

} // namespace

std::string format_must_row(const AbstractCacheState& s, const Program& p,
                            const CacheConfig& cfg, int width) {
  if (width < 0) width = cfg.num_lines;
  std::vector<std::vector<BucketEntry>> buckets(static_cast<size_t>(width) + 1);
  Age oldest = 0;
  if (s.reached)
    for (size_t v = 0; v < s.must.size(); ++v)
      if (s.must[v] <= cfg.num_lines && s.must[v] <= width) {
        buckets[static_cast<size_t>(s.must[v])].push_back({false, static_cast<int>(v)});
        oldest = std::max(oldest, s.must[v]);
      }
  return render_buckets(buckets, oldest, p, width);
}

std::string format_may_row(const AbstractCacheState& s, const Program& p,
                           const CacheConfig& cfg, int width) {
  if (width < 0) width = cfg.num_lines;
  std::vector<std::vector<BucketEntry>> buckets(static_cast<size_t>(width) + 1);
  Age oldest = 0;
  if (s.reached)
    for (size_t v = 0; v < s.may.size(); ++v)
      if (s.may[v] <= cfg.num_lines && s.may[v] <= width) {
        buckets[static_cast<size_t>(s.may[v])].push_back({true, static_cast<int>(v)});
        oldest = std::max(oldest, s.may[v]);
      }
  return render_buckets(buckets, oldest, p, width);
}

std::string format_state(const AbstractCacheState& s, const Program& p,
                         const CacheConfig& cfg, int width) {
  if (width < 0) width = cfg.num_lines;
  std::vector<std::vector<BucketEntry>> buckets(static_cast<size_t>(width) + 1);
  Age oldest = 0;
  if (s.reached) {
    for (size_t v = 0; v < s.may.size(); ++v)
      if (s.may[v] <= cfg.num_lines && s.may[v] <= width) {
        buckets[static_cast<size_t>(s.may[v])].push_back({true, static_cast<int>(v)});
        oldest = std::max(oldest, s.may[v]);
      }
    for (size_t v = 0; v < s.must.size(); ++v)
      if (s.must[v] <= cfg.num_lines && s.must[v] <= width) {
        buckets[static_cast<size_t>(s.must[v])].push_back({false, static_cast<int>(v)});
        oldest = std::max(oldest, s.must[v]);
      }
  }
  return render_buckets(buckets, oldest, p, width);
}

std::string format_trace_row(const AbstractCacheState& s, const Program& p,
                             const CacheConfig& cfg) {
  if (!s.reached) return "⊥";
  Age oldest = 0;
  for (Age a : s.must)
    if (a <= cfg.num_lines) oldest = std::max(oldest, a);
  if (oldest == 0) return "{ }";
  std::vector<std::vector<int>> buckets(static_cast<size_t>(oldest) + 1);
  for (size_t v = 0; v < s.must.size(); ++v)
    if (s.must[v] <= oldest) buckets[static_cast<size_t>(s.must[v])].push_back(static_cast<int>(v));
  std::ostringstream os;
  os << "{";
  for (Age pos = 1; pos <= oldest; ++pos) {
    if (pos > 1) os << ", ";
    const auto& entries = buckets[static_cast<size_t>(pos)];
    if (entries.empty()) {
      os << "∅";
      continue;
    }
    for (size_t i = 0; i < entries.size(); ++i) {
      if (i) os << ",";
      const Var& var = p.vars[static_cast<size_t>(entries[i])];
      if (var.region >= 0)
        os << p.regions[static_cast<size_t>(var.region)].name << "["
           << (var.line_in_region + 1) << "*]";
      else
        os << var.name;
    }
  }
  os << "}";
  return os.str();
}

} // namespace specache
