#include "specache/analyses.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

namespace specache {

namespace {

// Must-hit requires the accessed line to be provably cached in the incoming
// state. Unknown-index accesses cannot be classified under havoc; under
// rotating they are judged on the line designated for the site.
HitVerdict classify_one(const Instruction& inst, const AbstractCacheState& in,
                        const Program& p, const EngineConfig& engine,
                        const FixpointResult& result, const SiteKey& key) {
  const int n = engine.cache.num_lines;
  switch (inst.kind) {
  case InstKind::Nop: return HitVerdict::MustHit; // no memory access
  case InstKind::Ref:
    return in.must[static_cast<size_t>(inst.var)] <= n ? HitVerdict::MustHit
                                                       : HitVerdict::MayMiss;
  case InstKind::RegionUnknown:
  case InstKind::SecretRef: {
    if (engine.region_mode == RegionMode::Havoc) return HitVerdict::MayMiss;
    auto it = result.rotating_line.find(key);
    if (it == result.rotating_line.end()) return HitVerdict::MayMiss;
    return in.must[static_cast<size_t>(it->second)] <= n ? HitVerdict::MustHit
                                                         : HitVerdict::MayMiss;
  }
  }
  return HitVerdict::MayMiss;
}

std::string target_name(const Instruction& inst, const Program& p) {
  switch (inst.kind) {
  case InstKind::Ref: return p.vars[static_cast<size_t>(inst.var)].name;
  case InstKind::RegionUnknown:
    return p.regions[static_cast<size_t>(inst.region)].name + "[*]";
  case InstKind::SecretRef:
    return p.regions[static_cast<size_t>(inst.region)].name;
  case InstKind::Nop: return "";
  }
  return "";
}

} // namespace

std::vector<SiteVerdict> classify(const FixpointResult& result, const Program& p,
                                  const EngineConfig& engine) {
  std::vector<SiteVerdict> out;
  for (const auto& [key, states] : result.per_site_in) {
    const Instruction& inst =
        p.blocks[static_cast<size_t>(key.block)].body[static_cast<size_t>(key.index)];
    if (inst.kind == InstKind::Nop) continue;
    SiteVerdict v;
    v.site = p.site_of(key.block, key.index);
    v.target = target_name(inst, p);
    v.normally_reached = states.normal.reached;
    if (states.normal.reached)
      v.normal = classify_one(inst, states.normal, p, engine, result, key);
    for (const auto& [c, st] : states.slots)
      if (st.reached)
        v.speculative.push_back(
            SlotVerdict{c, classify_one(inst, st, p, engine, result, key)});
    out.push_back(std::move(v));
  }
  return out;
}

std::pair<int, int> count_misses(const std::vector<SiteVerdict>& verdicts) {
  int miss = 0, spec_miss = 0;
  for (const SiteVerdict& v : verdicts) {
    const bool slot_miss =
        std::any_of(v.speculative.begin(), v.speculative.end(),
                    [](const SlotVerdict& s) { return s.verdict == HitVerdict::MayMiss; });
    if (!v.normally_reached) {
      if (slot_miss) ++spec_miss; // reachable only speculatively
      continue;
    }
    if (v.normal == HitVerdict::MayMiss)
      ++miss;
    else if (slot_miss)
      ++spec_miss;
  }
  return {miss, spec_miss};
}

std::vector<LeakEntry> detect_leaks(const FixpointResult& result, const Program& p,
                                    const EngineConfig& engine) {
  std::vector<LeakEntry> out;
  const int n = engine.cache.num_lines;
  for (const auto& [key, states] : result.per_site_in) {
    const Instruction& inst =
        p.blocks[static_cast<size_t>(key.block)].body[static_cast<size_t>(key.index)];
    if (inst.kind != InstKind::SecretRef) continue;
    const Region& r = p.regions[static_cast<size_t>(inst.region)];
    LeakEntry e;
    e.site = p.site_of(key.block, key.index);
    e.region = r.name;
    for (int i = 0; i < r.size; ++i) {
      const size_t line = static_cast<size_t>(r.first_var + i);
      bool must_hit = states.normal.reached && states.normal.must[line] <= n;
      for (const auto& [c, st] : states.slots)
        if (st.reached && st.must[line] > n) must_hit = false;
      if (!states.normal.reached && !states.slots.empty()) {
        // Only speculative flows reach the site; judge on those alone.
        must_hit = true;
        for (const auto& [c, st] : states.slots)
          if (st.reached && st.must[line] > n) must_hit = false;
      }
      (must_hit ? e.must_hit_lines : e.possibly_evicted_lines)
          .push_back(p.vars[line].name);
    }
    e.leaking = !e.possibly_evicted_lines.empty();
    e.all_lines_possibly_evicted = e.must_hit_lines.empty();
    out.push_back(std::move(e));
  }
  return out;
}

AnalysisReport analyze(const FixpointResult& result, const Program& p,
                       const EngineConfig& engine) {
  AnalysisReport rep;
  rep.verdicts = classify(result, p, engine);
  std::tie(rep.miss_count, rep.spec_miss_count) = count_misses(rep.verdicts);
  rep.leaks = detect_leaks(result, p, engine);
  rep.iterations = result.iterations;
  return rep;
}

namespace {

nlohmann::ordered_json config_json(const EngineConfig& engine) {
  nlohmann::ordered_json cfg;
  cfg["lines"] = engine.cache.num_lines;
  cfg["shadow"] = engine.cache.shadow;
  cfg["region_mode"] = engine.region_mode == RegionMode::Rotating ? "rotating" : "havoc";
  if (engine.spec) {
    cfg["analysis"] = "speculative";
    cfg["depth_hit"] = engine.spec->depth_hit;
    cfg["depth_miss"] = engine.spec->depth_miss;
    cfg["strategy"] = engine.spec->strategy == MergeStrategy::JustInTime
                          ? "jit"
                          : "rollback";
    cfg["colors"] = engine.spec->colors_enabled;
  } else {
    cfg["analysis"] = "baseline";
  }
  return cfg;
}

nlohmann::ordered_json site_json(const Site& s) {
  nlohmann::ordered_json j;
  j["block"] = s.block;
  j["index"] = s.index;
  j["copy"] = s.copy;
  return j;
}

} // namespace

std::string report_to_json(const AnalysisReport& rep, const EngineConfig& engine) {
  nlohmann::ordered_json j;
  j["config"] = config_json(engine);
  j["verdicts"] = nlohmann::ordered_json::array();
  for (const SiteVerdict& v : rep.verdicts) {
    nlohmann::ordered_json vj;
    vj["site"] = site_json(v.site);
    vj["target"] = v.target;
    vj["normal"] = !v.normally_reached
                       ? "unreached"
                       : (v.normal == HitVerdict::MustHit ? "must-hit" : "may-miss");
    nlohmann::ordered_json slots = nlohmann::ordered_json::array();
    for (const SlotVerdict& s : v.speculative) {
      nlohmann::ordered_json sj;
      sj["color"] = s.color;
      sj["verdict"] = s.verdict == HitVerdict::MustHit ? "must-hit" : "may-miss";
      slots.push_back(sj);
    }
    vj["speculative"] = slots;
    j["verdicts"].push_back(vj);
  }
  j["miss_count"] = rep.miss_count;
  j["spec_miss_count"] = rep.spec_miss_count;
  j["leaks"] = nlohmann::ordered_json::array();
  for (const LeakEntry& e : rep.leaks) {
    nlohmann::ordered_json ej;
    ej["site"] = site_json(e.site);
    ej["region"] = e.region;
    ej["leaking"] = e.leaking;
    ej["must_hit_lines"] = e.must_hit_lines;
    ej["possibly_evicted_lines"] = e.possibly_evicted_lines;
    ej["all_lines_possibly_evicted"] = e.all_lines_possibly_evicted;
    j["leaks"].push_back(ej);
  }
  j["iterations"] = rep.iterations;
  return j.dump(2) + "\n";
}

std::string report_to_text(const AnalysisReport& rep, const EngineConfig& engine) {
  std::ostringstream os;
  os << "analysis: " << (engine.spec ? "speculative" : "baseline")
     << "  lines=" << engine.cache.num_lines
     << "  shadow=" << (engine.cache.shadow ? "on" : "off") << "  region-mode="
     << (engine.region_mode == RegionMode::Rotating ? "rotating" : "havoc");
  if (engine.spec)
    os << "  depth=" << engine.spec->depth_hit << "/" << engine.spec->depth_miss
       << "  strategy="
       << (engine.spec->strategy == MergeStrategy::JustInTime ? "jit" : "rollback");
  os << "\n";
  if (engine.region_mode == RegionMode::Rotating)
    os << "note: rotating region mode assumes successive unknown-index "
          "accesses walk distinct lines; it is not a proven-sound mode\n";
  os << "\n";
  os << "site                          target            normal     speculative\n";
  for (const SiteVerdict& v : rep.verdicts) {
    std::ostringstream site;
    site << v.site.block << "[" << v.site.index << "]";
    if (v.site.copy) site << "#" << v.site.copy;
    std::string spec;
    for (const SlotVerdict& s : v.speculative) {
      if (!spec.empty()) spec += " ";
      spec += "c" + std::to_string(s.color) + ":" +
              (s.verdict == HitVerdict::MustHit ? "must-hit" : "may-miss");
    }
    std::string normal = !v.normally_reached
                             ? "unreached"
                             : (v.normal == HitVerdict::MustHit ? "must-hit" : "may-miss");
    os << "  " << site.str() << std::string(std::max<int>(1, 28 - (int)site.str().size()), ' ')
       << v.target << std::string(std::max<int>(1, 18 - (int)v.target.size()), ' ')
       << normal << std::string(std::max<int>(1, 11 - (int)normal.size()), ' ')
       << spec << "\n";
  }
  os << "\n#Miss " << rep.miss_count << "  #SpMiss " << rep.spec_miss_count
     << "  #Iteration " << rep.iterations << "\n";
  if (!rep.leaks.empty()) {
    os << "\nleaks:\n";
    for (const LeakEntry& e : rep.leaks) {
      os << "  " << e.site.block << "[" << e.site.index << "] region " << e.region
         << ": " << (e.leaking ? "LEAK" : "no leak");
      if (e.leaking) {
        os << "  possibly evicted:";
        for (const std::string& l : e.possibly_evicted_lines) os << " " << l;
        if (e.all_lines_possibly_evicted) os << "  (no line is a guaranteed hit)";
      }
      os << "\n";
    }
  }
  return os.str();
}

} // namespace specache
