#include "specache/ir.hpp"

#include <algorithm>
#include <cassert>
#include <deque>
#include <set>
#include <sstream>

namespace specache {

ParseError::ParseError(int line, const std::string& msg)
    : std::runtime_error("line " + std::to_string(line) + ": " + msg),
      line_(line) {}

int Program::var_index(const std::string& name) const {
  for (size_t i = 0; i < vars.size(); ++i)
    if (vars[i].name == name) return static_cast<int>(i);
  return -1;
}

int Program::region_index(const std::string& name) const {
  for (size_t i = 0; i < regions.size(); ++i)
    if (regions[i].name == name) return static_cast<int>(i);
  return -1;
}

int Program::block_index(const std::string& id) const {
  for (size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].id == id) return static_cast<int>(i);
  return -1;
}

std::vector<int> Program::successors(int block) const {
  const Terminator& t = blocks[block].term;
  switch (t.kind) {
  case TermKind::Goto: return {t.target};
  case TermKind::Branch:
    if (t.target == t.else_target) return {t.target};
    return {t.target, t.else_target};
  case TermKind::Exit: return {};
  }
  return {};
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

bool valid_ident(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
          c == '.' || c == '#'))
      return false;
  return !std::isdigit(static_cast<unsigned char>(s[0]));
}

struct PendingTerm {
  int line = 0;
  std::string text;
};

} // namespace

Program parse_program(const std::string& text) {
  Program p;
  bool saw_config = false;
  std::string entry_name;
  int entry_line = 0;
  std::vector<std::pair<std::string, int>> hint_names; // (block, k)
  std::vector<int> hint_lines;

  struct RawBlock {
    std::string id;
    int line;
    std::vector<std::pair<std::string, int>> stmts; // (text, line)
  };
  std::vector<RawBlock> raw;
  RawBlock* cur = nullptr;

  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string stmt = trim(line);
    if (stmt.empty()) continue;

    std::vector<std::string> toks = split_ws(stmt);
    const std::string& kw = toks[0];

    if (kw == "config") {
      if (toks.size() != 2 || toks[1].rfind("lines=", 0) != 0)
        throw ParseError(lineno, "expected 'config lines=<N>'");
      try {
        p.num_lines = std::stoi(toks[1].substr(6));
      } catch (...) {
        throw ParseError(lineno, "bad line count in config");
      }
      if (p.num_lines < 1) throw ParseError(lineno, "cache must have >= 1 line");
      saw_config = true;
      cur = nullptr;
    } else if (kw == "var") {
      if (toks.size() < 2) throw ParseError(lineno, "expected 'var <id> ...'");
      for (size_t i = 1; i < toks.size(); ++i) {
        if (!valid_ident(toks[i]))
          throw ParseError(lineno, "bad variable name '" + toks[i] + "'");
        if (p.var_index(toks[i]) >= 0 || p.region_index(toks[i]) >= 0)
          throw ParseError(lineno, "duplicate declaration of '" + toks[i] + "'");
        p.vars.push_back(Var{toks[i], -1, -1});
      }
      cur = nullptr;
    } else if (kw == "region") {
      if (toks.size() != 3 || toks[2].rfind("size=", 0) != 0)
        throw ParseError(lineno, "expected 'region <id> size=<m>'");
      if (!valid_ident(toks[1]))
        throw ParseError(lineno, "bad region name '" + toks[1] + "'");
      if (p.var_index(toks[1]) >= 0 || p.region_index(toks[1]) >= 0)
        throw ParseError(lineno, "duplicate declaration of '" + toks[1] + "'");
      int size = 0;
      try {
        size = std::stoi(toks[2].substr(5));
      } catch (...) {
        throw ParseError(lineno, "bad region size");
      }
      if (size < 1) throw ParseError(lineno, "region size must be >= 1");
      Region r{toks[1], size, static_cast<int>(p.vars.size())};
      int ridx = static_cast<int>(p.regions.size());
      for (int i = 0; i < size; ++i)
        p.vars.push_back(Var{toks[1] + "." + std::to_string(i), ridx, i});
      p.regions.push_back(r);
      cur = nullptr;
    } else if (kw == "entry") {
      if (toks.size() != 2) throw ParseError(lineno, "expected 'entry <bb>'");
      entry_name = toks[1];
      entry_line = lineno;
      cur = nullptr;
    } else if (kw == "unroll") {
      if (toks.size() != 3) throw ParseError(lineno, "expected 'unroll <bb> <k>'");
      int k = 0;
      try {
        k = std::stoi(toks[2]);
      } catch (...) {
        throw ParseError(lineno, "bad unroll count");
      }
      if (k < 1) throw ParseError(lineno, "unroll count must be >= 1");
      hint_names.emplace_back(toks[1], k);
      hint_lines.push_back(lineno);
      cur = nullptr;
    } else if (kw == "block") {
      if (toks.size() != 2 || toks[1].empty() || toks[1].back() != ':')
        throw ParseError(lineno, "expected 'block <bb>:'");
      std::string id = toks[1].substr(0, toks[1].size() - 1);
      if (!valid_ident(id)) throw ParseError(lineno, "bad block id '" + id + "'");
      for (const RawBlock& rb : raw)
        if (rb.id == id)
          throw ParseError(lineno, "duplicate block id '" + id + "'");
      raw.push_back(RawBlock{id, lineno, {}});
      cur = &raw.back();
    } else {
      if (!cur)
        throw ParseError(lineno, "statement outside of a block: '" + stmt + "'");
      cur->stmts.emplace_back(stmt, lineno);
    }
  }

  if (!saw_config) throw ParseError(lineno, "missing 'config lines=<N>'");
  if (entry_name.empty()) throw ParseError(lineno, "missing 'entry <bb>'");
  if (raw.empty()) throw ParseError(lineno, "program has no blocks");

  // Second pass: resolve block bodies and terminators.
  auto block_pos = [&raw](const std::string& id) -> int {
    for (size_t i = 0; i < raw.size(); ++i)
      if (raw[i].id == id) return static_cast<int>(i);
    return -1;
  };

  auto parse_ref_target = [&p](const std::string& tok, int ln) -> Instruction {
    size_t lb = tok.find('[');
    if (lb == std::string::npos) {
      int v = p.var_index(tok);
      if (v >= 0) return Instruction{InstKind::Ref, v, p.vars[v].region};
      if (p.region_index(tok) >= 0)
        throw ParseError(ln, "'" + tok + "' is a region; use " + tok +
                                 "[<i>] or " + tok + "[*]");
      throw ParseError(ln, "undeclared variable '" + tok + "'");
    }
    if (tok.back() != ']') throw ParseError(ln, "malformed region access");
    std::string rname = tok.substr(0, lb);
    std::string idx = tok.substr(lb + 1, tok.size() - lb - 2);
    int r = p.region_index(rname);
    if (r < 0) throw ParseError(ln, "undeclared region '" + rname + "'");
    if (idx == "*") return Instruction{InstKind::RegionUnknown, -1, r};
    int i = -1;
    try {
      i = std::stoi(idx);
    } catch (...) {
      throw ParseError(ln, "bad region index '" + idx + "'");
    }
    if (i < 0 || i >= p.regions[r].size)
      throw ParseError(ln, "region index " + idx + " out of range for '" +
                               rname + "' (size " +
                               std::to_string(p.regions[r].size) + ")");
    return Instruction{InstKind::Ref, p.regions[r].first_var + i, r};
  };

  for (const RawBlock& rb : raw) {
    BasicBlock bb;
    bb.id = rb.id;
    bb.source_id = rb.id;
    bool terminated = false;
    for (const auto& [stmt, ln] : rb.stmts) {
      if (terminated)
        throw ParseError(ln, "statement after terminator in block '" + rb.id + "'");
      std::vector<std::string> toks = split_ws(stmt);
      const std::string& kw = toks[0];
      if (kw == "ref") {
        if (toks.size() != 2) throw ParseError(ln, "expected 'ref <target>'");
        bb.body.push_back(parse_ref_target(toks[1], ln));
      } else if (kw == "secret_ref") {
        if (toks.size() != 2) throw ParseError(ln, "expected 'secret_ref <region>'");
        int r = p.region_index(toks[1]);
        if (r < 0) throw ParseError(ln, "undeclared region '" + toks[1] + "'");
        bb.body.push_back(Instruction{InstKind::SecretRef, -1, r});
      } else if (kw == "nop") {
        bb.body.push_back(Instruction{InstKind::Nop, -1, -1});
      } else if (kw == "goto") {
        if (toks.size() != 2) throw ParseError(ln, "expected 'goto <bb>'");
        int t = block_pos(toks[1]);
        if (t < 0) throw ParseError(ln, "goto to unknown block '" + toks[1] + "'");
        bb.term = Terminator{TermKind::Goto, t, -1, {}};
        terminated = true;
      } else if (kw == "branch") {
        // branch <v1,v2,...> ? <bbT> : <bbE>   (condition list may be empty)
        std::string rest = trim(stmt.substr(6));
        size_t q = rest.find('?');
        if (q == std::string::npos) throw ParseError(ln, "branch needs '?'");
        std::string condpart = trim(rest.substr(0, q));
        std::string arms = trim(rest.substr(q + 1));
        size_t colon = arms.find(':');
        if (colon == std::string::npos) throw ParseError(ln, "branch needs ':'");
        std::string tname = trim(arms.substr(0, colon));
        std::string ename = trim(arms.substr(colon + 1));
        Terminator t;
        t.kind = TermKind::Branch;
        if (!condpart.empty()) {
          std::istringstream cs(condpart);
          std::string v;
          std::set<int> seen;
          while (std::getline(cs, v, ',')) {
            v = trim(v);
            if (v.empty()) continue;
            int vi = p.var_index(v);
            if (vi < 0) throw ParseError(ln, "undeclared variable '" + v + "'");
            seen.insert(vi);
          }
          t.cond_vars.assign(seen.begin(), seen.end());
        }
        t.target = block_pos(tname);
        if (t.target < 0) throw ParseError(ln, "branch to unknown block '" + tname + "'");
        t.else_target = block_pos(ename);
        if (t.else_target < 0) throw ParseError(ln, "branch to unknown block '" + ename + "'");
        bb.term = t;
        terminated = true;
      } else if (kw == "exit") {
        bb.term = Terminator{TermKind::Exit, -1, -1, {}};
        terminated = true;
      } else {
        throw ParseError(ln, "unknown statement '" + kw + "'");
      }
    }
    if (!terminated)
      throw ParseError(rb.line, "block '" + rb.id + "' has no terminator");
    p.blocks.push_back(std::move(bb));
  }

  p.entry = p.block_index(entry_name);
  if (p.entry < 0)
    throw ParseError(entry_line, "entry block '" + entry_name + "' not declared");

  for (size_t h = 0; h < hint_names.size(); ++h) {
    int b = p.block_index(hint_names[h].first);
    if (b < 0)
      throw ParseError(hint_lines[h],
                       "unroll hint names unknown block '" + hint_names[h].first + "'");
    p.unroll_hints.emplace_back(b, hint_names[h].second);
  }
  return p;
}

std::string print_program(const Program& p) {
  std::ostringstream os;
  os << "config lines=" << p.num_lines << "\n";
  for (const Var& v : p.vars)
    if (v.region < 0) os << "var " << v.name << "\n";
  for (const Region& r : p.regions)
    os << "region " << r.name << " size=" << r.size << "\n";
  os << "entry " << p.blocks[p.entry].id << "\n";
  for (const auto& [b, k] : p.unroll_hints)
    os << "unroll " << p.blocks[b].id << " " << k << "\n";
  for (const BasicBlock& bb : p.blocks) {
    os << "block " << bb.id << ":\n";
    for (const Instruction& in : bb.body) {
      switch (in.kind) {
      case InstKind::Ref: os << "  ref " << p.vars[in.var].name << "\n"; break;
      case InstKind::RegionUnknown:
        os << "  ref " << p.regions[in.region].name << "[*]\n";
        break;
      case InstKind::SecretRef:
        os << "  secret_ref " << p.regions[in.region].name << "\n";
        break;
      case InstKind::Nop: os << "  nop\n"; break;
      }
    }
    switch (bb.term.kind) {
    case TermKind::Goto: os << "  goto " << p.blocks[bb.term.target].id << "\n"; break;
    case TermKind::Branch: {
      os << "  branch ";
      for (size_t i = 0; i < bb.term.cond_vars.size(); ++i)
        os << (i ? "," : "") << p.vars[bb.term.cond_vars[i]].name;
      os << " ? " << p.blocks[bb.term.target].id << " : "
         << p.blocks[bb.term.else_target].id << "\n";
      break;
    }
    case TermKind::Exit: os << "  exit\n"; break;
    }
  }
  return os.str();
}

std::vector<int> compute_dominators(const Program& p) {
  const int n = static_cast<int>(p.blocks.size());
  std::vector<std::vector<int>> preds(n);
  for (int b = 0; b < n; ++b)
    for (int s : p.successors(b)) preds[s].push_back(b);

  // Reverse postorder from entry.
  std::vector<int> order;
  std::vector<char> seen(n, 0);
  std::vector<std::pair<int, size_t>> stack{{p.entry, 0}};
  seen[p.entry] = 1;
  while (!stack.empty()) {
    auto& [b, i] = stack.back();
    std::vector<int> succ = p.successors(b);
    if (i < succ.size()) {
      int s = succ[i++];
      if (!seen[s]) {
        seen[s] = 1;
        stack.emplace_back(s, 0);
      }
    } else {
      order.push_back(b);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  std::vector<int> rpo_index(n, -1);
  for (size_t i = 0; i < order.size(); ++i) rpo_index[order[i]] = static_cast<int>(i);

  std::vector<int> idom(n, -1);
  idom[p.entry] = p.entry;
  auto intersect = [&](int a, int b) {
    while (a != b) {
      while (rpo_index[a] > rpo_index[b]) a = idom[a];
      while (rpo_index[b] > rpo_index[a]) b = idom[b];
    }
    return a;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (int b : order) {
      if (b == p.entry) continue;
      int new_idom = -1;
      for (int pr : preds[b]) {
        if (idom[pr] < 0) continue;
        new_idom = (new_idom < 0) ? pr : intersect(new_idom, pr);
      }
      if (new_idom >= 0 && idom[b] != new_idom) {
        idom[b] = new_idom;
        changed = true;
      }
    }
  }
  return idom;
}

std::vector<int> compute_ipostdom(const Program& p) {
  const int n = static_cast<int>(p.blocks.size());
  const int sink = n; // synthetic exit funneling all Exit blocks
  std::vector<std::vector<int>> rsucc(n + 1); // predecessors in reverse CFG
  std::vector<std::vector<int>> rpred(n + 1);
  for (int b = 0; b < n; ++b) {
    std::vector<int> succ = p.successors(b);
    if (succ.empty()) succ.push_back(sink);
    for (int s : succ) {
      rsucc[s].push_back(b); // s -> b in reverse graph
      rpred[b].push_back(s);
    }
  }
  // Reverse postorder on the reverse graph from sink.
  std::vector<int> order;
  std::vector<char> seen(n + 1, 0);
  std::vector<std::pair<int, size_t>> stack{{sink, 0}};
  seen[sink] = 1;
  while (!stack.empty()) {
    auto& [b, i] = stack.back();
    if (i < rsucc[b].size()) {
      int s = rsucc[b][i++];
      if (!seen[s]) {
        seen[s] = 1;
        stack.emplace_back(s, 0);
      }
    } else {
      order.push_back(b);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  std::vector<int> rpo_index(n + 1, -1);
  for (size_t i = 0; i < order.size(); ++i) rpo_index[order[i]] = static_cast<int>(i);

  std::vector<int> ipdom(n + 1, -1);
  ipdom[sink] = sink;
  auto intersect = [&](int a, int b) {
    while (a != b) {
      while (rpo_index[a] > rpo_index[b]) a = ipdom[a];
      while (rpo_index[b] > rpo_index[a]) b = ipdom[b];
    }
    return a;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (int b : order) {
      if (b == sink) continue;
      int best = -1;
      for (int pr : rpred[b]) {
        if (ipdom[pr] < 0) continue;
        best = (best < 0) ? pr : intersect(best, pr);
      }
      if (best >= 0 && ipdom[b] != best) {
        ipdom[b] = best;
        changed = true;
      }
    }
  }
  std::vector<int> out(n, -1);
  for (int b = 0; b < n; ++b) out[b] = (ipdom[b] == sink) ? -1 : ipdom[b];
  return out;
}

namespace {

// Natural loop of back edges u->header: all nodes that reach u without
// passing through header.
std::vector<int> natural_loop(const Program& p, int header) {
  const int n = static_cast<int>(p.blocks.size());
  std::vector<int> idom = compute_dominators(p);
  auto dominates = [&](int a, int b) {
    while (true) {
      if (b == a) return true;
      if (b == p.entry || idom[b] < 0) return false;
      if (idom[b] == b) return false;
      b = idom[b];
    }
  };
  std::vector<int> latches;
  for (int b = 0; b < n; ++b)
    for (int s : p.successors(b))
      if (s == header) {
        if (!dominates(header, b))
          throw std::runtime_error("irreducible loop: back edge from '" +
                                   p.blocks[b].id + "' to '" +
                                   p.blocks[header].id +
                                   "' is not dominated by the header");
        latches.push_back(b);
      }
  if (latches.empty())
    throw std::runtime_error("unroll hint on '" + p.blocks[header].id +
                             "': block is not a loop header");
  std::vector<char> in_loop(n, 0);
  in_loop[header] = 1;
  std::deque<int> work(latches.begin(), latches.end());
  std::vector<std::vector<int>> preds(n);
  for (int b = 0; b < n; ++b)
    for (int s : p.successors(b)) preds[s].push_back(b);
  while (!work.empty()) {
    int b = work.front();
    work.pop_front();
    if (in_loop[b]) continue;
    in_loop[b] = 1;
    for (int pr : preds[b]) work.push_back(pr);
  }
  std::vector<int> members;
  for (int b = 0; b < n; ++b)
    if (in_loop[b]) members.push_back(b);
  return members;
}

Program unroll_one(const Program& p, int header, int k) {
  std::vector<int> members = natural_loop(p, header);
  std::vector<char> in_loop(p.blocks.size(), 0);
  for (int m : members) in_loop[m] = 1;

  Program out;
  out.num_lines = p.num_lines;
  out.vars = p.vars;
  out.regions = p.regions;

  // Copy 0 keeps original ids; copies 1..k-1 get "<id>#<copy>".
  struct Key {
    int block;
    int copy;
  };
  std::vector<std::pair<Key, BasicBlock>> new_blocks;
  auto copy_id = [&p](int b, int c) {
    return c == 0 ? p.blocks[b].id : p.blocks[b].id + "#" + std::to_string(c);
  };
  for (size_t b = 0; b < p.blocks.size(); ++b) {
    int copies = in_loop[b] ? k : 1;
    for (int c = 0; c < copies; ++c) {
      BasicBlock nb = p.blocks[b];
      nb.id = copy_id(static_cast<int>(b), c);
      nb.source_id = p.blocks[b].source_id;
      nb.copy = p.blocks[b].copy + c;
      new_blocks.push_back({Key{static_cast<int>(b), c}, nb});
    }
  }
  auto new_index = [&](int b, int c) {
    for (size_t i = 0; i < new_blocks.size(); ++i)
      if (new_blocks[i].first.block == b && new_blocks[i].first.copy == c)
        return static_cast<int>(i);
    return -1;
  };

  for (auto& [key, nb] : new_blocks) {
    auto retarget = [&](int succ) {
      if (!in_loop[key.block]) return new_index(succ, 0);
      if (succ == header && in_loop[key.block]) {
        // Back edge (or entry-to-self on a one-block loop body): within copy c
        // a jump to the header lands in copy c+1; the last copy's back edge
        // is removed by redirecting nowhere -- callers handle -1.
        if (key.copy + 1 < k) return new_index(header, key.copy + 1);
        return -1;
      }
      if (in_loop[succ]) return new_index(succ, key.copy);
      return new_index(succ, 0); // loop exit
    };
    Terminator& t = nb.term;
    if (t.kind == TermKind::Goto) {
      int nt = retarget(t.target);
      if (nt < 0)
        t = Terminator{TermKind::Exit, -1, -1, {}};
      else
        t.target = nt;
    } else if (t.kind == TermKind::Branch) {
      int nt = retarget(t.target);
      int ne = retarget(t.else_target);
      if (nt < 0 && ne < 0)
        t = Terminator{TermKind::Exit, -1, -1, {}};
      else if (nt < 0)
        t = Terminator{TermKind::Goto, ne, -1, {}};
      else if (ne < 0)
        t = Terminator{TermKind::Goto, nt, -1, {}};
      else {
        t.target = nt;
        t.else_target = ne;
      }
    }
  }

  // Entry inside the loop enters copy 0.
  out.entry = new_index(p.entry, 0);
  for (auto& [key, nb] : new_blocks) out.blocks.push_back(std::move(nb));

  // Remaining hints translate to their copy-0 blocks (the hinted one is done).
  for (const auto& [b, cnt] : p.unroll_hints) {
    if (b == header) continue;
    int nb = new_index(b, 0);
    if (nb >= 0) out.unroll_hints.emplace_back(nb, cnt);
  }
  return out;
}

} // namespace

Program unroll(const Program& p) {
  Program cur = p;
  while (!cur.unroll_hints.empty()) {
    auto [header, k] = cur.unroll_hints.front();
    cur.unroll_hints.erase(cur.unroll_hints.begin());
    cur = unroll_one(cur, header, k);
  }
  return cur;
}

} // namespace specache
