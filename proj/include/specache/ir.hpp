#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace specache {

// A variable occupies exactly one cache line. Region lines are ordinary
// variables named "<region>.<index>".
struct Var {
  std::string name;
  int region = -1;          // index into Program::regions, or -1
  int line_in_region = -1;  // 0-based line index within the region
};

struct Region {
  std::string name;
  int size = 0;       // number of cache-line variables
  int first_var = -1; // index of "<name>.0" in Program::vars
};

enum class InstKind {
  Ref,           // ref <var>  (also <region>[<i>], resolved at parse time)
  RegionUnknown, // ref <region>[*]
  SecretRef,     // secret_ref <region>
  Nop,
};

struct Instruction {
  InstKind kind = InstKind::Nop;
  int var = -1;    // for Ref
  int region = -1; // for RegionUnknown / SecretRef
};

enum class TermKind { Goto, Branch, Exit };

struct Terminator {
  TermKind kind = TermKind::Exit;
  int target = -1;      // Goto target / Branch then-target
  int else_target = -1; // Branch else-target
  std::vector<int> cond_vars; // sorted variable indices; branch metadata only
};

struct BasicBlock {
  std::string id;
  std::string source_id; // block id before unrolling (== id if not unrolled)
  int copy = 0;          // unroll-copy ordinal
  std::vector<Instruction> body;
  Terminator term;
};

// Identifies one instruction occurrence after unrolling.
struct Site {
  std::string block; // source block id
  int index = 0;     // position within the block body
  int copy = 0;

  friend bool operator==(const Site& a, const Site& b) {
    return a.block == b.block && a.index == b.index && a.copy == b.copy;
  }
  friend bool operator<(const Site& a, const Site& b) {
    if (a.block != b.block) return a.block < b.block;
    if (a.index != b.index) return a.index < b.index;
    return a.copy < b.copy;
  }
};

struct Program {
  int num_lines = 0; // declared cache size ("config lines=N")
  std::vector<Var> vars;
  std::vector<Region> regions;
  std::vector<BasicBlock> blocks;
  int entry = -1;
  std::vector<std::pair<int, int>> unroll_hints; // (block index, copy count)

  int var_index(const std::string& name) const;    // -1 if absent
  int region_index(const std::string& name) const; // -1 if absent
  int block_index(const std::string& id) const;    // -1 if absent

  std::vector<int> successors(int block) const;

  Site site_of(int block, int index) const {
    const BasicBlock& b = blocks[block];
    return Site{b.source_id, index, b.copy};
  }
};

class ParseError : public std::runtime_error {
public:
  ParseError(int line, const std::string& msg);
  int line() const { return line_; }

private:
  int line_;
};

// Parses the textual IR. Throws ParseError on malformed input, undeclared
// names, duplicate/missing blocks, or a dangling successor.
Program parse_program(const std::string& text);

// Canonical printing; parse_program(print_program(p)) round-trips.
std::string print_program(const Program& program);

// Replaces each hinted natural loop by k sequential copies. The back edge of
// the last copy is removed; exit edges of every copy are kept. Throws
// ParseError-style std::runtime_error if a hint does not name the header of a
// reducible natural loop.
Program unroll(const Program& program);

// Dominator-based helpers shared by unroll and the speculation planner.
std::vector<int> compute_dominators(const Program& program);
// Immediate postdominator per block; Exit blocks postdominate to a synthetic
// sink represented as -1.
std::vector<int> compute_ipostdom(const Program& program);

} // namespace specache
