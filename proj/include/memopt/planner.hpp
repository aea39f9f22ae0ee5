#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "memopt/analysis.hpp"

namespace memopt {

struct PlanEntry {
  int id = -1;
  int64_t offset = 0;
  int64_t size = 0;
  int first = -1;
  int last = -1;
};

struct MemoryPlan {
  std::vector<PlanEntry> entries;  // placement order
  int64_t arena_size = 0;

  const PlanEntry* find(int id) const {
    for (const auto& e : entries)
      if (e.id == id) return &e;
    return nullptr;
  }
};

// TransposeConv accumulates into a wide scratch buffer sized
// output_elements * acc_bits/8 (acc_bits defaults to 32); no other opcode
// needs scratch.
inline int64_t scratch_bytes(const Graph& g, const OperatorNode& op) {
  if (op.opcode != OpCode::TransposeConv) return 0;
  const TensorInfo& out = g.tensor(op.outputs.at(0));
  int64_t acc_bits = op.opt("acc_bits", 32);
  return out.num_elements() * (acc_bits / 8);
}

inline std::vector<BufferRequirement> collect_requirements(const Graph& g) {
  std::vector<BufferRequirement> reqs;
  auto lifetimes = compute_lifetimes(g);
  for (const auto& t : g.tensors) {
    if (t.kind == TensorKind::Weight) continue;
    const Lifetime& lt = lifetimes.at(t.id);
    reqs.push_back({t.id, t.size_bytes(), lt.first, lt.last, BufferKind::Activation});
  }
  for (const auto& op : g.operators) {
    int64_t sz = scratch_bytes(g, op);
    if (sz > 0)
      reqs.push_back({kScratchIdBase + op.id, sz, op.id, op.id, BufferKind::Scratch});
  }
  return reqs;
}

namespace detail {
inline bool time_overlap(int af, int al, int bf, int bl) { return af <= bl && bf <= al; }
}

// Greedy offset assignment: largest first (ties: earlier first, then lower
// id), each buffer dropped at the lowest offset that clears every
// temporally conflicting placement.
inline MemoryPlan plan_greedy(const std::vector<BufferRequirement>& reqs) {
  std::vector<BufferRequirement> order = reqs;
  std::sort(order.begin(), order.end(), [](const BufferRequirement& a, const BufferRequirement& b) {
    if (a.size != b.size) return a.size > b.size;
    if (a.first != b.first) return a.first < b.first;
    return a.id < b.id;
  });
  MemoryPlan plan;
  for (const auto& r : order) {
    std::vector<const PlanEntry*> conflicts;
    for (const auto& e : plan.entries)
      if (detail::time_overlap(r.first, r.last, e.first, e.last)) conflicts.push_back(&e);
    std::vector<int64_t> candidates{0};
    for (const PlanEntry* e : conflicts) candidates.push_back(e->offset + e->size);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    int64_t chosen = -1;
    for (int64_t c : candidates) {
      bool free = true;
      for (const PlanEntry* e : conflicts) {
        if (c < e->offset + e->size && e->offset < c + r.size) {
          free = false;
          break;
        }
      }
      if (free) {
        chosen = c;
        break;
      }
    }
    plan.entries.push_back({r.id, chosen, r.size, r.first, r.last});
    plan.arena_size = std::max(plan.arena_size, chosen + r.size);
  }
  return plan;
}

// Every requirement placed exactly once inside the arena; no two entries
// may overlap in both space and time.
inline std::vector<std::string> validate_plan(const std::vector<BufferRequirement>& reqs,
                                              const MemoryPlan& plan) {
  std::vector<std::string> diags;
  for (const auto& r : reqs) {
    int found = 0;
    for (const auto& e : plan.entries) {
      if (e.id != r.id) continue;
      ++found;
      if (e.size != r.size || e.first != r.first || e.last != r.last)
        diags.push_back("buffer " + std::to_string(r.id) + ": plan entry does not match requirement");
    }
    if (found != 1)
      diags.push_back("buffer " + std::to_string(r.id) + ": placed " + std::to_string(found) +
                      " times");
  }
  if (plan.entries.size() != reqs.size())
    diags.push_back("plan has " + std::to_string(plan.entries.size()) + " entries for " +
                    std::to_string(reqs.size()) + " requirements");
  for (const auto& e : plan.entries) {
    if (e.offset < 0 || e.offset + e.size > plan.arena_size)
      diags.push_back("buffer " + std::to_string(e.id) + ": outside arena");
  }
  for (size_t i = 0; i < plan.entries.size(); ++i) {
    for (size_t j = i + 1; j < plan.entries.size(); ++j) {
      const PlanEntry& a = plan.entries[i];
      const PlanEntry& b = plan.entries[j];
      bool in_time = detail::time_overlap(a.first, a.last, b.first, b.last);
      bool in_space = a.offset < b.offset + b.size && b.offset < a.offset + a.size;
      if (in_time && in_space)
        diags.push_back("buffer " + std::to_string(a.id) + " and buffer " + std::to_string(b.id) +
                        ": space-time overlap");
    }
  }
  return diags;
}

struct PeakUsage {
  int64_t arena_size = 0;
  int64_t max_live_sum = 0;  // tightest possible arena for these lifetimes
};

inline PeakUsage peak_usage(const MemoryPlan& plan) {
  PeakUsage p;
  p.arena_size = plan.arena_size;
  int lo = 0, hi = -1;
  for (const auto& e : plan.entries) {
    lo = std::min(lo, e.first);
    hi = std::max(hi, e.last);
  }
  for (int t = lo; t <= hi; ++t) {
    int64_t live = 0;
    for (const auto& e : plan.entries)
      if (e.first <= t && t <= e.last) live += e.size;
    p.max_live_sum = std::max(p.max_live_sum, live);
  }
  return p;
}

// ---- rendering ----------------------------------------------------------
// Offset-vs-time rectangles, one per buffer. The text grid quantizes the
// arena into rows (top row = highest offsets); the legend carries exact
// numbers. Output is deterministic for identical plans.

inline std::string render_plan_text(const MemoryPlan& plan) {
  std::ostringstream os;
  os << "arena " << plan.arena_size << " B, " << plan.entries.size() << " buffers\n";
  if (plan.entries.empty()) return os.str();

  int step_lo = 0, step_hi = 0;
  for (const auto& e : plan.entries) {
    step_lo = std::min(step_lo, e.first);
    step_hi = std::max(step_hi, e.last);
  }
  int steps = step_hi - step_lo + 1;
  const int rows = 16;
  // label buffers 0-9a-z... by placement order, '#' beyond
  auto glyph = [](size_t i) -> char {
    static const char g[] = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    return i < sizeof(g) - 1 ? g[i] : '#';
  };
  std::vector<std::string> grid(rows, std::string(size_t(steps), '.'));
  for (size_t i = 0; i < plan.entries.size(); ++i) {
    const PlanEntry& e = plan.entries[i];
    // row band covered by [offset, offset+size) with row 0 at the top
    int64_t r0 = e.offset * rows / plan.arena_size;
    int64_t r1 = (e.offset + e.size - 1) * rows / plan.arena_size;
    for (int64_t r = r0; r <= r1 && r < rows; ++r)
      for (int t = std::max(e.first, step_lo); t <= e.last; ++t)
        grid[size_t(rows - 1 - r)][size_t(t - step_lo)] = glyph(i);
  }
  for (const auto& row : grid) os << "  |" << row << "|\n";
  os << "  steps " << step_lo << ".." << step_hi << " (left to right)\n";
  for (size_t i = 0; i < plan.entries.size(); ++i) {
    const PlanEntry& e = plan.entries[i];
    os << "  " << glyph(i) << ": buffer " << e.id << " size " << e.size << " offset " << e.offset
       << " steps [" << e.first << "," << e.last << "]\n";
  }
  return os.str();
}

inline std::string render_plan_svg(const MemoryPlan& plan) {
  std::ostringstream os;
  int step_lo = 0, step_hi = 0;
  for (const auto& e : plan.entries) {
    step_lo = std::min(step_lo, e.first);
    step_hi = std::max(step_hi, e.last);
  }
  int steps = plan.entries.empty() ? 1 : step_hi - step_lo + 1;
  const int64_t w = 40, height = 400;
  int64_t arena = std::max<int64_t>(plan.arena_size, 1);
  int64_t width = int64_t(steps) * w + 80;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height + 40 << "\">\n";
  os << "<text x=\"4\" y=\"14\">arena " << plan.arena_size << " B</text>\n";
  for (const auto& e : plan.entries) {
    int64_t x = (int64_t(std::max(e.first, step_lo)) - step_lo) * w + 40;
    int64_t rw = (int64_t(e.last) - std::max(e.first, step_lo) + 1) * w;
    int64_t y = 20 + height - (e.offset + e.size) * height / arena;
    int64_t rh = std::max<int64_t>(e.size * height / arena, 1);
    os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << rw << "\" height=\"" << rh
       << "\" fill=\"#7aa6c2\" stroke=\"#123\"/>\n";
    os << "<text x=\"" << x + 2 << "\" y=\"" << y + 12 << "\" font-size=\"10\">" << e.id << " ("
       << e.size << " B)</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

enum class PlanFormat { Text, Svg };

inline std::string render_plan(const MemoryPlan& plan, PlanFormat fmt) {
  return fmt == PlanFormat::Text ? render_plan_text(plan) : render_plan_svg(plan);
}

}  // namespace memopt
