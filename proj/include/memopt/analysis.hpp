#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "memopt/graph.hpp"

namespace memopt {

// Scratch requirements get ids in a disjoint range so they can share the
// plan's id space with tensors: scratch id = kScratchIdBase + op id.
inline constexpr int kScratchIdBase = 1 << 20;

struct Lifetime {
  int tensor_id = -1;
  int first = -1;  // defining op id; -1 for graph inputs (virtual definer)
  int last = -1;   // last op id using it; graph outputs pinned to final op
};

struct ColdRange {
  int tensor_id = -1;
  int start = -1;  // op after which the longest access gap begins
  int end = -1;    // op at which the gap closes
  int last = -1;   // most recent access seen
  int length() const { return end - start; }
};

enum class BufferKind : uint8_t { Activation = 0, Scratch = 1 };

struct BufferRequirement {
  int id = -1;      // tensor id, or kScratchIdBase + op id for scratch
  int64_t size = 0; // bytes
  int first = -1;   // inclusive op-step bounds of liveness
  int last = -1;
  BufferKind kind = BufferKind::Activation;
};

namespace detail {
// Unique input tensor ids of an op, excluding weights (weights live in
// flash and never join arena liveness).
inline std::vector<int> activation_inputs(const Graph& g, const OperatorNode& op) {
  std::vector<int> ids;
  for (int in : op.inputs) {
    const TensorInfo* t = g.find_tensor(in);
    if (!t || t->kind == TensorKind::Weight) continue;
    if (std::find(ids.begin(), ids.end(), in) == ids.end()) ids.push_back(in);
  }
  return ids;
}
}  // namespace detail

// first = defining op (-1 for graph inputs), last = final use. Graph
// outputs must survive inference, so their last is pinned to the final op.
inline std::map<int, Lifetime> compute_lifetimes(const Graph& g) {
  std::map<int, Lifetime> out;
  for (const auto& t : g.tensors) {
    if (t.kind == TensorKind::Weight) continue;
    Lifetime lt;
    lt.tensor_id = t.id;
    if (t.kind == TensorKind::GraphInput) lt.first = -1;
    out[t.id] = lt;
  }
  for (const auto& op : g.operators) {
    for (int o : op.outputs) {
      auto it = out.find(o);
      if (it == out.end()) continue;
      it->second.first = op.id;
      if (it->second.last < op.id) it->second.last = op.id;
    }
    for (int i : detail::activation_inputs(g, op)) {
      auto it = out.find(i);
      if (it != out.end()) it->second.last = std::max(it->second.last, op.id);
    }
  }
  int final_op = int(g.operators.size()) - 1;
  for (auto& [id, lt] : out) {
    if (lt.last < lt.first) lt.last = lt.first;  // defined but never used
    if (g.find_tensor(id)->kind == TensorKind::GraphOutput)
      lt.last = std::max(lt.last, final_op);
  }
  return out;
}

// Single forward sweep. Each access either extends the current streak or,
// when the gap since the previous access beats the best range so far
// (strictly — the first longest range wins ties), rebases the range onto
// that gap. Graph outputs get a virtual access at the final op so the
// range never dangles past their pinned lifetime.
inline std::map<int, ColdRange> analyze_cold_ranges(const Graph& g) {
  std::map<int, ColdRange> cr;
  auto touch = [&](int tid, int at) {
    auto it = cr.find(tid);
    if (it == cr.end()) return;
    ColdRange& r = it->second;
    if (r.end - r.start < at - r.last) {
      r.start = r.last;
      r.end = at;
    }
    r.last = at;
  };
  for (const auto& t : g.tensors) {
    if (t.kind != TensorKind::GraphInput) continue;
    cr[t.id] = ColdRange{t.id, -1, -1, -1};
  }
  for (const auto& op : g.operators) {
    for (int o : op.outputs) {
      const TensorInfo* t = g.find_tensor(o);
      if (!t || t->kind == TensorKind::Weight) continue;
      cr[o] = ColdRange{o, op.id, op.id, op.id};
    }
    for (int i : detail::activation_inputs(g, op)) touch(i, op.id);
  }
  int final_op = int(g.operators.size()) - 1;
  for (const auto& t : g.tensors)
    if (t.kind == TensorKind::GraphOutput) touch(t.id, final_op);
  return cr;
}

struct UsageCurve {
  std::vector<int64_t> live_bytes;  // indexed by op step
  std::vector<int> peak_steps;      // argmax steps, ascending
  int64_t peak = 0;
};

inline UsageCurve usage_curve(const Graph& g, const std::vector<BufferRequirement>& reqs) {
  UsageCurve c;
  c.live_bytes.assign(g.operators.size(), 0);
  for (const auto& r : reqs) {
    int lo = std::max(r.first, 0);
    int hi = std::min(r.last, int(g.operators.size()) - 1);
    for (int t = lo; t <= hi; ++t) c.live_bytes[size_t(t)] += r.size;
  }
  for (int64_t v : c.live_bytes) c.peak = std::max(c.peak, v);
  for (size_t t = 0; t < c.live_bytes.size(); ++t)
    if (c.live_bytes[t] == c.peak) c.peak_steps.push_back(int(t));
  return c;
}

// Activation buffers live at any peak step, ascending by id.
inline std::vector<int> peak_tensors(const Graph& g, const std::vector<BufferRequirement>& reqs) {
  UsageCurve c = usage_curve(g, reqs);
  std::set<int> ids;
  for (const auto& r : reqs) {
    if (r.kind != BufferKind::Activation) continue;
    for (int t : c.peak_steps)
      if (r.first <= t && t <= r.last) ids.insert(r.id);
  }
  return std::vector<int>(ids.begin(), ids.end());
}

}  // namespace memopt
