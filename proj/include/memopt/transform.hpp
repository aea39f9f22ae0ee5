#pragma once

#include <set>
#include <string>
#include <vector>

#include "memopt/analysis.hpp"
#include "memopt/model_io.hpp"
#include "memopt/planner.hpp"

namespace memopt {

struct OptimizeOptions {
  int64_t target_peak = 0;
  int max_iterations = 16;
  bool allow_temp_quant = true;
  bool allow_partial = true;
  bool allow_fusion = true;
};

struct IterationRecord {
  std::string action;
  int victim = -1;
  int64_t peak_before = 0;
  int64_t peak_after = 0;
};

struct FusionEvent {
  int fetch_op = -1;  // op id of the Fetching node when evaluated
  int64_t t1 = 0;     // live inputs
  int64_t t2 = 0;     // interim tensor
  int64_t t3 = 0;     // conv output
  bool fused = false;
};

struct OptimizeReport {
  int64_t initial_peak = 0;
  int64_t final_peak = 0;
  int64_t target_peak = 0;
  bool target_met = false;
  std::vector<IterationRecord> iterations;
  std::vector<FusionEvent> fusion_events;
  std::string error;  // best-effort note, e.g. no victim left
  uint64_t final_hash = 0;
};

// ---- temporary-tensor quantization ---------------------------------------

// Worst-case |accumulator| for one output element: the abs weights that
// scatter into it, times the widest I8 magnitude, plus its bias. Weights
// here are symmetric (zero_point 0), so this is the plain abs-weight sum.
inline int64_t transpose_conv_acc_bound(const Graph& g, const OperatorNode& op) {
  const TensorInfo& in = g.tensor(op.inputs.at(0));
  const TensorInfo& w_info = g.tensor(op.inputs.at(1));
  const TensorInfo& b_info = g.tensor(op.inputs.at(2));
  const TensorInfo& out = g.tensor(op.outputs.at(0));
  const int8_t* w = reinterpret_cast<const int8_t*>(w_info.const_data.data());
  const int32_t* bias = reinterpret_cast<const int32_t*>(b_info.const_data.data());
  const int kout = w_info.shape[0], kh = w_info.shape[1], kw = w_info.shape[2],
            kin = w_info.shape[3];
  const int s = int(op.opt("stride", 2));
  const int oh_dim = out.shape[1], ow_dim = out.shape[2];
  const int pad_top = std::max(0, (in.shape[1] - 1) * s + kh - oh_dim) / 2;
  const int pad_left = std::max(0, (in.shape[2] - 1) * s + kw - ow_dim) / 2;
  const int32_t w_zp = w_info.quant ? w_info.quant->zero_point : 0;

  std::vector<int64_t> sum_abs(size_t(out.num_elements()), 0);
  for (int n = 0; n < in.shape[0]; ++n)
    for (int ih = 0; ih < in.shape[1]; ++ih)
      for (int iw = 0; iw < in.shape[2]; ++iw)
        for (int fh = 0; fh < kh; ++fh) {
          int oh = ih * s + fh - pad_top;
          if (oh < 0 || oh >= oh_dim) continue;
          for (int fw = 0; fw < kw; ++fw) {
            int ow = iw * s + fw - pad_left;
            if (ow < 0 || ow >= ow_dim) continue;
            for (int oc = 0; oc < kout; ++oc) {
              int64_t oidx = ((int64_t(n) * oh_dim + oh) * ow_dim + ow) * kout + oc;
              for (int ic = 0; ic < kin; ++ic)
                sum_abs[size_t(oidx)] +=
                    std::abs(int64_t(w[((int64_t(oc) * kh + fh) * kw + fw) * kin + ic]) - w_zp);
            }
          }
        }
  int64_t bound = 0;
  for (int64_t i = 0; i < out.num_elements(); ++i)
    bound = std::max(bound, sum_abs[size_t(i)] * 127 + std::abs(int64_t(bias[i % kout])));
  return bound;
}

// Halve TransposeConv scratch wherever a 16-bit accumulator provably
// cannot saturate.
inline Graph quantize_temp_tensors(const Graph& g) {
  Graph out = g;
  for (auto& op : out.operators) {
    if (op.opcode != OpCode::TransposeConv) continue;
    if (op.opt("acc_bits", 32) == 16) continue;
    if (transpose_conv_acc_bound(out, op) <= 32767) op.options["acc_bits"] = int64_t(16);
  }
  return out;
}

// ---- spilling ------------------------------------------------------------

// Among activations live at the usage peak, pick the one coldest for the
// longest stretch (ties: larger, then lower id). A tensor is spillable if
// it is a plain activation, not spilled before, has more than one element,
// and its cold range spans at least two ops (room for a spill/fetch pair).
inline int select_victim(const Graph& g, const std::map<int, ColdRange>& cold,
                         const std::vector<BufferRequirement>& reqs) {
  std::set<int> spilled;
  for (const auto& op : g.operators) {
    if (op.opcode == OpCode::Spill) spilled.insert(op.inputs.at(0));
    if (op.opcode == OpCode::Fetching || op.opcode == OpCode::FetchingConv2D)
      spilled.insert(int(op.opt("victim")));
  }
  int best = -1, best_len = -1;
  int64_t best_size = -1;
  for (int tid : peak_tensors(g, reqs)) {  // ascending ids
    const TensorInfo& t = g.tensor(tid);
    if (t.kind != TensorKind::Activation) continue;
    if (spilled.count(tid) || t.num_elements() <= 1) continue;
    auto it = cold.find(tid);
    if (it == cold.end() || it->second.length() < 2) continue;
    int len = it->second.length();
    int64_t sz = t.size_bytes();
    if (len > best_len || (len == best_len && sz > best_size)) {
      best = tid;
      best_len = len;
      best_size = sz;
    }
  }
  if (best < 0) throw NoVictimError("no spillable tensor among peak-live activations");
  return best;
}

// Evict the victim to storage across its longest cold range: Spill right
// after the last access before the gap, Fetching right before the gap
// closes; accesses from the gap's far side onward read the fetched copy.
inline Graph insert_spill_fetch(const Graph& g, int victim, const ColdRange& cold) {
  if (cold.length() < 2)
    throw StructureError("tensor " + std::to_string(victim) +
                         ": cold range shorter than two ops, spilling cannot help");
  if (cold.start < 0 || cold.end >= int(g.operators.size()))
    throw StructureError("tensor " + std::to_string(victim) + ": cold range endpoints invalid");
  const TensorInfo* vt = g.find_tensor(victim);
  if (!vt) throw StructureError("tensor " + std::to_string(victim) + ": not in graph");

  Graph out = g;
  TensorInfo fetched = *vt;
  fetched.kind = TensorKind::Activation;
  fetched.name = vt->name + "_fetched";
  fetched.const_data.clear();
  int fetched_id = out.add_tensor(std::move(fetched));

  for (size_t i = size_t(cold.end); i < out.operators.size(); ++i)
    for (int& in : out.operators[i].inputs)
      if (in == victim) in = fetched_id;

  OperatorNode spill;
  spill.opcode = OpCode::Spill;
  spill.inputs = {victim};
  spill.options["id"] = int64_t(victim);

  OperatorNode fetch;
  fetch.opcode = OpCode::Fetching;
  fetch.outputs = {fetched_id};
  fetch.options["victim"] = int64_t(victim);
  fetch.options["nth"] = int64_t(0);
  fetch.options["axis"] = int64_t(3);

  out.operators.insert(out.operators.begin() + cold.end, std::move(fetch));
  out.operators.insert(out.operators.begin() + cold.start + 1, std::move(spill));
  out.renumber_operators();
  return out;
}

struct PartialSplitResult {
  Graph graph;
  int new_victim = -1;  // the slice to spill
  int keep_id = -1;
  int restored_id = -1;
  int split_op = -1;   // op id of the inserted Split
  int concat_op = -1;  // op id of the inserted Concatenation
};

// Split the victim along channels so only ~mr_bytes (rounded up to whole
// channel slices) leaves the arena; a Concatenation at the far side of the
// cold range restores the full tensor for downstream consumers.
inline PartialSplitResult insert_partial_split(const Graph& g, int victim, int64_t mr_bytes) {
  const TensorInfo& vt = g.tensor(victim);
  const int channels = vt.shape[3];
  if (channels < 2) throw AlignError("tensor " + std::to_string(victim) + ": single channel");
  const int64_t slice = vt.size_bytes() / channels;  // one channel, all pixels
  if (mr_bytes <= 0) throw AlignError("split request must be positive");
  const int64_t k = (mr_bytes + slice - 1) / slice;
  if (k * slice >= vt.size_bytes())
    throw AlignError("aligned split of " + std::to_string(k * slice) +
                     " B covers the whole tensor; spill it whole");

  auto cold_map = analyze_cold_ranges(g);
  const ColdRange& cold = cold_map.at(victim);
  if (cold.length() < 2)
    throw StructureError("tensor " + std::to_string(victim) + ": cold range too short");

  PartialSplitResult res;
  Graph& out = res.graph;
  out = g;

  TensorInfo keep = vt;
  keep.kind = TensorKind::Activation;
  keep.name = vt.name + "_keep";
  keep.shape[3] = channels - int(k);
  TensorInfo part = vt;
  part.kind = TensorKind::Activation;
  part.name = vt.name + "_spill";
  part.shape[3] = int(k);
  TensorInfo restored = vt;
  restored.kind = TensorKind::Activation;
  restored.name = vt.name + "_restored";
  res.keep_id = out.add_tensor(std::move(keep));
  res.new_victim = out.add_tensor(std::move(part));
  res.restored_id = out.add_tensor(std::move(restored));

  for (size_t i = size_t(cold.end); i < out.operators.size(); ++i)
    for (int& in : out.operators[i].inputs)
      if (in == victim) in = res.restored_id;

  OperatorNode split;
  split.opcode = OpCode::Split;
  split.inputs = {victim};
  split.outputs = {res.keep_id, res.new_victim};
  split.options["axis"] = int64_t(3);
  split.options["split_sizes"] = std::vector<int64_t>{int64_t(channels - k), k};

  OperatorNode cc;
  cc.opcode = OpCode::Concatenation;
  cc.inputs = {res.keep_id, res.new_victim};
  cc.outputs = {res.restored_id};
  cc.options["axis"] = int64_t(3);

  out.operators.insert(out.operators.begin() + cold.end, std::move(cc));
  out.operators.insert(out.operators.begin() + cold.start + 1, std::move(split));
  out.renumber_operators();
  res.split_op = cold.start + 1;
  res.concat_op = cold.end + 1;
  return res;
}

// ---- fused fetching --------------------------------------------------------

namespace detail {
// occurrences of `tid` across the inputs of op j
inline int input_occurrences(const OperatorNode& op, int tid) {
  int n = 0;
  for (int in : op.inputs)
    if (in == tid) ++n;
  return n;
}
}  // namespace detail

// Merge each Fetching into its follower until nothing changes. A following
// Concatenation always absorbs the fetch (same arena traffic, one buffer
// less); a following Conv2D absorbs it only when dropping the interim
// tensor beats keeping it: max(|t1|+|t2|, |t2|+|t3|) > |t1|+|t3|.
// Evaluated conv gates are appended to `audit` (pass nullptr to skip).
inline Graph fuse_fetching(const Graph& g, std::vector<FusionEvent>* audit = nullptr) {
  Graph out = g;
  while (true) {
    std::vector<FusionEvent> rejected;
    bool changed = false;
    for (size_t i = 0; i + 1 < out.operators.size() && !changed; ++i) {
      OperatorNode& f = out.operators[i];
      if (f.opcode != OpCode::Fetching) continue;
      int interim = f.outputs.at(0);
      if (std::find(out.outputs.begin(), out.outputs.end(), interim) != out.outputs.end())
        continue;
      int consumers = 0;
      size_t consumer_at = 0;
      for (size_t j = 0; j < out.operators.size(); ++j) {
        if (detail::input_occurrences(out.operators[j], interim) > 0) {
          ++consumers;
          consumer_at = j;
        }
      }
      if (consumers != 1 || consumer_at != i + 1) continue;
      OperatorNode& next = out.operators[i + 1];
      if (detail::input_occurrences(next, interim) != 1) continue;

      if (next.opcode == OpCode::Concatenation) {
        if (next.opt("axis", 3) != f.opt("axis", 3)) continue;
        std::vector<int> merged;
        int new_nth = -1;
        for (int in : next.inputs) {
          if (in == interim) {
            new_nth = int(merged.size()) + int(f.opt("nth", 0));
            merged.insert(merged.end(), f.inputs.begin(), f.inputs.end());
          } else {
            merged.push_back(in);
          }
        }
        OperatorNode nf;
        nf.opcode = OpCode::Fetching;
        nf.inputs = std::move(merged);
        nf.outputs = next.outputs;
        nf.options = f.options;
        nf.options["nth"] = int64_t(new_nth);
        nf.options["axis"] = next.opt("axis", 3);
        out.operators[i] = std::move(nf);
        out.operators.erase(out.operators.begin() + i + 1);
        out.erase_tensor(interim);
        out.renumber_operators();
        changed = true;
      } else if (next.opcode == OpCode::Conv2D && next.inputs.size() == 3 &&
                 next.inputs.at(0) == interim) {
        int64_t t1 = 0;
        for (int in : f.inputs) t1 += out.tensor(in).size_bytes();
        int64_t t2 = out.tensor(interim).size_bytes();
        int64_t t3 = out.tensor(next.outputs.at(0)).size_bytes();
        bool beneficial = std::max(t1 + t2, t2 + t3) > t1 + t3;
        if (!beneficial || f.opt("axis", 3) != 3) {
          rejected.push_back({f.id, t1, t2, t3, false});
          continue;
        }
        if (audit) audit->push_back({f.id, t1, t2, t3, true});
        OperatorNode nf;
        nf.opcode = OpCode::FetchingConv2D;
        nf.inputs = f.inputs;
        nf.inputs.push_back(next.inputs.at(1));  // filter
        nf.inputs.push_back(next.inputs.at(2));  // bias
        nf.outputs = next.outputs;
        nf.options = f.options;
        for (const char* key : {"stride", "padding", "fused_relu"}) {
          auto it = next.options.find(key);
          if (it != next.options.end()) nf.options[key] = it->second;
        }
        out.operators[i] = std::move(nf);
        out.operators.erase(out.operators.begin() + i + 1);
        out.erase_tensor(interim);
        out.renumber_operators();
        changed = true;
      }
    }
    if (!changed) {
      if (audit) audit->insert(audit->end(), rejected.begin(), rejected.end());
      return out;
    }
  }
}

// ---- driver ----------------------------------------------------------------

// Shrink the planned arena below target_peak: quantize scratch once, then
// repeatedly evict the coldest peak tensor (partially when a slice
// suffices) and fuse the machinery away, re-planning after every rewrite.
// Stops at the target, when a rewrite stops helping, or when nothing is
// left to evict — the best graph seen is returned either way.
inline std::pair<Graph, OptimizeReport> optimize(const Graph& g, const OptimizeOptions& opts) {
  OptimizeReport rep;
  rep.target_peak = opts.target_peak;
  auto peak_of = [](const Graph& gg) { return plan_greedy(collect_requirements(gg)).arena_size; };

  Graph cur = g;
  int64_t peak = peak_of(cur);
  rep.initial_peak = peak;

  if (peak > opts.target_peak && opts.allow_temp_quant) {
    Graph q = quantize_temp_tensors(cur);
    int64_t p2 = peak_of(q);
    rep.iterations.push_back({"temp_quant", -1, peak, p2});
    cur = std::move(q);
    peak = p2;
  }

  int iter = 0;
  while (peak > opts.target_peak && iter < opts.max_iterations) {
    ++iter;
    auto reqs = collect_requirements(cur);
    auto cold = analyze_cold_ranges(cur);
    int victim = -1;
    try {
      victim = select_victim(cur, cold, reqs);
    } catch (const NoVictimError& e) {
      rep.error = e.what();
      break;
    }
    int64_t mr = peak - opts.target_peak;
    std::string action = "spill";
    Graph next;
    if (opts.allow_partial && cur.tensor(victim).size_bytes() > mr) {
      try {
        PartialSplitResult ps = insert_partial_split(cur, victim, mr);
        next = insert_spill_fetch(
            ps.graph, ps.new_victim,
            ColdRange{ps.new_victim, ps.split_op, ps.concat_op, ps.concat_op});
        action = "partial_spill";
      } catch (const AlignError&) {
        next = insert_spill_fetch(cur, victim, cold.at(victim));
      }
    } else {
      next = insert_spill_fetch(cur, victim, cold.at(victim));
    }
    if (opts.allow_fusion) next = fuse_fetching(next, &rep.fusion_events);
    int64_t p2 = peak_of(next);
    if (p2 >= peak) {
      // did not help; keep the smaller graph and stop
      rep.iterations.push_back({action + "_no_gain", victim, peak, peak});
      break;
    }
    rep.iterations.push_back({action, victim, peak, p2});
    cur = std::move(next);
    peak = p2;
  }

  rep.final_peak = peak;
  rep.target_met = peak <= opts.target_peak;
  rep.final_hash = graph_hash(cur);
  return {std::move(cur), std::move(rep)};
}

inline nlohmann::json report_to_json(const OptimizeReport& r) {
  nlohmann::json j;
  j["initial_peak"] = r.initial_peak;
  j["final_peak"] = r.final_peak;
  j["target_peak"] = r.target_peak;
  j["target_met"] = r.target_met;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", (unsigned long long)r.final_hash);
  j["final_hash"] = hex;
  if (!r.error.empty()) j["error"] = r.error;
  j["iterations"] = nlohmann::json::array();
  for (const auto& it : r.iterations)
    j["iterations"].push_back({{"action", it.action},
                               {"victim", it.victim},
                               {"peak_before", it.peak_before},
                               {"peak_after", it.peak_after}});
  j["fusion_events"] = nlohmann::json::array();
  for (const auto& e : r.fusion_events)
    j["fusion_events"].push_back(
        {{"fetch_op", e.fetch_op}, {"t1", e.t1}, {"t2", e.t2}, {"t3", e.t3}, {"fused", e.fused}});
  return j;
}

}  // namespace memopt
