#pragma once

// Shared test utilities: deterministic RNG, random graph generators, and the
// independent brute-force oracles the suites compare library results against.

#include <algorithm>
#include <climits>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "memopt/analysis.hpp"
#include "memopt/graph.hpp"
#include "memopt/planner.hpp"
#include "memopt/runtime.hpp"

namespace testutil {

using namespace memopt;

struct Rng {
  uint64_t state;
  explicit Rng(uint64_t seed) : state(seed) {}
  uint64_t next() { return splitmix64(state); }
  // inclusive bounds
  int64_t range(int64_t lo, int64_t hi) { return lo + int64_t(next() % uint64_t(hi - lo + 1)); }
  bool chance(int percent) { return range(0, 99) < percent; }
};

// ---- cold-range / lifetime oracles ----------------------------------------

// Access sequence of a tensor: definition op (or -1 for graph inputs), then
// every op that reads it (dedup per op), plus the final op for graph outputs.
inline std::vector<int> access_sequence(const Graph& g, int tid) {
  std::vector<int> acc;
  const TensorInfo& t = g.tensor(tid);
  if (t.kind == TensorKind::GraphInput) acc.push_back(-1);
  for (const auto& op : g.operators) {
    for (int out : op.outputs)
      if (out == tid) acc.push_back(op.id);
    bool reads = false;
    for (int in : op.inputs)
      if (in == tid) reads = true;
    if (reads && (acc.empty() || acc.back() != op.id)) acc.push_back(op.id);
  }
  if (t.kind == TensorKind::GraphOutput && !g.operators.empty()) {
    int last_op = int(g.operators.size()) - 1;
    if (acc.empty() || acc.back() != last_op) acc.push_back(last_op);
  }
  return acc;
}

// Longest gap between consecutive accesses, earliest on ties.
inline ColdRange brute_cold_range(const Graph& g, int tid) {
  std::vector<int> acc = access_sequence(g, tid);
  ColdRange cr{tid, acc.front(), acc.front(), acc.front()};
  for (size_t i = 0; i + 1 < acc.size(); ++i) {
    if (acc[i + 1] - acc[i] > cr.end - cr.start) {
      cr.start = acc[i];
      cr.end = acc[i + 1];
    }
  }
  cr.last = acc.back();
  return cr;
}

inline Lifetime brute_lifetime(const Graph& g, int tid) {
  std::vector<int> acc = access_sequence(g, tid);
  return Lifetime{tid, acc.front(), acc.back()};
}

// ---- random structural graphs ----------------------------------------------

// Graphs for analysis/driver tests: shapes are (1,1,1,k) so channel splits
// stay legal, every op emits one fresh activation, and the final tensor is
// the graph output. Not runnable (no weights), valid per validate().
inline Graph random_structural_graph(uint64_t seed, int max_ops = 30) {
  Rng rng(seed);
  Graph g;
  int n_inputs = int(rng.range(1, 3));
  std::vector<int> pool;
  for (int i = 0; i < n_inputs; ++i) {
    TensorInfo t;
    t.name = "in" + std::to_string(i);
    t.shape = {1, 1, 1, int(rng.range(2, 64))};
    t.dtype = DType::I8;
    t.kind = TensorKind::GraphInput;
    t.quant = QuantParams{0.0625, -1};
    pool.push_back(g.add_tensor(std::move(t)));
  }
  g.inputs = pool;

  int n_ops = int(rng.range(1, int64_t(max_ops)));
  for (int i = 0; i < n_ops; ++i) {
    OperatorNode op;
    op.id = i;
    bool conv_like = rng.chance(30);
    op.opcode = conv_like ? OpCode::Conv2D : OpCode::Concatenation;
    int n_in = conv_like ? 1 : int(rng.range(1, 3));
    for (int k = 0; k < n_in; ++k)
      op.inputs.push_back(pool[size_t(rng.range(0, int64_t(pool.size()) - 1))]);
    TensorInfo t;
    t.name = "t" + std::to_string(i);
    // occasional single-element tensor: ineligible spill victim
    t.shape = {1, 1, 1, rng.chance(10) ? 1 : int(rng.range(2, 64))};
    t.dtype = DType::I8;
    t.kind = TensorKind::Activation;
    t.quant = QuantParams{0.0625, -1};
    int out = g.add_tensor(std::move(t));
    op.outputs = {out};
    if (!conv_like) op.options["axis"] = int64_t(3);
    pool.push_back(out);
    g.operators.push_back(std::move(op));
  }
  int last_out = g.operators.back().outputs.at(0);
  g.find_tensor(last_out)->kind = TensorKind::GraphOutput;
  g.outputs = {last_out};
  return g;
}

// ---- random runnable graphs --------------------------------------------------

// Small quantized conv nets for end-to-end equivalence tests: conv / pool /
// transpose conv / concat over a single activation chain with random skip
// edges (the concat inputs), uniform activation quantization.
struct RunnableBuilder {
  Graph g;
  Rng rng;
  double act_scale = 0.0625;
  int32_t act_zp = -1;

  explicit RunnableBuilder(uint64_t seed) : rng(seed) {}

  int act(const std::string& name, std::array<int, 4> shape, TensorKind kind) {
    TensorInfo t;
    t.name = name;
    t.shape = shape;
    t.dtype = DType::I8;
    t.kind = kind;
    t.quant = QuantParams{act_scale, act_zp};
    return g.add_tensor(std::move(t));
  }

  double weight_scale(const std::vector<uint8_t>& data, int taps) {
    double ss = 0;
    for (uint8_t b : data) ss += double(int8_t(b)) * double(int8_t(b));
    double rms = data.empty() ? 1.0 : std::sqrt(ss / double(data.size()));
    if (rms < 1e-6) rms = 1.0;
    return 40.0 / (74.0 * std::sqrt(double(taps)) * rms);
  }

  int weight(const std::string& name, std::array<int, 4> shape, int lo, int hi, int taps) {
    TensorInfo t;
    t.name = name;
    t.shape = shape;
    t.dtype = DType::I8;
    t.kind = TensorKind::Weight;
    t.const_data.resize(size_t(t.num_elements()), 0);
    for (auto& b : t.const_data) b = uint8_t(int8_t(rng.range(lo, hi)));
    t.quant = QuantParams{weight_scale(t.const_data, taps), 0};
    return g.add_tensor(std::move(t));
  }

  int bias(const std::string& name, int n, double scale) {
    TensorInfo t;
    t.name = name;
    t.shape = {n, 1, 1, 1};
    t.dtype = DType::I32;
    t.kind = TensorKind::Weight;
    t.quant = QuantParams{scale, 0};
    t.const_data.resize(size_t(n) * 4, 0);
    auto* v = reinterpret_cast<int32_t*>(t.const_data.data());
    for (int i = 0; i < n; ++i) v[i] = int32_t(rng.range(-200, 200));
    return g.add_tensor(std::move(t));
  }

  int push_op(OperatorNode op) {
    op.id = int(g.operators.size());
    g.operators.push_back(std::move(op));
    return g.operators.back().outputs.at(0);
  }
};

inline Graph random_runnable_graph(uint64_t seed) {
  RunnableBuilder b(seed);
  int h = int(b.rng.range(2, 5)) * 4;
  int w = int(b.rng.range(2, 5)) * 4;
  int c = int(b.rng.range(1, 4));
  int cur = b.act("input", {1, h, w, c}, TensorKind::GraphInput);
  b.g.inputs = {cur};
  struct Live {
    int id, h, w, c;
  };
  std::vector<Live> saved;
  Live now{cur, h, w, c};

  int n_ops = int(b.rng.range(4, 9));
  for (int i = 0; i < n_ops; ++i) {
    int pick = int(b.rng.range(0, 99));
    std::string nm = "t" + std::to_string(i);
    if (pick < 15 && now.h % 2 == 0 && now.w % 2 == 0 && now.h >= 4 && now.w >= 4) {
      OperatorNode op;
      op.opcode = OpCode::MaxPool2D;
      op.inputs = {now.id};
      op.outputs = {b.act(nm, {1, now.h / 2, now.w / 2, now.c}, TensorKind::Activation)};
      op.options = {{"filter_h", int64_t(2)}, {"filter_w", int64_t(2)}, {"stride", int64_t(2)}};
      saved.push_back(now);
      now = {b.push_op(std::move(op)), now.h / 2, now.w / 2, now.c};
    } else if (pick < 30 && now.h * 2 <= 40 && now.w * 2 <= 40) {
      int cout = int(b.rng.range(1, 4));
      int wid = b.weight(nm + "_w", {cout, 2, 2, now.c}, -6, 6, now.c);
      int bid = b.bias(nm + "_b", cout, b.act_scale * b.g.tensor(wid).quant->scale);
      OperatorNode op;
      op.opcode = OpCode::TransposeConv;
      op.inputs = {now.id, wid, bid};
      op.outputs = {b.act(nm, {1, now.h * 2, now.w * 2, cout}, TensorKind::Activation)};
      op.options = {{"stride", int64_t(2)}};
      saved.push_back(now);
      now = {b.push_op(std::move(op)), now.h * 2, now.w * 2, cout};
    } else if (pick < 55) {
      std::vector<Live> mates;
      for (const Live& s : saved)
        if (s.h == now.h && s.w == now.w && s.id != now.id) mates.push_back(s);
      if (!mates.empty()) {
        const Live& mate = mates[size_t(b.rng.range(0, int64_t(mates.size()) - 1))];
        OperatorNode op;
        op.opcode = OpCode::Concatenation;
        op.inputs = {now.id, mate.id};
        op.outputs =
            {b.act(nm, {1, now.h, now.w, now.c + mate.c}, TensorKind::Activation)};
        op.options = {{"axis", int64_t(3)}};
        saved.push_back(now);
        now = {b.push_op(std::move(op)), now.h, now.w, now.c + mate.c};
        continue;
      }
      // fall through to a conv when no concat partner exists
      int k = b.rng.chance(50) ? 3 : 1;
      int cout = int(b.rng.range(1, 6));
      int wid = b.weight(nm + "_w", {cout, k, k, now.c}, -127, 127, k * k * now.c);
      int bid = b.bias(nm + "_b", cout, b.act_scale * b.g.tensor(wid).quant->scale);
      OperatorNode op;
      op.opcode = OpCode::Conv2D;
      op.inputs = {now.id, wid, bid};
      op.outputs = {b.act(nm, {1, now.h, now.w, cout}, TensorKind::Activation)};
      op.options = {{"stride", int64_t(1)},
                    {"padding", int64_t(1)},
                    {"fused_relu", int64_t(b.rng.chance(50) ? 1 : 0)}};
      saved.push_back(now);
      now = {b.push_op(std::move(op)), now.h, now.w, cout};
    } else {
      int k = b.rng.chance(50) ? 3 : 1;
      int cout = int(b.rng.range(1, 6));
      int wid = b.weight(nm + "_w", {cout, k, k, now.c}, -127, 127, k * k * now.c);
      int bid = b.bias(nm + "_b", cout, b.act_scale * b.g.tensor(wid).quant->scale);
      OperatorNode op;
      op.opcode = OpCode::Conv2D;
      op.inputs = {now.id, wid, bid};
      op.outputs = {b.act(nm, {1, now.h, now.w, cout}, TensorKind::Activation)};
      op.options = {{"stride", int64_t(1)},
                    {"padding", int64_t(1)},
                    {"fused_relu", int64_t(b.rng.chance(50) ? 1 : 0)}};
      saved.push_back(now);
      now = {b.push_op(std::move(op)), now.h, now.w, cout};
    }
  }
  // head conv marks the graph output
  {
    int cout = int(b.rng.range(1, 2));
    int wid = b.weight("head_w", {cout, 1, 1, now.c}, -127, 127, now.c);
    int bid = b.bias("head_b", cout, b.act_scale * b.g.tensor(wid).quant->scale);
    OperatorNode op;
    op.opcode = OpCode::Conv2D;
    op.inputs = {now.id, wid, bid};
    op.outputs = {b.act("head", {1, now.h, now.w, cout}, TensorKind::GraphOutput)};
    op.options = {{"stride", int64_t(1)}, {"padding", int64_t(1)}, {"fused_relu", int64_t(0)}};
    b.g.outputs = {b.push_op(std::move(op))};
  }
  return b.g;
}

// ---- random requirement sets -------------------------------------------------

inline std::vector<BufferRequirement> random_requirements(uint64_t seed, int max_n = 8,
                                                          int max_step = 10,
                                                          int64_t max_size = 200) {
  Rng rng(seed);
  int n = int(rng.range(1, int64_t(max_n)));
  std::vector<BufferRequirement> reqs;
  for (int i = 0; i < n; ++i) {
    int first = int(rng.range(0, int64_t(max_step)));
    int last = first + int(rng.range(0, 5));
    reqs.push_back({i, rng.range(1, max_size), first, last, BufferKind::Activation});
  }
  return reqs;
}

// ---- exhaustive optimal planner (small instances) -----------------------------

// Optimal arena over all placement orders and all normalized candidate
// offsets. Any packing can be normalized by sliding buffers down (in
// increasing-offset order) until each rests at 0 or on a conflicting top,
// so this search contains an optimal plan. Exponential: keep n small.
namespace detail {
inline bool conflicts(const BufferRequirement& a, const BufferRequirement& b) {
  return a.first <= b.last && b.first <= a.last;
}

struct OptSearch {
  const std::vector<BufferRequirement>& reqs;
  std::vector<int64_t> off;
  std::vector<bool> placed;
  int64_t best = LLONG_MAX;

  explicit OptSearch(const std::vector<BufferRequirement>& r)
      : reqs(r), off(r.size(), 0), placed(r.size(), false) {}

  void dfs(int n_placed, int64_t arena) {
    if (arena >= best) return;
    if (n_placed == int(reqs.size())) {
      best = arena;
      return;
    }
    for (size_t i = 0; i < reqs.size(); ++i) {
      if (placed[i]) continue;
      // identical unplaced twins are interchangeable: canonical order only
      bool twin_before = false;
      for (size_t j = 0; j < i && !twin_before; ++j)
        if (!placed[j] && reqs[j].size == reqs[i].size && reqs[j].first == reqs[i].first &&
            reqs[j].last == reqs[i].last)
          twin_before = true;
      if (twin_before) continue;

      std::vector<int64_t> cands{0};
      for (size_t j = 0; j < reqs.size(); ++j)
        if (placed[j] && conflicts(reqs[i], reqs[j])) cands.push_back(off[j] + reqs[j].size);
      std::sort(cands.begin(), cands.end());
      cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
      for (int64_t c : cands) {
        int64_t top = c + reqs[i].size;
        if (std::max(arena, top) >= best) break;  // candidates ascend; all worse
        bool fits = true;
        for (size_t j = 0; j < reqs.size() && fits; ++j)
          if (placed[j] && conflicts(reqs[i], reqs[j]) && c < off[j] + reqs[j].size &&
              off[j] < top)
            fits = false;
        if (!fits) continue;
        placed[i] = true;
        off[i] = c;
        dfs(n_placed + 1, std::max(arena, top));
        placed[i] = false;
      }
    }
  }
};
}  // namespace detail

inline int64_t optimal_arena(const std::vector<BufferRequirement>& reqs) {
  if (reqs.empty()) return 0;
  detail::OptSearch s(reqs);
  s.dfs(0, 0);
  return s.best;
}

// max over time of the live-byte sum: a lower bound on any arena
inline int64_t live_sum_bound(const std::vector<BufferRequirement>& reqs) {
  int64_t best = 0;
  for (const auto& r : reqs) {
    for (int t : {r.first, r.last}) {
      int64_t sum = 0;
      for (const auto& o : reqs)
        if (o.first <= t && t <= o.last) sum += o.size;
      best = std::max(best, sum);
    }
  }
  return best;
}

// ---- naive kernel oracles ------------------------------------------------------

// Reference conv: materialize a zero-point-padded input, then plain loops.
// Written independently of kernels::conv2d on purpose.
inline std::vector<uint8_t> oracle_conv2d(const TensorInfo& in_info,
                                          const std::vector<uint8_t>& in,
                                          const TensorInfo& w_info, const TensorInfo& b_info,
                                          const TensorInfo& out_info, int stride,
                                          bool same_padding, bool relu) {
  const int N = in_info.shape[0], H = in_info.shape[1], W = in_info.shape[2],
            C = in_info.shape[3];
  const int KO = w_info.shape[0], KH = w_info.shape[1], KW = w_info.shape[2];
  const int OH = out_info.shape[1], OW = out_info.shape[2];
  // odd padding totals put the extra row/column at the far edge
  int total_h = 0, total_w = 0, pad_h = 0, pad_w = 0;
  if (same_padding) {
    total_h = std::max(0, (OH - 1) * stride + KH - H);
    total_w = std::max(0, (OW - 1) * stride + KW - W);
    pad_h = total_h / 2;
    pad_w = total_w / 2;
  }
  const int32_t in_zp = in_info.quant->zero_point;
  const int32_t w_zp = w_info.quant->zero_point;
  const int32_t out_zp = out_info.quant->zero_point;
  const double m = in_info.quant->scale * w_info.quant->scale / out_info.quant->scale;
  const int8_t* x = reinterpret_cast<const int8_t*>(in.data());
  const int8_t* wt = reinterpret_cast<const int8_t*>(w_info.const_data.data());
  const int32_t* bs = reinterpret_cast<const int32_t*>(b_info.const_data.data());

  const int PH = H + total_h, PW = W + total_w;
  std::vector<int32_t> padded(size_t(N) * PH * PW * C, in_zp);
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int xw = 0; xw < W; ++xw)
        for (int ch = 0; ch < C; ++ch)
          padded[size_t(((n * PH + y + pad_h) * PW + xw + pad_w) * C + ch)] =
              x[((n * H + y) * W + xw) * C + ch];

  std::vector<uint8_t> out(size_t(out_info.num_elements()), 0);
  int8_t* o = reinterpret_cast<int8_t*>(out.data());
  for (int n = 0; n < N; ++n)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox)
        for (int oc = 0; oc < KO; ++oc) {
          int64_t acc = bs[oc];
          for (int ky = 0; ky < KH; ++ky)
            for (int kx = 0; kx < KW; ++kx)
              for (int ch = 0; ch < C; ++ch) {
                int32_t xv = padded[size_t(
                    ((n * PH + oy * stride + ky) * PW + ox * stride + kx) * C + ch)];
                int32_t wv = wt[((oc * KH + ky) * KW + kx) * C + ch];
                acc += int64_t(xv - in_zp) * (wv - w_zp);
              }
          double scaled = double(acc) * m;
          int64_t q = int64_t(std::llround(scaled) + out_zp);
          // llround rounds half away from zero, matching the kernel contract
          int64_t lo = relu ? out_zp : -128;
          q = std::clamp<int64_t>(q, lo, 127);
          o[((n * OH + oy) * OW + ox) * KO + oc] = int8_t(q);
        }
  return out;
}

// Reference transpose conv in gather form (valid only when no intermediate
// saturation can occur, i.e. for 32-bit accumulators or approved 16-bit).
inline std::vector<uint8_t> oracle_transpose_conv(const TensorInfo& in_info,
                                                  const std::vector<uint8_t>& in,
                                                  const TensorInfo& w_info,
                                                  const TensorInfo& b_info,
                                                  const TensorInfo& out_info, int stride) {
  const int N = in_info.shape[0], H = in_info.shape[1], W = in_info.shape[2],
            C = in_info.shape[3];
  const int KO = w_info.shape[0], KH = w_info.shape[1], KW = w_info.shape[2];
  const int OH = out_info.shape[1], OW = out_info.shape[2];
  const int pad_h = std::max(0, (H - 1) * stride + KH - OH) / 2;
  const int pad_w = std::max(0, (W - 1) * stride + KW - OW) / 2;
  const int32_t in_zp = in_info.quant->zero_point;
  const int32_t w_zp = w_info.quant->zero_point;
  const int32_t out_zp = out_info.quant->zero_point;
  const double m = in_info.quant->scale * w_info.quant->scale / out_info.quant->scale;
  const int8_t* x = reinterpret_cast<const int8_t*>(in.data());
  const int8_t* wt = reinterpret_cast<const int8_t*>(w_info.const_data.data());
  const int32_t* bs = reinterpret_cast<const int32_t*>(b_info.const_data.data());

  std::vector<uint8_t> out(size_t(out_info.num_elements()), 0);
  int8_t* o = reinterpret_cast<int8_t*>(out.data());
  for (int n = 0; n < N; ++n)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox)
        for (int oc = 0; oc < KO; ++oc) {
          int64_t acc = bs[oc];
          for (int ky = 0; ky < KH; ++ky) {
            int sy = oy + pad_h - ky;
            if (sy % stride != 0) continue;
            int iy = sy / stride;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < KW; ++kx) {
              int sx = ox + pad_w - kx;
              if (sx % stride != 0) continue;
              int ix = sx / stride;
              if (ix < 0 || ix >= W) continue;
              for (int ch = 0; ch < C; ++ch) {
                int32_t xv = x[((n * H + iy) * W + ix) * C + ch];
                int32_t wv = wt[((oc * KH + ky) * KW + kx) * C + ch];
                acc += int64_t(xv - in_zp) * (wv - w_zp);
              }
            }
          }
          double scaled = double(acc) * m;
          int64_t q = std::clamp<int64_t>(int64_t(std::llround(scaled) + out_zp), -128, 127);
          o[((n * OH + oy) * OW + ox) * KO + oc] = int8_t(q);
        }
  return out;
}

inline std::vector<uint8_t> oracle_max_pool(const TensorInfo& in_info,
                                            const std::vector<uint8_t>& in, int fh, int fw,
                                            int stride, const TensorInfo& out_info) {
  const int N = in_info.shape[0], H = in_info.shape[1], W = in_info.shape[2],
            C = in_info.shape[3];
  const int OH = out_info.shape[1], OW = out_info.shape[2];
  const int8_t* x = reinterpret_cast<const int8_t*>(in.data());
  std::vector<uint8_t> out(size_t(out_info.num_elements()), 0);
  int8_t* o = reinterpret_cast<int8_t*>(out.data());
  for (int n = 0; n < N; ++n)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox)
        for (int c = 0; c < C; ++c) {
          int8_t best = -128;
          for (int ky = 0; ky < fh; ++ky)
            for (int kx = 0; kx < fw; ++kx)
              best = std::max(best,
                              x[((n * H + oy * stride + ky) * W + ox * stride + kx) * C + c]);
          o[((n * OH + oy) * OW + ox) * C + c] = best;
        }
  return out;
}

// ---- run helpers ----------------------------------------------------------------

inline std::vector<std::vector<uint8_t>> seeded_inputs(const Graph& g, uint64_t seed) {
  std::vector<std::vector<uint8_t>> ins;
  for (int tid : g.inputs) ins.push_back(random_payload(g.tensor(tid).size_bytes(), seed));
  return ins;
}

inline bool graph_spills(const Graph& g) {
  for (const auto& op : g.operators)
    if (op.opcode == OpCode::Spill || op.opcode == OpCode::Fetching ||
        op.opcode == OpCode::FetchingConv2D)
      return true;
  return false;
}

}  // namespace testutil
