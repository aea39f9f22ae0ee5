#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "memopt/compression.hpp"
#include "memopt/planner.hpp"
#include "memopt/storage.hpp"

namespace memopt {

struct CostModel {
  double us_per_mac = 0.005;
  double us_per_byte_moved = 0.01;
};

struct ExecutionContext {
  StorageBackend* backend = nullptr;  // required only when the graph spills
  SpillMode mode = SpillMode::Sync;
  CostModel cost;
  bool canary_checks = false;  // poison dead arena regions after each op
  DeviceTimeline timeline;     // filled by run()
  std::vector<uint8_t> arena;  // filled by run()
};

using LatencyReport = LatencyBreakdown;

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::vector<uint8_t> random_payload(int64_t bytes, uint64_t seed) {
  std::vector<uint8_t> out(size_t(bytes), 0);
  uint64_t s = seed;
  for (auto& b : out) b = uint8_t(splitmix64(s) & 0xff);
  return out;
}

namespace kernels {

// out = clamp(round_half_away_from_zero(acc * multiplier) + out_zp); a
// fused ReLU floors the result at out_zp (the quantized real zero).
inline int8_t requantize(int64_t acc, double multiplier, int32_t out_zp, bool fused_relu) {
  double scaled = std::round(double(acc) * multiplier);  // std::round: half away from zero
  int64_t v = int64_t(scaled) + out_zp;
  int64_t lo = fused_relu ? int64_t(out_zp) : -128;
  return int8_t(std::clamp<int64_t>(v, std::max<int64_t>(lo, -128), 127));
}

// An activation made of channel slices that share N/H/W and quantization.
// A plain tensor is one segment; FetchingConv2D feeds several so the
// concatenated tensor never materializes.
struct ChannelSegments {
  int n = 1, h = 1, w = 1, c = 0;
  double scale = 1.0;
  int32_t zero_point = 0;
  struct Seg {
    const int8_t* data;
    int channels;
  };
  std::vector<Seg> segs;

  int8_t at(int nn, int hh, int ww, int cc) const {
    for (const auto& s : segs) {
      if (cc < s.channels)
        return s.data[((int64_t(nn) * h + hh) * w + ww) * s.channels + cc];
      cc -= s.channels;
    }
    throw ShapeError("channel index out of range");
  }
};

inline ChannelSegments single_segment(const TensorInfo& info, const int8_t* data) {
  if (!info.quant) throw ShapeError("tensor " + std::to_string(info.id) + ": missing quant params");
  ChannelSegments cs;
  cs.n = info.shape[0];
  cs.h = info.shape[1];
  cs.w = info.shape[2];
  cs.c = info.shape[3];
  cs.scale = info.quant->scale;
  cs.zero_point = info.quant->zero_point;
  cs.segs.push_back({data, info.shape[3]});
  return cs;
}

struct ConvOpts {
  int stride = 1;
  bool same_padding = true;
  bool fused_relu = false;
};

// filter layout: (out_channels, kh, kw, in_channels); bias is I32 with
// scale in_scale*w_scale. Padded taps contribute zero and are skipped.
inline void conv2d(const ChannelSegments& in, const TensorInfo& w_info, const int8_t* w,
                   const int32_t* bias, const TensorInfo& out_info, int8_t* out,
                   const ConvOpts& opts) {
  const int kout = w_info.shape[0], kh = w_info.shape[1], kw = w_info.shape[2],
            kin = w_info.shape[3];
  if (kin != in.c) throw ShapeError("conv2d: filter expects " + std::to_string(kin) +
                                    " input channels, got " + std::to_string(in.c));
  if (out_info.shape[3] != kout) throw ShapeError("conv2d: output channel mismatch");
  if (!w_info.quant || !out_info.quant) throw ShapeError("conv2d: missing quant params");
  const int s = opts.stride;
  const int oh_dim = out_info.shape[1], ow_dim = out_info.shape[2];
  int expect_h = opts.same_padding ? (in.h + s - 1) / s : (in.h - kh) / s + 1;
  int expect_w = opts.same_padding ? (in.w + s - 1) / s : (in.w - kw) / s + 1;
  if (oh_dim != expect_h || ow_dim != expect_w || out_info.shape[0] != in.n)
    throw ShapeError("conv2d: output shape mismatch");

  int pad_top = 0, pad_left = 0;
  if (opts.same_padding) {
    pad_top = std::max(0, (oh_dim - 1) * s + kh - in.h) / 2;
    pad_left = std::max(0, (ow_dim - 1) * s + kw - in.w) / 2;
  }
  const int32_t in_zp = in.zero_point;
  const int32_t w_zp = w_info.quant->zero_point;
  const double mult = in.scale * w_info.quant->scale / out_info.quant->scale;
  const int32_t out_zp = out_info.quant->zero_point;

  for (int n = 0; n < in.n; ++n)
    for (int oh = 0; oh < oh_dim; ++oh)
      for (int ow = 0; ow < ow_dim; ++ow)
        for (int oc = 0; oc < kout; ++oc) {
          int32_t acc = bias ? bias[oc] : 0;
          for (int fh = 0; fh < kh; ++fh) {
            int ih = oh * s - pad_top + fh;
            if (ih < 0 || ih >= in.h) continue;
            for (int fw = 0; fw < kw; ++fw) {
              int iw = ow * s - pad_left + fw;
              if (iw < 0 || iw >= in.w) continue;
              for (int ic = 0; ic < kin; ++ic) {
                int32_t x = in.at(n, ih, iw, ic) - in_zp;
                int32_t wv = w[((int64_t(oc) * kh + fh) * kw + fw) * kin + ic] - w_zp;
                acc += x * wv;
              }
            }
          }
          out[((int64_t(n) * oh_dim + oh) * ow_dim + ow) * kout + oc] =
              requantize(acc, mult, out_zp, opts.fused_relu);
        }
}

// Scatter form: every input element distributes through the filter into a
// wide accumulator held in scratch; acc_bits 16 saturates on every add.
inline void transpose_conv(const ChannelSegments& in, const TensorInfo& w_info, const int8_t* w,
                           const int32_t* bias, const TensorInfo& out_info, int8_t* out,
                           uint8_t* scratch, int acc_bits, int stride, bool fused_relu) {
  const int kout = w_info.shape[0], kh = w_info.shape[1], kw = w_info.shape[2],
            kin = w_info.shape[3];
  if (kin != in.c) throw ShapeError("transpose_conv: input channel mismatch");
  if (out_info.shape[3] != kout) throw ShapeError("transpose_conv: output channel mismatch");
  if (!w_info.quant || !out_info.quant) throw ShapeError("transpose_conv: missing quant params");
  const int s = stride;
  const int oh_dim = out_info.shape[1], ow_dim = out_info.shape[2];
  if (oh_dim != in.h * s || ow_dim != in.w * s || out_info.shape[0] != in.n)
    throw ShapeError("transpose_conv: output shape mismatch");
  int pad_top = std::max(0, (in.h - 1) * s + kh - oh_dim) / 2;
  int pad_left = std::max(0, (in.w - 1) * s + kw - ow_dim) / 2;

  const int64_t out_elems = out_info.num_elements();
  int32_t* acc32 = reinterpret_cast<int32_t*>(scratch);
  int16_t* acc16 = reinterpret_cast<int16_t*>(scratch);
  for (int64_t i = 0; i < out_elems; ++i) {
    int32_t b = bias ? bias[i % kout] : 0;
    if (acc_bits == 16)
      acc16[i] = int16_t(std::clamp<int32_t>(b, -32768, 32767));
    else
      acc32[i] = b;
  }

  const int32_t in_zp = in.zero_point;
  const int32_t w_zp = w_info.quant->zero_point;
  for (int n = 0; n < in.n; ++n)
    for (int ih = 0; ih < in.h; ++ih)
      for (int iw = 0; iw < in.w; ++iw)
        for (int fh = 0; fh < kh; ++fh) {
          int oh = ih * s + fh - pad_top;
          if (oh < 0 || oh >= oh_dim) continue;
          for (int fw = 0; fw < kw; ++fw) {
            int ow = iw * s + fw - pad_left;
            if (ow < 0 || ow >= ow_dim) continue;
            for (int oc = 0; oc < kout; ++oc) {
              int64_t oidx = ((int64_t(n) * oh_dim + oh) * ow_dim + ow) * kout + oc;
              for (int ic = 0; ic < kin; ++ic) {
                int32_t x = in.at(n, ih, iw, ic) - in_zp;
                int32_t wv = w[((int64_t(oc) * kh + fh) * kw + fw) * kin + ic] - w_zp;
                int32_t delta = x * wv;
                if (acc_bits == 16)
                  acc16[oidx] = int16_t(
                      std::clamp<int32_t>(int32_t(acc16[oidx]) + delta, -32768, 32767));
                else
                  acc32[oidx] += delta;
              }
            }
          }
        }

  const double mult = in.scale * w_info.quant->scale / out_info.quant->scale;
  const int32_t out_zp = out_info.quant->zero_point;
  for (int64_t i = 0; i < out_elems; ++i) {
    int32_t acc = acc_bits == 16 ? int32_t(acc16[i]) : acc32[i];
    out[i] = requantize(acc, mult, out_zp, fused_relu);
  }
}

inline void max_pool2d(const TensorInfo& in_info, const int8_t* in, const TensorInfo& out_info,
                       int8_t* out, int fh, int fw, int stride) {
  const int n_dim = in_info.shape[0], h = in_info.shape[1], w = in_info.shape[2],
            c = in_info.shape[3];
  const int oh_dim = out_info.shape[1], ow_dim = out_info.shape[2];
  if ((h - fh) / stride + 1 != oh_dim || (w - fw) / stride + 1 != ow_dim ||
      out_info.shape[0] != n_dim || out_info.shape[3] != c)
    throw ShapeError("max_pool2d: output shape mismatch");
  if (in_info.quant != out_info.quant)
    throw ShapeError("max_pool2d: input and output quant params must match");
  for (int n = 0; n < n_dim; ++n)
    for (int oh = 0; oh < oh_dim; ++oh)
      for (int ow = 0; ow < ow_dim; ++ow)
        for (int cc = 0; cc < c; ++cc) {
          int8_t best = -128;
          for (int ph = 0; ph < fh; ++ph)
            for (int pw = 0; pw < fw; ++pw) {
              int ih = oh * stride + ph, iw = ow * stride + pw;
              best = std::max(best,
                              in[((int64_t(n) * h + ih) * w + iw) * c + cc]);
            }
          out[((int64_t(n) * oh_dim + oh) * ow_dim + ow) * c + cc] = best;
        }
}

// generic-axis concatenation over raw elements
inline void concat(const std::vector<std::pair<const TensorInfo*, const uint8_t*>>& ins, int axis,
                   const TensorInfo& out_info, uint8_t* out) {
  if (ins.empty()) throw ShapeError("concat: needs at least one input");
  const int w = byte_width(out_info.dtype);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_info.shape[d];
  for (int d = axis + 1; d < 4; ++d) inner *= out_info.shape[d];
  int64_t axis_total = 0;
  for (const auto& [info, data] : ins) {
    if (info->dtype != out_info.dtype) throw ShapeError("concat: dtype mismatch");
    if (info->quant != out_info.quant)
      throw ShapeError("concat: all tensors must share quant params");
    for (int d = 0; d < 4; ++d)
      if (d != axis && info->shape[d] != out_info.shape[d])
        throw ShapeError("concat: non-axis dims must match");
    axis_total += info->shape[axis];
  }
  if (axis_total != out_info.shape[axis]) throw ShapeError("concat: axis sizes do not add up");

  int64_t axis_off = 0;
  for (const auto& [info, data] : ins) {
    int64_t ai = info->shape[axis];
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out + ((o * out_info.shape[axis] + axis_off) * inner) * w,
                  data + (o * ai * inner) * w, size_t(ai * inner * w));
    }
    axis_off += ai;
  }
}

inline void split(const TensorInfo& in_info, const uint8_t* in, int axis,
                  const std::vector<std::pair<const TensorInfo*, uint8_t*>>& outs) {
  const int w = byte_width(in_info.dtype);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= in_info.shape[d];
  for (int d = axis + 1; d < 4; ++d) inner *= in_info.shape[d];
  int64_t axis_total = 0;
  for (const auto& [info, data] : outs) {
    if (info->dtype != in_info.dtype) throw ShapeError("split: dtype mismatch");
    if (info->quant != in_info.quant) throw ShapeError("split: quant params must match");
    axis_total += info->shape[axis];
  }
  if (axis_total != in_info.shape[axis]) throw ShapeError("split: axis sizes do not add up");
  int64_t axis_off = 0;
  for (const auto& [info, data] : outs) {
    int64_t ai = info->shape[axis];
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(data + (o * ai * inner) * w,
                  in + ((o * in_info.shape[axis] + axis_off) * inner) * w,
                  size_t(ai * inner * w));
    axis_off += ai;
  }
}

}  // namespace kernels

struct RunResult {
  std::vector<std::vector<uint8_t>> outputs;  // one per graph output, in order
  LatencyReport latency;
};

namespace detail {

inline int64_t op_macs(const Graph& g, const OperatorNode& op) {
  switch (op.opcode) {
    case OpCode::Conv2D:
    case OpCode::FetchingConv2D: {
      const TensorInfo& w = g.tensor(op.inputs[op.inputs.size() - 2]);
      const TensorInfo& out = g.tensor(op.outputs.at(0));
      return out.num_elements() * w.shape[1] * w.shape[2] * w.shape[3];
    }
    case OpCode::TransposeConv: {
      const TensorInfo& w = g.tensor(op.inputs[1]);
      const TensorInfo& in = g.tensor(op.inputs[0]);
      return in.num_elements() * w.shape[0] * w.shape[1] * w.shape[2];
    }
    default: return 0;
  }
}

}  // namespace detail

// Interprets the graph against a frozen plan. The plan must match the
// graph's current requirements exactly — stale plans are a logic bug.
inline RunResult run(const Graph& g, const MemoryPlan& plan,
                     const std::vector<std::vector<uint8_t>>& inputs, ExecutionContext& ctx) {
  {
    auto diags = validate(g);
    if (!diags.empty()) throw ValidationError(diags.front());
    auto reqs = collect_requirements(g);
    auto pd = validate_plan(reqs, plan);
    if (!pd.empty()) throw PlanMismatchError(pd.front());
  }
  ctx.timeline = DeviceTimeline{};
  ctx.arena.assign(size_t(plan.arena_size), ctx.canary_checks ? 0xCD : 0x00);

  auto entry = [&](int tid) -> const PlanEntry& {
    const PlanEntry* e = plan.find(tid);
    if (!e) throw PlanMismatchError("tensor " + std::to_string(tid) + " missing from plan");
    return *e;
  };
  auto mut_data = [&](int tid) -> uint8_t* { return ctx.arena.data() + entry(tid).offset; };
  auto data = [&](int tid) -> const uint8_t* {
    const TensorInfo& t = g.tensor(tid);
    if (t.kind == TensorKind::Weight) return t.const_data.data();
    return ctx.arena.data() + entry(tid).offset;
  };

  if (inputs.size() != g.inputs.size())
    throw ShapeError("expected " + std::to_string(g.inputs.size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  for (size_t i = 0; i < inputs.size(); ++i) {
    const TensorInfo& t = g.tensor(g.inputs[i]);
    if (int64_t(inputs[i].size()) != t.size_bytes())
      throw ShapeError("input " + std::to_string(i) + ": expected " +
                       std::to_string(t.size_bytes()) + " bytes, got " +
                       std::to_string(inputs[i].size()));
    std::memcpy(mut_data(t.id), inputs[i].data(), inputs[i].size());
  }

  double cursor = 0;
  auto push_compute = [&](EventKind kind, double dur, const std::string& tag) {
    if (dur <= 0) return;
    ctx.timeline.push0({kind, cursor, cursor + dur, tag});
    cursor += dur;
  };
  auto merge_backend = [&](const StorageOpResult& r) {
    for (const auto& e : r.core0) ctx.timeline.push0(e);
    for (const auto& e : r.core1) ctx.timeline.push1(e);
    cursor = std::max(cursor, r.done_us);
  };
  auto require_backend = [&]() -> StorageBackend& {
    if (!ctx.backend) throw ConfigError("graph spills tensors but no storage backend configured");
    return *ctx.backend;
  };
  // decompressed payload for a spilled tensor; models streaming from
  // storage, so it never occupies the arena
  auto fetch_raw = [&](int victim_id) -> std::vector<uint8_t> {
    const TensorInfo& v = g.tensor(victim_id);
    std::vector<uint8_t> payload;
    StorageOpResult r = require_backend().fetch(victim_id, cursor, ctx.mode, payload);
    merge_backend(r);
    CompressedTensor ct = parse_compressed(payload);
    std::vector<uint8_t> raw = decompress(ct);
    if (int64_t(raw.size()) != v.size_bytes())
      throw FormatError("fetched payload does not match tensor " + std::to_string(victim_id));
    push_compute(EventKind::Decompress, double(raw.size()) * ctx.cost.us_per_byte_moved,
                 "decompress tensor " + std::to_string(victim_id));
    return raw;
  };

  for (const auto& op : g.operators) {
    switch (op.opcode) {
      case OpCode::Conv2D: {
        const TensorInfo& in = g.tensor(op.inputs.at(0));
        const TensorInfo& w = g.tensor(op.inputs.at(1));
        const TensorInfo& out = g.tensor(op.outputs.at(0));
        kernels::ConvOpts opts{int(op.opt("stride", 1)), op.opt("padding", 1) != 0,
                               op.opt("fused_relu", 0) != 0};
        kernels::conv2d(kernels::single_segment(in, reinterpret_cast<const int8_t*>(data(in.id))),
                        w, reinterpret_cast<const int8_t*>(w.const_data.data()),
                        reinterpret_cast<const int32_t*>(data(op.inputs.at(2))), out,
                        reinterpret_cast<int8_t*>(mut_data(out.id)), opts);
        push_compute(EventKind::Compute, double(detail::op_macs(g, op)) * ctx.cost.us_per_mac,
                     "conv2d op " + std::to_string(op.id));
        break;
      }
      case OpCode::TransposeConv: {
        const TensorInfo& in = g.tensor(op.inputs.at(0));
        const TensorInfo& w = g.tensor(op.inputs.at(1));
        const TensorInfo& out = g.tensor(op.outputs.at(0));
        const PlanEntry& se = entry(kScratchIdBase + op.id);
        if (se.size != scratch_bytes(g, op))
          throw PlanMismatchError("scratch for op " + std::to_string(op.id) + " has wrong size");
        kernels::transpose_conv(
            kernels::single_segment(in, reinterpret_cast<const int8_t*>(data(in.id))), w,
            reinterpret_cast<const int8_t*>(w.const_data.data()),
            reinterpret_cast<const int32_t*>(data(op.inputs.at(2))), out,
            reinterpret_cast<int8_t*>(mut_data(out.id)), ctx.arena.data() + se.offset,
            int(op.opt("acc_bits", 32)), int(op.opt("stride", 2)), op.opt("fused_relu", 0) != 0);
        push_compute(EventKind::Compute, double(detail::op_macs(g, op)) * ctx.cost.us_per_mac,
                     "transpose_conv op " + std::to_string(op.id));
        break;
      }
      case OpCode::MaxPool2D: {
        const TensorInfo& in = g.tensor(op.inputs.at(0));
        const TensorInfo& out = g.tensor(op.outputs.at(0));
        kernels::max_pool2d(in, reinterpret_cast<const int8_t*>(data(in.id)), out,
                            reinterpret_cast<int8_t*>(mut_data(out.id)),
                            int(op.opt("filter_h", 2)), int(op.opt("filter_w", 2)),
                            int(op.opt("stride", 2)));
        push_compute(EventKind::Compute, double(out.size_bytes()) * ctx.cost.us_per_byte_moved,
                     "max_pool2d op " + std::to_string(op.id));
        break;
      }
      case OpCode::Concatenation: {
        const TensorInfo& out = g.tensor(op.outputs.at(0));
        std::vector<std::pair<const TensorInfo*, const uint8_t*>> ins;
        for (int tid : op.inputs) ins.emplace_back(&g.tensor(tid), data(tid));
        kernels::concat(ins, int(op.opt("axis", 3)), out, mut_data(out.id));
        push_compute(EventKind::Compute, double(out.size_bytes()) * ctx.cost.us_per_byte_moved,
                     "concat op " + std::to_string(op.id));
        break;
      }
      case OpCode::Split: {
        const TensorInfo& in = g.tensor(op.inputs.at(0));
        std::vector<std::pair<const TensorInfo*, uint8_t*>> outs;
        int64_t moved = 0;
        for (int tid : op.outputs) {
          outs.emplace_back(&g.tensor(tid), mut_data(tid));
          moved += g.tensor(tid).size_bytes();
        }
        kernels::split(in, data(in.id), int(op.opt("axis", 3)), outs);
        push_compute(EventKind::Compute, double(moved) * ctx.cost.us_per_byte_moved,
                     "split op " + std::to_string(op.id));
        break;
      }
      case OpCode::Spill: {
        int victim = op.inputs.at(0);
        const TensorInfo& v = g.tensor(victim);
        std::vector<uint8_t> raw(data(victim), data(victim) + v.size_bytes());
        push_compute(EventKind::Compress, double(raw.size()) * ctx.cost.us_per_byte_moved,
                     "compress tensor " + std::to_string(victim));
        CompressedTensor ct = compress(raw, v.dtype);
        StorageOpResult r = require_backend().spill(victim, serialize(ct), cursor, ctx.mode);
        merge_backend(r);
        break;
      }
      case OpCode::Fetching: {
        int victim = int(op.opt("victim"));
        int nth = int(op.opt("nth", int64_t(op.inputs.size())));
        const TensorInfo& out = g.tensor(op.outputs.at(0));
        std::vector<uint8_t> raw = fetch_raw(victim);
        std::vector<std::pair<const TensorInfo*, const uint8_t*>> ins;
        for (int tid : op.inputs) ins.emplace_back(&g.tensor(tid), data(tid));
        if (nth < 0 || nth > int(ins.size()))
          throw StructureError("fetching op " + std::to_string(op.id) + ": nth out of range");
        ins.insert(ins.begin() + nth, {&g.tensor(victim), raw.data()});
        kernels::concat(ins, int(op.opt("axis", 3)), out, mut_data(out.id));
        push_compute(EventKind::Compute, double(out.size_bytes()) * ctx.cost.us_per_byte_moved,
                     "fetching op " + std::to_string(op.id));
        break;
      }
      case OpCode::FetchingConv2D: {
        if (op.inputs.size() < 2)
          throw StructureError("fetching_conv2d op " + std::to_string(op.id) +
                               ": needs filter and bias inputs");
        int victim = int(op.opt("victim"));
        size_t n_live = op.inputs.size() - 2;
        int nth = int(op.opt("nth", int64_t(n_live)));
        const TensorInfo& w = g.tensor(op.inputs[n_live]);
        const TensorInfo& out = g.tensor(op.outputs.at(0));
        if (op.opt("axis", 3) != 3)
          throw StructureError("fetching_conv2d op " + std::to_string(op.id) +
                               ": only channel-axis fusion is executable");
        std::vector<uint8_t> raw = fetch_raw(victim);

        const TensorInfo& vt = g.tensor(victim);
        std::vector<const TensorInfo*> parts;
        for (size_t i = 0; i < n_live; ++i) parts.push_back(&g.tensor(op.inputs[i]));
        if (nth < 0 || nth > int(parts.size()))
          throw StructureError("fetching_conv2d op " + std::to_string(op.id) +
                               ": nth out of range");
        parts.insert(parts.begin() + nth, &vt);

        kernels::ChannelSegments cs;
        cs.n = parts[0]->shape[0];
        cs.h = parts[0]->shape[1];
        cs.w = parts[0]->shape[2];
        if (!parts[0]->quant) throw ShapeError("fetching_conv2d: missing quant params");
        cs.scale = parts[0]->quant->scale;
        cs.zero_point = parts[0]->quant->zero_point;
        for (size_t i = 0; i < parts.size(); ++i) {
          const TensorInfo* p = parts[i];
          if (p->shape[0] != cs.n || p->shape[1] != cs.h || p->shape[2] != cs.w ||
              !p->quant || !(*p->quant == QuantParams{cs.scale, cs.zero_point}))
            throw ShapeError("fetching_conv2d: segments must share shape and quant params");
          const int8_t* seg_data = (p == &vt) ? reinterpret_cast<const int8_t*>(raw.data())
                                              : reinterpret_cast<const int8_t*>(data(p->id));
          cs.segs.push_back({seg_data, p->shape[3]});
          cs.c += p->shape[3];
        }
        kernels::ConvOpts opts{int(op.opt("stride", 1)), op.opt("padding", 1) != 0,
                               op.opt("fused_relu", 0) != 0};
        kernels::conv2d(cs, w, reinterpret_cast<const int8_t*>(w.const_data.data()),
                        reinterpret_cast<const int32_t*>(data(op.inputs[n_live + 1])), out,
                        reinterpret_cast<int8_t*>(mut_data(out.id)), opts);
        push_compute(EventKind::Compute, double(detail::op_macs(g, op)) * ctx.cost.us_per_mac,
                     "fetching_conv2d op " + std::to_string(op.id));
        break;
      }
    }

    if (ctx.canary_checks) {
      for (const auto& e : plan.entries) {
        if (e.last != op.id) continue;
        bool is_output = std::find(g.outputs.begin(), g.outputs.end(), e.id) != g.outputs.end();
        if (!is_output)
          std::memset(ctx.arena.data() + e.offset, 0xCD, size_t(e.size));
      }
    }
  }

  RunResult res;
  for (int tid : g.outputs) {
    const TensorInfo& t = g.tensor(tid);
    res.outputs.emplace_back(data(tid), data(tid) + t.size_bytes());
  }
  res.latency = report(ctx.timeline);
  return res;
}

}  // namespace memopt
