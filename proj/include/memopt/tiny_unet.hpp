#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "memopt/graph.hpp"

namespace memopt {

// Hourglass segmentation net: conv/pool encoder, transpose-conv decoder,
// channel concats on the shallowest `skips` levels. Small enough to run in
// tests, deep enough that the first skip crosses most of the schedule.
struct TinyUnetConfig {
  int batch = 1;
  int height = 80;
  int width = 120;
  int in_channels = 3;
  std::vector<int> channels = {8, 16, 32};
  int skips = 2;
  int out_channels = 1;
  uint64_t seed = 1;
};

namespace detail {

// mt19937 output is pinned by the standard; the distribution adapters are
// not, so reduce by hand to keep models byte-identical across platforms.
inline int rng_range(std::mt19937& rng, int lo, int hi) {
  return lo + int(rng() % uint32_t(hi - lo + 1));
}

struct UnetBuilder {
  Graph g;
  std::mt19937 rng;
  double act_scale = 0.0625;
  int32_t act_zp = -1;

  explicit UnetBuilder(uint64_t seed) : rng(uint32_t(seed ^ (seed >> 32))) {}

  int add_act(const std::string& name, std::array<int, 4> shape,
              TensorKind kind = TensorKind::Activation) {
    TensorInfo t;
    t.name = name;
    t.shape = shape;
    t.dtype = DType::I8;
    t.kind = kind;
    t.quant = QuantParams{act_scale, act_zp};
    return g.add_tensor(std::move(t));
  }

  std::vector<uint8_t> draw_weights(int64_t count, int lo, int hi) {
    std::vector<uint8_t> data(size_t(count), 0);
    for (auto& b : data) b = uint8_t(int8_t(rng_range(rng, lo, hi)));
    return data;
  }

  int add_weight(const std::string& name, std::array<int, 4> shape,
                 std::vector<uint8_t> data, double scale) {
    TensorInfo t;
    t.name = name;
    t.shape = shape;
    t.dtype = DType::I8;
    t.kind = TensorKind::Weight;
    t.quant = QuantParams{scale, 0};
    t.const_data = std::move(data);
    return g.add_tensor(std::move(t));
  }

  int add_bias(const std::string& name, int n, double scale) {
    TensorInfo t;
    t.name = name;
    t.shape = {n, 1, 1, 1};
    t.dtype = DType::I32;
    t.kind = TensorKind::Weight;
    t.quant = QuantParams{scale, 0};
    t.const_data.resize(size_t(n) * 4);
    auto* vals = reinterpret_cast<int32_t*>(t.const_data.data());
    for (int i = 0; i < n; ++i) vals[i] = rng_range(rng, -500, 500);
    return g.add_tensor(std::move(t));
  }

  // Weight scale that keeps conv outputs spread over the I8 range instead
  // of saturating: pick the requantize multiplier M so a typical
  // accumulator (rms_in * sqrt(taps) * rms_w) lands around 40 counts,
  // then back out w_scale = M * out_scale / in_scale = M (scales match).
  double fit_scale(const std::vector<uint8_t>& wdata, int taps) {
    double ss = 0;
    for (uint8_t b : wdata) {
      double v = double(int8_t(b));
      ss += v * v;
    }
    double rms_w = wdata.empty() ? 1.0 : std::sqrt(ss / double(wdata.size()));
    if (rms_w < 1e-6) rms_w = 1.0;
    const double rms_in = 74.0;  // I8 uniform over the full range
    double acc = rms_in * std::sqrt(double(taps)) * rms_w;
    return 40.0 / acc;
  }

  int conv(const std::string& name, int input, int cout, int ksize, bool relu,
           TensorKind out_kind = TensorKind::Activation) {
    const std::array<int, 4> in_shape = g.tensor(input).shape;
    const int taps = ksize * ksize * in_shape[3];
    auto data = draw_weights(int64_t(cout) * ksize * ksize * in_shape[3], -127, 127);
    const double w_scale = fit_scale(data, taps);
    int w = add_weight(name + "_w", {cout, ksize, ksize, in_shape[3]}, std::move(data), w_scale);
    int b = add_bias(name + "_b", cout, act_scale * w_scale);
    int out = add_act(name, {in_shape[0], in_shape[1], in_shape[2], cout}, out_kind);
    OperatorNode op;
    op.opcode = OpCode::Conv2D;
    op.inputs = {input, w, b};
    op.outputs = {out};
    op.options["stride"] = int64_t(1);
    op.options["padding"] = int64_t(1);  // SAME
    op.options["fused_relu"] = int64_t(relu ? 1 : 0);
    op.id = int(g.operators.size());
    g.operators.push_back(std::move(op));
    return out;
  }

  int max_pool(const std::string& name, int input) {
    const std::array<int, 4> in = g.tensor(input).shape;
    int out = add_act(name, {in[0], in[1] / 2, in[2] / 2, in[3]});
    OperatorNode op;
    op.opcode = OpCode::MaxPool2D;
    op.inputs = {input};
    op.outputs = {out};
    op.options["filter_h"] = int64_t(2);
    op.options["filter_w"] = int64_t(2);
    op.options["stride"] = int64_t(2);
    op.id = int(g.operators.size());
    g.operators.push_back(std::move(op));
    return out;
  }

  // 2x upsampling transpose conv. Weight magnitudes are capped low so the
  // per-element abs-weight bound stays well inside a 16-bit accumulator.
  int up_conv(const std::string& name, int input, int cout) {
    const std::array<int, 4> in_shape = g.tensor(input).shape;
    const int taps = in_shape[3];  // one (fh,fw) tap pair lands on each output
    auto data = draw_weights(int64_t(cout) * 2 * 2 * in_shape[3], -6, 6);
    const double w_scale = fit_scale(data, taps);
    int w = add_weight(name + "_w", {cout, 2, 2, in_shape[3]}, std::move(data), w_scale);
    int b = add_bias(name + "_b", cout, act_scale * w_scale);
    int out = add_act(name, {in_shape[0], in_shape[1] * 2, in_shape[2] * 2, cout});
    OperatorNode op;
    op.opcode = OpCode::TransposeConv;
    op.inputs = {input, w, b};
    op.outputs = {out};
    op.options["stride"] = int64_t(2);
    op.id = int(g.operators.size());
    g.operators.push_back(std::move(op));
    return out;
  }

  int concat(const std::string& name, int a, int b) {
    const std::array<int, 4> sa = g.tensor(a).shape;
    const std::array<int, 4> sb = g.tensor(b).shape;
    int out = add_act(name, {sa[0], sa[1], sa[2], sa[3] + sb[3]});
    OperatorNode op;
    op.opcode = OpCode::Concatenation;
    op.inputs = {a, b};
    op.outputs = {out};
    op.options["axis"] = int64_t(3);
    op.id = int(g.operators.size());
    g.operators.push_back(std::move(op));
    return out;
  }
};

}  // namespace detail

inline Graph build_tiny_unet(const TinyUnetConfig& cfg) {
  const int levels = int(cfg.channels.size());
  if (levels < 2) throw ConfigError("need at least two channel counts");
  if (cfg.skips < 0 || cfg.skips > levels - 1)
    throw ConfigError("skips must be in [0, levels-1]");
  const int down = 1 << (levels - 1);
  if (cfg.height % down != 0 || cfg.width % down != 0)
    throw ConfigError("height and width must be divisible by " + std::to_string(down));
  if (cfg.batch < 1 || cfg.in_channels < 1 || cfg.out_channels < 1)
    throw ConfigError("batch and channel counts must be positive");

  detail::UnetBuilder b(cfg.seed);
  int input = b.add_act("input", {cfg.batch, cfg.height, cfg.width, cfg.in_channels},
                        TensorKind::GraphInput);
  b.g.inputs = {input};

  std::vector<int> skip_ids(size_t(levels - 1), -1);
  int cur = input;
  for (int lvl = 0; lvl < levels - 1; ++lvl) {
    cur = b.conv("enc" + std::to_string(lvl), cur, cfg.channels[size_t(lvl)], 3, true);
    skip_ids[size_t(lvl)] = cur;
    cur = b.max_pool("pool" + std::to_string(lvl), cur);
  }
  cur = b.conv("bottleneck", cur, cfg.channels.back(), 3, true);
  for (int lvl = levels - 2; lvl >= 0; --lvl) {
    cur = b.up_conv("up" + std::to_string(lvl), cur, cfg.channels[size_t(lvl)]);
    if (lvl < cfg.skips) cur = b.concat("cat" + std::to_string(lvl), cur, skip_ids[size_t(lvl)]);
    cur = b.conv("dec" + std::to_string(lvl), cur, cfg.channels[size_t(lvl)], 3, true);
  }
  int out = b.conv("logits", cur, cfg.out_channels, 1, false, TensorKind::GraphOutput);
  b.g.outputs = {out};

  auto problems = validate(b.g);
  if (!problems.empty()) throw StructureError("generated model invalid: " + problems.front());
  return std::move(b.g);
}

}  // namespace memopt
