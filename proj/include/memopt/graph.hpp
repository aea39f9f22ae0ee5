#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "memopt/errors.hpp"

namespace memopt {

enum class DType : uint8_t { I8 = 0, I16 = 1, I32 = 2, F32 = 3 };

inline int byte_width(DType t) {
  switch (t) {
    case DType::I8: return 1;
    case DType::I16: return 2;
    case DType::I32: return 4;
    case DType::F32: return 4;
  }
  throw Error("unknown dtype");
}

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::I8: return "i8";
    case DType::I16: return "i16";
    case DType::I32: return "i32";
    case DType::F32: return "f32";
  }
  throw Error("unknown dtype");
}

inline DType dtype_from_name(const std::string& s) {
  if (s == "i8") return DType::I8;
  if (s == "i16") return DType::I16;
  if (s == "i32") return DType::I32;
  if (s == "f32") return DType::F32;
  throw ParseError("unknown dtype '" + s + "'");
}

struct QuantParams {
  double scale = 1.0;
  int32_t zero_point = 0;
  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

enum class TensorKind : uint8_t { GraphInput = 0, GraphOutput = 1, Weight = 2, Activation = 3 };

inline const char* kind_name(TensorKind k) {
  switch (k) {
    case TensorKind::GraphInput: return "graph_input";
    case TensorKind::GraphOutput: return "graph_output";
    case TensorKind::Weight: return "weight";
    case TensorKind::Activation: return "activation";
  }
  throw Error("unknown tensor kind");
}

inline TensorKind kind_from_name(const std::string& s) {
  if (s == "graph_input") return TensorKind::GraphInput;
  if (s == "graph_output") return TensorKind::GraphOutput;
  if (s == "weight") return TensorKind::Weight;
  if (s == "activation") return TensorKind::Activation;
  throw ParseError("unknown tensor kind '" + s + "'");
}

// Shapes are always 4-D. Activations are NHWC; convolution filters use
// (out_channels, kh, kw, in_channels) in the same four slots.
struct TensorInfo {
  int id = -1;
  std::string name;
  std::array<int, 4> shape{1, 1, 1, 1};
  DType dtype = DType::I8;
  std::optional<QuantParams> quant;
  TensorKind kind = TensorKind::Activation;
  std::vector<uint8_t> const_data;  // present iff kind == Weight

  int64_t num_elements() const {
    return int64_t(shape[0]) * shape[1] * shape[2] * shape[3];
  }
  int64_t size_bytes() const { return num_elements() * byte_width(dtype); }

  friend bool operator==(const TensorInfo&, const TensorInfo&) = default;
};

enum class OpCode : uint8_t {
  Conv2D,
  TransposeConv,
  MaxPool2D,
  Concatenation,
  Split,
  Spill,
  Fetching,
  FetchingConv2D,
};

inline const char* opcode_name(OpCode c) {
  switch (c) {
    case OpCode::Conv2D: return "conv2d";
    case OpCode::TransposeConv: return "transpose_conv";
    case OpCode::MaxPool2D: return "max_pool2d";
    case OpCode::Concatenation: return "concatenation";
    case OpCode::Split: return "split";
    case OpCode::Spill: return "spill";
    case OpCode::Fetching: return "fetching";
    case OpCode::FetchingConv2D: return "fetching_conv2d";
  }
  throw Error("unknown opcode");
}

inline OpCode opcode_from_name(const std::string& s) {
  if (s == "conv2d") return OpCode::Conv2D;
  if (s == "transpose_conv") return OpCode::TransposeConv;
  if (s == "max_pool2d") return OpCode::MaxPool2D;
  if (s == "concatenation") return OpCode::Concatenation;
  if (s == "split") return OpCode::Split;
  if (s == "spill") return OpCode::Spill;
  if (s == "fetching") return OpCode::Fetching;
  if (s == "fetching_conv2d") return OpCode::FetchingConv2D;
  throw ParseError("unknown opcode '" + s + "'");
}

// Operator options form a flat string-keyed map; values are integers or
// integer lists (e.g. split_sizes). std::map keeps serialization stable.
using OptionValue = std::variant<int64_t, std::vector<int64_t>>;
using Options = std::map<std::string, OptionValue>;

struct OperatorNode {
  int id = -1;  // position in execution order; renumbered after rewrites
  OpCode opcode = OpCode::Conv2D;
  std::vector<int> inputs;   // tensor ids
  std::vector<int> outputs;  // tensor ids
  Options options;

  int64_t opt(const std::string& key, int64_t fallback) const {
    auto it = options.find(key);
    if (it == options.end()) return fallback;
    const int64_t* v = std::get_if<int64_t>(&it->second);
    if (!v)
      throw StructureError("operator " + std::to_string(id) + ": option '" + key +
                           "' is a list, not a scalar");
    return *v;
  }
  int64_t opt(const std::string& key) const {
    auto it = options.find(key);
    if (it == options.end())
      throw StructureError("operator " + std::to_string(id) + ": missing option '" + key + "'");
    const int64_t* v = std::get_if<int64_t>(&it->second);
    if (!v)
      throw StructureError("operator " + std::to_string(id) + ": option '" + key +
                           "' is a list, not a scalar");
    return *v;
  }
  const std::vector<int64_t>& opt_list(const std::string& key) const {
    auto it = options.find(key);
    if (it == options.end())
      throw StructureError("operator " + std::to_string(id) + ": missing option '" + key + "'");
    const auto* v = std::get_if<std::vector<int64_t>>(&it->second);
    if (!v)
      throw StructureError("operator " + std::to_string(id) + ": option '" + key +
                           "' is a scalar, not a list");
    return *v;
  }

  friend bool operator==(const OperatorNode&, const OperatorNode&) = default;
};

struct Graph {
  std::vector<TensorInfo> tensors;     // kept sorted by id; ids may have gaps
  std::vector<OperatorNode> operators; // execution order, op.id == index
  std::vector<int> inputs;             // tensor ids
  std::vector<int> outputs;            // tensor ids

  const TensorInfo* find_tensor(int id) const {
    for (const auto& t : tensors)
      if (t.id == id) return &t;
    return nullptr;
  }
  TensorInfo* find_tensor(int id) {
    for (auto& t : tensors)
      if (t.id == id) return &t;
    return nullptr;
  }
  const TensorInfo& tensor(int id) const {
    const TensorInfo* t = find_tensor(id);
    if (!t) throw StructureError("tensor " + std::to_string(id) + ": not in graph");
    return *t;
  }

  int next_tensor_id() const {
    int next = 0;
    for (const auto& t : tensors) next = std::max(next, t.id + 1);
    return next;
  }
  // Appends with a fresh id; table stays id-sorted because ids only grow.
  int add_tensor(TensorInfo t) {
    t.id = next_tensor_id();
    tensors.push_back(std::move(t));
    return tensors.back().id;
  }
  void erase_tensor(int id) {
    for (size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].id == id) {
        tensors.erase(tensors.begin() + i);
        return;
      }
    }
    throw StructureError("tensor " + std::to_string(id) + ": not in graph");
  }
  void renumber_operators() {
    for (size_t i = 0; i < operators.size(); ++i) operators[i].id = int(i);
  }

  friend bool operator==(const Graph&, const Graph&) = default;
};

inline bool is_int_dtype(DType t) { return t != DType::F32; }

inline int64_t dtype_min(DType t) {
  switch (t) {
    case DType::I8: return -128;
    case DType::I16: return -32768;
    case DType::I32: return INT32_MIN;
    default: return 0;
  }
}
inline int64_t dtype_max(DType t) {
  switch (t) {
    case DType::I8: return 127;
    case DType::I16: return 32767;
    case DType::I32: return INT32_MAX;
    default: return 0;
  }
}

// Structural checks. Returns human-readable diagnostics; each names the
// offending entity ("tensor 7: ...", "operator 3: ...").
inline std::vector<std::string> validate(const Graph& g) {
  std::vector<std::string> diags;
  auto bad = [&](const std::string& m) { diags.push_back(m); };

  std::map<int, const TensorInfo*> by_id;
  for (const auto& t : g.tensors) {
    std::string who = "tensor " + std::to_string(t.id);
    if (by_id.count(t.id)) bad(who + ": duplicate id");
    by_id[t.id] = &t;
    for (int d : t.shape)
      if (d < 1) {
        bad(who + ": shape dimension < 1");
        break;
      }
    bool has_data = !t.const_data.empty();
    if (has_data != (t.kind == TensorKind::Weight))
      bad(who + ": const_data present iff kind is weight");
    if (has_data && int64_t(t.const_data.size()) != t.size_bytes())
      bad(who + ": const_data length does not match shape");
    if (t.quant) {
      if (!(t.quant->scale > 0.0)) bad(who + ": quant scale must be > 0");
      if (is_int_dtype(t.dtype) &&
          (t.quant->zero_point < dtype_min(t.dtype) || t.quant->zero_point > dtype_max(t.dtype)))
        bad(who + ": zero_point outside dtype range");
    }
  }

  // definition sites
  std::map<int, std::vector<int>> defined_by;  // tensor id -> op ids
  for (const auto& op : g.operators)
    for (int out : op.outputs) defined_by[out].push_back(op.id);

  for (const auto& [tid, ops] : defined_by) {
    if (!by_id.count(tid)) continue;  // reported below via operator check
    const TensorInfo& t = *by_id.at(tid);
    if (ops.size() > 1)
      bad("tensor " + std::to_string(tid) + ": defined by " + std::to_string(ops.size()) +
          " operators (" + std::to_string(ops[0]) + " and " + std::to_string(ops[1]) + ")");
    if (t.kind == TensorKind::GraphInput || t.kind == TensorKind::Weight)
      bad("tensor " + std::to_string(tid) + ": " + kind_name(t.kind) +
          " must not be an operator output");
  }
  for (const auto& t : g.tensors) {
    if ((t.kind == TensorKind::Activation || t.kind == TensorKind::GraphOutput) &&
        !defined_by.count(t.id))
      bad("tensor " + std::to_string(t.id) + ": never defined by an operator");
  }

  for (size_t i = 0; i < g.operators.size(); ++i) {
    const OperatorNode& op = g.operators[i];
    std::string who = "operator " + std::to_string(i);
    if (op.id != int(i)) bad(who + ": id must equal execution position");
    for (int in : op.inputs) {
      if (!by_id.count(in)) {
        bad(who + ": references undefined tensor " + std::to_string(in));
        continue;
      }
      const TensorInfo& t = *by_id.at(in);
      if (t.kind == TensorKind::GraphInput || t.kind == TensorKind::Weight) continue;
      auto it = defined_by.find(in);
      if (it == defined_by.end()) continue;  // already reported
      if (it->second.front() >= int(i))
        bad(who + ": input tensor " + std::to_string(in) + " defined at or after use");
    }
    for (int out : op.outputs)
      if (!by_id.count(out)) bad(who + ": references undefined tensor " + std::to_string(out));
    if (op.opcode == OpCode::Spill && !op.outputs.empty())
      bad(who + ": spill must have zero outputs");
  }

  for (int tid : g.inputs) {
    if (!by_id.count(tid))
      bad("graph inputs: references undefined tensor " + std::to_string(tid));
    else if (by_id.at(tid)->kind != TensorKind::GraphInput)
      bad("tensor " + std::to_string(tid) + ": listed as graph input but kind is " +
          kind_name(by_id.at(tid)->kind));
  }
  for (int tid : g.outputs) {
    if (!by_id.count(tid))
      bad("graph outputs: references undefined tensor " + std::to_string(tid));
    else if (by_id.at(tid)->kind != TensorKind::GraphOutput)
      bad("tensor " + std::to_string(tid) + ": listed as graph output but kind is " +
          kind_name(by_id.at(tid)->kind));
  }
  return diags;
}

}  // namespace memopt
