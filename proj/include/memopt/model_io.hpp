#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "memopt/graph.hpp"

namespace memopt {

inline std::string base64_encode(const std::vector<uint8_t>& in) {
  static const char tab[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= in.size(); i += 3) {
    uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out += tab[(v >> 18) & 63];
    out += tab[(v >> 12) & 63];
    out += tab[(v >> 6) & 63];
    out += tab[v & 63];
  }
  if (i + 1 == in.size()) {
    uint32_t v = in[i] << 16;
    out += tab[(v >> 18) & 63];
    out += tab[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == in.size()) {
    uint32_t v = (in[i] << 16) | (in[i + 1] << 8);
    out += tab[(v >> 18) & 63];
    out += tab[(v >> 12) & 63];
    out += tab[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::vector<uint8_t> base64_decode(const std::string& in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw ParseError("invalid base64 character");
  };
  if (in.size() % 4 != 0) throw ParseError("base64 length must be a multiple of 4");
  std::vector<uint8_t> out;
  out.reserve(in.size() / 4 * 3);
  for (size_t i = 0; i < in.size(); i += 4) {
    int a = val(in[i]), b = val(in[i + 1]), c = val(in[i + 2]), d = val(in[i + 3]);
    if (a < 0 || b < 0) throw ParseError("malformed base64 padding");
    uint32_t v = (uint32_t(a) << 18) | (uint32_t(b) << 12);
    out.push_back((v >> 16) & 0xff);
    if (c >= 0) {
      v |= uint32_t(c) << 6;
      out.push_back((v >> 8) & 0xff);
      if (d >= 0) {
        v |= uint32_t(d);
        out.push_back(v & 0xff);
      }
    } else if (d >= 0) {
      throw ParseError("malformed base64 padding");
    }
  }
  return out;
}

inline nlohmann::json options_to_json(const Options& opts) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : opts) {
    if (std::holds_alternative<int64_t>(v))
      j[k] = std::get<int64_t>(v);
    else
      j[k] = std::get<std::vector<int64_t>>(v);
  }
  return j;
}

inline Options options_from_json(const nlohmann::json& j) {
  Options opts;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it->is_array())
      opts[it.key()] = it->get<std::vector<int64_t>>();
    else if (it->is_number_integer())
      opts[it.key()] = it->get<int64_t>();
    else
      throw ParseError("option '" + it.key() + "' must be an integer or integer list");
  }
  return opts;
}

inline nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json j;
  j["version"] = 1;
  j["tensors"] = nlohmann::json::array();
  for (const auto& t : g.tensors) {
    nlohmann::json jt;
    jt["id"] = t.id;
    jt["name"] = t.name;
    jt["shape"] = t.shape;
    jt["dtype"] = dtype_name(t.dtype);
    jt["kind"] = kind_name(t.kind);
    if (t.quant) {
      jt["quant"] = {{"scale", t.quant->scale}, {"zero_point", t.quant->zero_point}};
    }
    if (!t.const_data.empty()) jt["data"] = base64_encode(t.const_data);
    j["tensors"].push_back(std::move(jt));
  }
  j["operators"] = nlohmann::json::array();
  for (const auto& op : g.operators) {
    nlohmann::json jo;
    jo["opcode"] = opcode_name(op.opcode);
    jo["inputs"] = op.inputs;
    jo["outputs"] = op.outputs;
    jo["options"] = options_to_json(op.options);
    j["operators"].push_back(std::move(jo));
  }
  j["inputs"] = g.inputs;
  j["outputs"] = g.outputs;
  return j;
}

inline Graph graph_from_json(const nlohmann::json& j) {
  try {
    if (!j.contains("version") || j.at("version").get<int>() != 1)
      throw ParseError("unsupported model version");
    Graph g;
    for (const auto& jt : j.at("tensors")) {
      TensorInfo t;
      t.id = jt.at("id").get<int>();
      t.name = jt.value("name", std::string{});
      auto shp = jt.at("shape").get<std::vector<int>>();
      if (shp.size() != 4) throw ParseError("tensor shape must have 4 dims");
      std::copy(shp.begin(), shp.end(), t.shape.begin());
      t.dtype = dtype_from_name(jt.at("dtype").get<std::string>());
      t.kind = kind_from_name(jt.at("kind").get<std::string>());
      if (jt.contains("quant")) {
        QuantParams q;
        q.scale = jt.at("quant").at("scale").get<double>();
        q.zero_point = jt.at("quant").at("zero_point").get<int32_t>();
        t.quant = q;
      }
      if (jt.contains("data")) t.const_data = base64_decode(jt.at("data").get<std::string>());
      g.tensors.push_back(std::move(t));
    }
    std::sort(g.tensors.begin(), g.tensors.end(),
              [](const TensorInfo& a, const TensorInfo& b) { return a.id < b.id; });
    int pos = 0;
    for (const auto& jo : j.at("operators")) {
      OperatorNode op;
      op.id = pos++;
      op.opcode = opcode_from_name(jo.at("opcode").get<std::string>());
      op.inputs = jo.at("inputs").get<std::vector<int>>();
      op.outputs = jo.at("outputs").get<std::vector<int>>();
      if (jo.contains("options")) op.options = options_from_json(jo.at("options"));
      g.operators.push_back(std::move(op));
    }
    g.inputs = j.at("inputs").get<std::vector<int>>();
    g.outputs = j.at("outputs").get<std::vector<int>>();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model json: ") + e.what());
  }
}

inline Graph load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid json in '") + path + "': " + e.what());
  }
  Graph g = graph_from_json(j);
  auto diags = validate(g);
  if (!diags.empty()) throw ValidationError(diags.front());
  return g;
}

inline void save_model(const Graph& g, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << graph_to_json(g).dump(1) << "\n";
  if (!f) throw IoError("write failed for '" + path + "'");
}

// FNV-1a over the canonical serialized form; stable across platforms.
inline uint64_t graph_hash(const Graph& g) {
  std::string s = graph_to_json(g).dump();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---- raw tensor container ---------------------------------------------
// 16-byte header: "MTSR" magic, dtype code, 3 reserved bytes, then the
// 4-dim shape as uint16 little-endian; raw little-endian payload follows.

struct TensorFile {
  std::array<int, 4> shape{1, 1, 1, 1};
  DType dtype = DType::I8;
  std::vector<uint8_t> payload;
};

inline void save_tensor(const TensorFile& t, const std::string& path) {
  int64_t elems = int64_t(t.shape[0]) * t.shape[1] * t.shape[2] * t.shape[3];
  if (int64_t(t.payload.size()) != elems * byte_width(t.dtype))
    throw ShapeError("tensor payload does not match shape");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  uint8_t header[16] = {'M', 'T', 'S', 'R', uint8_t(t.dtype), 0, 0, 0};
  for (int i = 0; i < 4; ++i) {
    if (t.shape[i] < 1 || t.shape[i] > 0xffff) throw ShapeError("shape dim out of range");
    header[8 + 2 * i] = uint8_t(t.shape[i] & 0xff);
    header[9 + 2 * i] = uint8_t((t.shape[i] >> 8) & 0xff);
  }
  f.write(reinterpret_cast<const char*>(header), 16);
  f.write(reinterpret_cast<const char*>(t.payload.data()), std::streamsize(t.payload.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline TensorFile load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  uint8_t header[16];
  f.read(reinterpret_cast<char*>(header), 16);
  if (f.gcount() != 16 || header[0] != 'M' || header[1] != 'T' || header[2] != 'S' ||
      header[3] != 'R')
    throw FormatError("'" + path + "' is not a tensor file");
  TensorFile t;
  if (header[4] > 3) throw FormatError("bad dtype code in '" + path + "'");
  t.dtype = DType(header[4]);
  for (int i = 0; i < 4; ++i) t.shape[i] = header[8 + 2 * i] | (header[9 + 2 * i] << 8);
  int64_t elems = int64_t(t.shape[0]) * t.shape[1] * t.shape[2] * t.shape[3];
  t.payload.resize(size_t(elems) * byte_width(t.dtype));
  f.read(reinterpret_cast<char*>(t.payload.data()), std::streamsize(t.payload.size()));
  if (size_t(f.gcount()) != t.payload.size()) throw FormatError("'" + path + "' truncated");
  return t;
}

}  // namespace memopt
