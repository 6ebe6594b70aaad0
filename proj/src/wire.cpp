#include "edif/wire.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <cmath>
#include <cstring>
#include <set>

namespace edif {

using nlohmann::json;

namespace json_util {

json parse(std::string_view bytes) {
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformed, e.what());
  }
}

void require_keys(const json& j, std::initializer_list<std::string_view> required,
                  std::initializer_list<std::string_view> optional, std::string_view where) {
  if (!j.is_object()) throw Error(ErrorCode::kMalformed, std::string(where) + " must be an object");
  for (auto key : required) {
    if (!j.contains(key)) {
      throw Error(ErrorCode::kMalformed, std::string(where) + " is missing '" + std::string(key) + "'");
    }
  }
  for (const auto& [key, value] : j.items()) {
    const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                       std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) throw Error(ErrorCode::kUnknownField, std::string(where) + " has unknown field '" + key + "'");
  }
}

std::int64_t get_int(const json& j, std::string_view key) {
  const auto& v = j.at(std::string(key));
  if (!v.is_number_integer()) {
    throw Error(ErrorCode::kMalformed, "'" + std::string(key) + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

std::string get_string(const json& j, std::string_view key) {
  const auto& v = j.at(std::string(key));
  if (!v.is_string()) throw Error(ErrorCode::kMalformed, "'" + std::string(key) + "' must be a string");
  return v.get<std::string>();
}

}  // namespace json_util

namespace {

using json_util::get_int;
using json_util::get_string;
using json_util::require_keys;

int get_small_int(const json& j, std::string_view key) {
  const std::int64_t v = get_int(j, key);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw Error(ErrorCode::kMalformed, "'" + std::string(key) + "' out of range");
  }
  return static_cast<int>(v);
}

void check_version(const json& j, std::string_view where) {
  if (get_string(j, "version") != kProtocolVersion) {
    throw Error(ErrorCode::kMalformed, std::string(where) + " version must be " + std::string(kProtocolVersion));
  }
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T read_le(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw Error(ErrorCode::kMalformed, "truncated tensor header");
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

void check_graph_limits(std::size_t invocations, std::size_t nodes) {
  if (invocations > kMaxInvocations) {
    throw Error(ErrorCode::kLimitExceeded,
                std::to_string(invocations) + " invocations exceeds " + std::to_string(kMaxInvocations));
  }
  if (nodes > kMaxNodes) {
    throw Error(ErrorCode::kLimitExceeded,
                std::to_string(nodes) + " nodes exceeds " + std::to_string(kMaxNodes));
  }
}

json node_to_json(const GraphNode& n) {
  json j;
  j["id"] = n.id;
  j["op"] = to_string(n.op);
  switch (n.op) {
    case OpKind::kCapture:
      j["invocation"] = n.invocation;
      j["point"] = n.point;
      break;
    case OpKind::kPatch:
      j["invocation"] = n.invocation;
      j["point"] = n.point;
      j["source"] = n.source;
      break;
    case OpKind::kConst:
      j["tensor"] = tensor_to_json(encode_tensor(n.literal, Encoding::kRaw));
      break;
    case OpKind::kBinop:
      j["kind"] = to_string(n.binop);
      j["lhs"] = n.lhs;
      j["rhs"] = n.rhs;
      break;
    case OpKind::kScale:
      if (!std::isfinite(n.scalar)) throw Error(ErrorCode::kMalformed, "SCALE scalar must be finite");
      j["scalar"] = static_cast<double>(n.scalar);
      j["operand"] = n.operand;
      break;
    case OpKind::kSlice:
      j["operand"] = n.operand;
      j["axis"] = n.axis.value_or(0);
      j["start"] = n.start;
      j["end"] = n.end;
      break;
    case OpKind::kReduce:
      j["kind"] = to_string(n.reduce);
      j["operand"] = n.operand;
      j["axis"] = n.axis ? json(*n.axis) : json(nullptr);
      if (n.reduce == ReduceKind::kTopk) j["k"] = n.k;
      break;
    case OpKind::kUnembed:
      j["operand"] = n.operand;
      j["norm"] = n.norm;
      break;
    case OpKind::kSave:
      j["operand"] = n.operand;
      j["name"] = n.name;
      break;
  }
  return j;
}

GraphNode node_from_json(const json& j) {
  if (!j.is_object() || !j.contains("op")) throw Error(ErrorCode::kMalformed, "node must be an object with 'op'");
  GraphNode n;
  n.op = op_kind_from_string(get_string(j, "op"));
  const std::string where = "node";
  switch (n.op) {
    case OpKind::kCapture:
      require_keys(j, {"id", "op", "invocation", "point"}, {}, where);
      n.invocation = get_small_int(j, "invocation");
      n.point = get_string(j, "point");
      break;
    case OpKind::kPatch:
      require_keys(j, {"id", "op", "invocation", "point", "source"}, {}, where);
      n.invocation = get_small_int(j, "invocation");
      n.point = get_string(j, "point");
      n.source = get_small_int(j, "source");
      break;
    case OpKind::kConst: {
      require_keys(j, {"id", "op", "tensor"}, {}, where);
      const TensorWire wire = tensor_from_json(j.at("tensor"));
      if (wire.data.size() > kMaxConstBytes) {
        throw Error(ErrorCode::kLimitExceeded, "CONST literal exceeds 1 MiB");
      }
      n.literal = decode_tensor(wire);
      break;
    }
    case OpKind::kBinop:
      require_keys(j, {"id", "op", "kind", "lhs", "rhs"}, {}, where);
      n.binop = binop_kind_from_string(get_string(j, "kind"));
      n.lhs = get_small_int(j, "lhs");
      n.rhs = get_small_int(j, "rhs");
      break;
    case OpKind::kScale: {
      require_keys(j, {"id", "op", "scalar", "operand"}, {}, where);
      if (!j.at("scalar").is_number()) throw Error(ErrorCode::kMalformed, "'scalar' must be a number");
      n.scalar = static_cast<float>(j.at("scalar").get<double>());
      n.operand = get_small_int(j, "operand");
      break;
    }
    case OpKind::kSlice:
      require_keys(j, {"id", "op", "operand", "axis", "start", "end"}, {}, where);
      n.operand = get_small_int(j, "operand");
      n.axis = get_small_int(j, "axis");
      n.start = get_int(j, "start");
      n.end = get_int(j, "end");
      break;
    case OpKind::kReduce: {
      n.reduce = reduce_kind_from_string(get_string(j, "kind"));
      if (n.reduce == ReduceKind::kTopk) {
        require_keys(j, {"id", "op", "kind", "operand", "axis", "k"}, {}, where);
        n.k = get_small_int(j, "k");
      } else {
        require_keys(j, {"id", "op", "kind", "operand", "axis"}, {}, where);
      }
      n.operand = get_small_int(j, "operand");
      if (!j.at("axis").is_null()) n.axis = get_small_int(j, "axis");
      break;
    }
    case OpKind::kUnembed:
      require_keys(j, {"id", "op", "operand", "norm"}, {}, where);
      n.operand = get_small_int(j, "operand");
      if (!j.at("norm").is_boolean()) throw Error(ErrorCode::kMalformed, "'norm' must be a boolean");
      n.norm = j.at("norm").get<bool>();
      break;
    case OpKind::kSave:
      require_keys(j, {"id", "op", "operand", "name"}, {}, where);
      n.operand = get_small_int(j, "operand");
      n.name = get_string(j, "name");
      break;
  }
  n.id = get_small_int(j, "id");
  return n;
}

}  // namespace

std::string_view to_string(Encoding encoding) { return encoding == Encoding::kRaw ? "raw" : "gzip"; }

Encoding encoding_from_string(std::string_view name) {
  if (name == "raw") return Encoding::kRaw;
  if (name == "gzip") return Encoding::kGzip;
  throw Error(ErrorCode::kMalformed, "unknown encoding '" + std::string(name) + "'");
}

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> data) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error(ErrorCode::kBadCompression, "deflateInit2 failed");
  }
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(data.size())));
  zs.next_in = const_cast<Bytef*>(data.data());
  zs.avail_in = static_cast<uInt>(data.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error(ErrorCode::kBadCompression, "deflate did not finish");
  out.resize(produced);
  return out;
}

std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> data) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK) throw Error(ErrorCode::kBadCompression, "inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(data.data());
  zs.avail_in = static_cast<uInt>(data.size());
  std::vector<std::uint8_t> out;
  std::uint8_t buffer[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buffer;
    zs.avail_out = sizeof(buffer);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(ErrorCode::kBadCompression, "corrupt gzip stream");
    }
    out.insert(out.end(), buffer, buffer + (sizeof(buffer) - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw Error(ErrorCode::kBadCompression, "truncated gzip stream");
    }
  }
  const bool trailing = zs.avail_in != 0;
  inflateEnd(&zs);
  if (trailing) throw Error(ErrorCode::kBadCompression, "trailing bytes after gzip stream");
  return out;
}

std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                                static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::kMalformed, "base64 length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::kMalformed, "invalid base64");
  std::size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

TensorWire encode_tensor(const Tensor& tensor, Encoding encoding) {
  TensorWire wire;
  wire.dtype = tensor.dtype;
  wire.shape = tensor.shape;
  wire.encoding = encoding;
  wire.data = tensor.data_bytes();
  if (encoding == Encoding::kGzip) wire.data = gzip_compress(wire.data);
  return wire;
}

Tensor decode_tensor(const TensorWire& wire) {
  for (auto d : wire.shape) {
    if (d < 0) throw Error(ErrorCode::kMalformed, "negative dimension");
  }
  const std::vector<std::uint8_t> raw =
      wire.encoding == Encoding::kGzip ? gzip_decompress(wire.data) : wire.data;
  const std::size_t count = static_cast<std::size_t>(element_count(wire.shape));
  const std::size_t expected = count * element_size(wire.dtype);
  if (raw.size() != expected) {
    throw Error(ErrorCode::kLengthMismatch, "data holds " + std::to_string(raw.size()) + " bytes, shape " +
                                                shape_string(wire.shape) + " needs " + std::to_string(expected));
  }
  Tensor t;
  t.dtype = wire.dtype;
  t.shape = wire.shape;
  if (wire.dtype == DType::kF32) {
    t.f32.resize(count);
    if (count) std::memcpy(t.f32.data(), raw.data(), expected);
  } else {
    t.i64.resize(count);
    if (count) std::memcpy(t.i64.data(), raw.data(), expected);
  }
  return t;
}

std::vector<std::uint8_t> serialize_tensor(const TensorWire& wire) {
  std::vector<std::uint8_t> out;
  out.reserve(tensor_wire_header_bytes(wire.shape.size()) + wire.data.size());
  const char magic[] = "EDIFT1";
  out.insert(out.end(), magic, magic + 6);
  out.push_back(static_cast<std::uint8_t>(wire.dtype));
  out.push_back(static_cast<std::uint8_t>(wire.encoding));
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(wire.shape.size()));
  for (auto d : wire.shape) append_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  append_le<std::uint64_t>(out, wire.data.size());
  out.insert(out.end(), wire.data.begin(), wire.data.end());
  return out;
}

TensorWire parse_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), "EDIFT1", 6) != 0) {
    throw Error(ErrorCode::kMalformed, "missing EDIFT1 magic");
  }
  std::size_t pos = 6;
  TensorWire wire;
  const auto dtype = read_le<std::uint8_t>(bytes, pos);
  const auto encoding = read_le<std::uint8_t>(bytes, pos);
  if (dtype > 1) throw Error(ErrorCode::kMalformed, "unknown dtype tag");
  if (encoding > 1) throw Error(ErrorCode::kMalformed, "unknown encoding tag");
  wire.dtype = static_cast<DType>(dtype);
  wire.encoding = static_cast<Encoding>(encoding);
  const auto rank = read_le<std::uint32_t>(bytes, pos);
  if (rank > 8) throw Error(ErrorCode::kMalformed, "rank too large");
  for (std::uint32_t i = 0; i < rank; ++i) {
    wire.shape.push_back(static_cast<std::int64_t>(read_le<std::uint64_t>(bytes, pos)));
  }
  const auto length = read_le<std::uint64_t>(bytes, pos);
  if (length != bytes.size() - pos) {
    throw Error(ErrorCode::kLengthMismatch, "declared " + std::to_string(length) + " data bytes, found " +
                                                std::to_string(bytes.size() - pos));
  }
  wire.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return wire;
}

json tensor_to_json(const TensorWire& wire) {
  return json{{"dtype", to_string(wire.dtype)},
              {"shape", wire.shape},
              {"encoding", to_string(wire.encoding)},
              {"data", base64_encode(wire.data)}};
}

TensorWire tensor_from_json(const json& j) {
  require_keys(j, {"dtype", "shape", "encoding", "data"}, {}, "tensor");
  TensorWire wire;
  wire.dtype = dtype_from_string(get_string(j, "dtype"));
  wire.encoding = encoding_from_string(get_string(j, "encoding"));
  if (!j.at("shape").is_array()) throw Error(ErrorCode::kMalformed, "'shape' must be an array");
  for (const auto& d : j.at("shape")) {
    if (!d.is_number_integer() || d.get<std::int64_t>() < 0) {
      throw Error(ErrorCode::kMalformed, "shape entries must be non-negative integers");
    }
    wire.shape.push_back(d.get<std::int64_t>());
  }
  wire.data = base64_decode(get_string(j, "data"));
  return wire;
}

std::string prompt_to_json_string(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size());
  for (unsigned char c : bytes) {
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back(static_cast<char>(0xC0 | (c >> 6)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
  }
  return out;
}

std::string prompt_from_json_string(std::string_view utf8) {
  std::string out;
  out.reserve(utf8.size());
  for (std::size_t i = 0; i < utf8.size(); ++i) {
    const auto c = static_cast<unsigned char>(utf8[i]);
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
    } else if ((c == 0xC2 || c == 0xC3) && i + 1 < utf8.size()) {
      const auto next = static_cast<unsigned char>(utf8[++i]);
      if ((next & 0xC0) != 0x80) throw Error(ErrorCode::kMalformed, "invalid UTF-8 in prompt");
      out.push_back(static_cast<char>(((c & 0x1F) << 6) | (next & 0x3F)));
    } else {
      throw Error(ErrorCode::kMalformed, "prompt code points must lie in U+0000..U+00FF");
    }
  }
  return out;
}

std::string canonical_dump(const json& j) {
  try {
    return j.dump(-1, ' ', true, json::error_handler_t::strict);
  } catch (const json::type_error& e) {
    throw Error(ErrorCode::kMalformed, std::string("string is not valid UTF-8: ") + e.what());
  }
}

json graph_to_json(const InterventionGraph& graph) {
  check_graph_limits(graph.invocations.size(), graph.nodes.size());
  json invocations = json::array();
  for (const auto& inv : graph.invocations) {
    invocations.push_back({{"id", inv.id}, {"prompt", prompt_to_json_string(inv.prompt)}});
  }
  json nodes = json::array();
  for (const auto& n : graph.nodes) nodes.push_back(node_to_json(n));
  return json{{"version", kProtocolVersion},
              {"model_id", graph.model_id},
              {"invocations", std::move(invocations)},
              {"nodes", std::move(nodes)},
              {"outputs", graph.outputs}};
}

InterventionGraph graph_from_json(const json& j) {
  require_keys(j, {"version", "model_id", "invocations", "nodes", "outputs"}, {}, "graph");
  check_version(j, "graph");
  const auto& invocations = j.at("invocations");
  const auto& nodes = j.at("nodes");
  const auto& outputs = j.at("outputs");
  if (!invocations.is_array() || !nodes.is_array() || !outputs.is_array()) {
    throw Error(ErrorCode::kMalformed, "invocations, nodes and outputs must be arrays");
  }
  check_graph_limits(invocations.size(), nodes.size());
  InterventionGraph graph;
  graph.model_id = get_string(j, "model_id");
  for (const auto& inv : invocations) {
    require_keys(inv, {"id", "prompt"}, {}, "invocation");
    graph.invocations.push_back({get_small_int(inv, "id"), prompt_from_json_string(get_string(inv, "prompt"))});
  }
  for (const auto& n : nodes) graph.nodes.push_back(node_from_json(n));
  for (const auto& o : outputs) {
    if (!o.is_number_integer()) throw Error(ErrorCode::kMalformed, "outputs must be integers");
    graph.outputs.push_back(o.get<int>());
  }
  return graph;
}

std::string encode_graph(const InterventionGraph& graph) { return canonical_dump(graph_to_json(graph)); }

InterventionGraph decode_graph(std::string_view bytes) { return graph_from_json(json_util::parse(bytes)); }

bool operator==(const GraphNode& a, const GraphNode& b) {
  return a.id == b.id && a.op == b.op && a.invocation == b.invocation && a.point == b.point &&
         a.source == b.source && bitwise_equal(a.literal, b.literal) && a.binop == b.binop &&
         a.lhs == b.lhs && a.rhs == b.rhs && a.scalar == b.scalar && a.operand == b.operand &&
         a.axis == b.axis && a.start == b.start && a.end == b.end && a.reduce == b.reduce &&
         a.k == b.k && a.norm == b.norm && a.name == b.name;
}

bool operator==(const InterventionGraph& a, const InterventionGraph& b) {
  return a.model_id == b.model_id && a.invocations == b.invocations && a.nodes == b.nodes &&
         a.outputs == b.outputs;
}

bool operator==(const JobRequest& a, const JobRequest& b) {
  return a.api_token == b.api_token && a.model_id == b.model_id && a.graph == b.graph &&
         a.client_tag == b.client_tag;
}

std::string encode_request(const JobRequest& request) {
  json j{{"version", kProtocolVersion},
         {"api_token", request.api_token},
         {"model_id", request.model_id},
         {"graph", graph_to_json(request.graph)}};
  if (request.client_tag) j["client_tag"] = *request.client_tag;
  std::string out = canonical_dump(j);
  if (out.size() > kMaxRequestBytes) {
    throw Error(ErrorCode::kOversize, std::to_string(out.size()) + " bytes exceeds 8 MiB");
  }
  return out;
}

JobRequest decode_request(std::string_view bytes) {
  if (bytes.size() > kMaxRequestBytes) {
    throw Error(ErrorCode::kOversize, std::to_string(bytes.size()) + " bytes exceeds 8 MiB");
  }
  const json j = json_util::parse(bytes);
  require_keys(j, {"version", "api_token", "model_id", "graph"}, {"client_tag"}, "request");
  check_version(j, "request");
  JobRequest request;
  request.api_token = get_string(j, "api_token");
  request.model_id = get_string(j, "model_id");
  request.graph = graph_from_json(j.at("graph"));
  if (j.contains("client_tag")) request.client_tag = get_string(j, "client_tag");
  if (request.graph.model_id != request.model_id) {
    throw Error(ErrorCode::kMalformed, "request model_id '" + request.model_id +
                                           "' does not match graph model_id '" + request.graph.model_id + "'");
  }
  return request;
}

std::string_view to_string(JobState state) {
  switch (state) {
    case JobState::kQueued: return "QUEUED";
    case JobState::kRunning: return "RUNNING";
    case JobState::kCompleted: return "COMPLETED";
    case JobState::kFailed: return "FAILED";
  }
  return "FAILED";
}

JobState job_state_from_string(std::string_view name) {
  for (auto s : {JobState::kQueued, JobState::kRunning, JobState::kCompleted, JobState::kFailed}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::kMalformed, "unknown job state '" + std::string(name) + "'");
}

bool is_terminal(JobState state) { return state == JobState::kCompleted || state == JobState::kFailed; }

bool is_valid_transition(JobState from, JobState to) {
  if (from == JobState::kQueued) return to == JobState::kRunning || to == JobState::kFailed;
  if (from == JobState::kRunning) return to == JobState::kCompleted || to == JobState::kFailed;
  return false;
}

json status_to_json(const JobStatus& status) {
  json j{{"version", kProtocolVersion}, {"job_id", status.job_id}, {"state", to_string(status.state)}};
  if (status.queue_position) j["queue_position"] = *status.queue_position;
  if (status.failure) {
    j["failure"] = {{"code", to_string(status.failure->code)}, {"message", status.failure->message}};
  }
  return j;
}

JobStatus status_from_json(const json& j) {
  require_keys(j, {"version", "job_id", "state"}, {"queue_position", "failure"}, "status");
  check_version(j, "status");
  JobStatus status;
  status.job_id = get_string(j, "job_id");
  status.state = job_state_from_string(get_string(j, "state"));
  if (j.contains("queue_position")) status.queue_position = get_int(j, "queue_position");
  if (j.contains("failure")) {
    const auto& f = j.at("failure");
    require_keys(f, {"code", "message"}, {}, "failure");
    const ErrorCode code = error_code_from_string(get_string(f, "code"));
    if (!is_job_failure_code(code)) {
      throw Error(ErrorCode::kMalformed, "'" + std::string(to_string(code)) + "' is not a job failure code");
    }
    status.failure = JobFailure{code, get_string(f, "message")};
  }
  return status;
}

std::string encode_status(const JobStatus& status) { return canonical_dump(status_to_json(status)); }

JobStatus decode_status(std::string_view bytes) { return status_from_json(json_util::parse(bytes)); }

std::string encode_error(ErrorCode code, std::string_view message, const json& detail) {
  return canonical_dump(json{{"code", to_string(code)}, {"message", message}, {"detail", detail}});
}

}  // namespace edif
