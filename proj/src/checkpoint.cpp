#include "mglow/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <json.hpp>

#include "mglow/data.hpp"
#include "mglow/errors.hpp"

namespace mglow {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'G', 'C', 'K'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_vector(std::string& out, const VectorXd& v) {
  out.append(reinterpret_cast<const char*>(v.data()), static_cast<size_t>(v.size()) * sizeof(double));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}
  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  VectorXd get_vector(std::uint64_t n, const char* what) {
    if (n > (bytes_.size() - pos_) / sizeof(double)) need(bytes_.size() + 1, what);
    VectorXd v(static_cast<Eigen::Index>(n));
    std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n, const char* what) const {
    if (pos_ + n > bytes_.size())
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  size_t pos_ = 0;
};

std::uint32_t crc_of(const char* data, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<TensorInfo> tensor_schema(const ConditionalModel& model) {
  std::vector<TensorInfo> out;
  model.visit_const([&](const std::string& name, const MatrixXd& t) { out.push_back({name, t.rows(), t.cols()}); });
  return out;
}

std::vector<std::string> latent_schedule(const ConditionalModel& model) {
  std::vector<std::string> out;
  for (const auto* f : {&model.source, &model.target})
    for (const auto& s : f->latent_shapes())
      out.push_back(std::string(f == &model.source ? "source:" : "target:") + extents_to_string(s.extents) + "*" +
                    std::to_string(s.channels));
  return out;
}

Checkpoint make_checkpoint(const ConditionalModel& model, const Adam& adam, long step, const std::string& config_yaml) {
  Checkpoint c;
  c.config_yaml = config_yaml;
  c.source_manifold = model.source.manifold().name();
  c.target_manifold = model.target.manifold().name();
  c.latent_shapes = latent_schedule(model);
  c.step = step;
  c.tensors = tensor_schema(model);
  c.params = flatten_params(model);
  c.adam_t = adam.steps();
  if (adam.m().size() == c.params.size()) {
    c.adam_m = adam.m();
    c.adam_v = adam.v();
  } else {
    c.adam_m = VectorXd::Zero(c.params.size());
    c.adam_v = VectorXd::Zero(c.params.size());
  }
  return c;
}

std::string encode_checkpoint(const Checkpoint& c) {
  const auto n = c.params.size();
  if (c.adam_m.size() != n || c.adam_v.size() != n) throw ShapeError("checkpoint moment vectors differ in size");
  nlohmann::json h;
  h["config"] = c.config_yaml;
  h["manifolds"] = {{"source", c.source_manifold}, {"target", c.target_manifold}};
  h["latent_shapes"] = c.latent_shapes;
  h["step"] = c.step;
  h["adam_t"] = c.adam_t;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : c.tensors) tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  h["tensors"] = tensors;
  const std::string header = h.dump();

  std::string out(kMagic, 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  put<std::uint64_t>(out, static_cast<std::uint64_t>(n));
  put_vector(out, c.params);
  put_vector(out, c.adam_m);
  put_vector(out, c.adam_v);
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not a checkpoint file (bad magic at byte 0)");
  if (bytes.size() < 4 + 2 + 4) throw FormatError("checkpoint truncated in the preamble");
  Reader r(bytes);
  r.get_bytes(4, "magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  if (bytes.size() < 4) throw FormatError("checkpoint truncated");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc_of(bytes.data(), bytes.size() - 4) != stored_crc) throw ChecksumError("checkpoint checksum mismatch");

  const auto header_len = r.get<std::uint32_t>("header length");
  const std::string header = r.get_bytes(header_len, "header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint c;
  try {
    c.config_yaml = h.at("config").get<std::string>();
    c.source_manifold = h.at("manifolds").at("source").get<std::string>();
    c.target_manifold = h.at("manifolds").at("target").get<std::string>();
    c.latent_shapes = h.at("latent_shapes").get<std::vector<std::string>>();
    c.step = h.at("step").get<long>();
    c.adam_t = h.at("adam_t").get<long>();
    for (const auto& t : h.at("tensors"))
      c.tensors.push_back({t.at("name").get<std::string>(), t.at("rows").get<long>(), t.at("cols").get<long>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is incomplete: ") + e.what());
  }
  const auto n = r.get<std::uint64_t>("parameter count");
  std::uint64_t expected = 0;
  for (const auto& t : c.tensors) expected += static_cast<std::uint64_t>(t.rows * t.cols);
  if (n != expected) throw FormatError("checkpoint parameter count disagrees with its tensor list");
  c.params = r.get_vector(n, "parameters");
  c.adam_m = r.get_vector(n, "first moments");
  c.adam_v = r.get_vector(n, "second moments");
  if (r.pos() + 4 != bytes.size()) throw FormatError("checkpoint has trailing bytes at " + std::to_string(r.pos()));
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file_atomic(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

void restore_checkpoint(const Checkpoint& c, ConditionalModel& model, Adam* adam) {
  const auto schema = tensor_schema(model);
  if (schema.size() != c.tensors.size())
    throw ShapeError("checkpoint holds " + std::to_string(c.tensors.size()) + " tensors, model has " +
                     std::to_string(schema.size()));
  for (size_t i = 0; i < schema.size(); ++i)
    if (!(schema[i] == c.tensors[i]))
      throw ShapeError("checkpoint tensor " + c.tensors[i].name + " (" + std::to_string(c.tensors[i].rows) + "x" +
                       std::to_string(c.tensors[i].cols) + ") does not match model tensor " + schema[i].name + " (" +
                       std::to_string(schema[i].rows) + "x" + std::to_string(schema[i].cols) + ")");
  if (c.source_manifold != model.source.manifold().name() || c.target_manifold != model.target.manifold().name())
    throw ShapeError("checkpoint manifolds " + c.source_manifold + " -> " + c.target_manifold + " differ from the model");
  if (c.latent_shapes != latent_schedule(model)) throw ShapeError("checkpoint latent shape schedule differs from the model");
  unflatten_params(model, c.params);
  if (adam) adam->restore(c.adam_t, c.adam_m, c.adam_v);
}

}  // namespace mglow
