#include "bapm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "bapm/byte_io.hpp"

namespace bapm {

namespace {

constexpr std::uint8_t kDtypeF32 = 0;

class Reader {
 public:
  Reader(std::vector<unsigned char> buf, std::string name) : buf_(std::move(buf)), name_(std::move(name)) {}

  template <class T>
  T read() {
    need(sizeof(T));
    T v = bytes::get<T>(buf_, pos_);
    pos_ += sizeof(T);
    return v;
  }
  std::string read_string(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw CheckpointError(name_ + ": truncated checkpoint");
  }
  std::vector<unsigned char> buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

Checkpoint snapshot(const ParameterStore& params, std::map<std::string, std::string> metadata) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  for (const auto& p : params.entries()) ck.entries.emplace_back(p.name, p.value.detach());
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::vector<unsigned char> buf(kCheckpointMagic, kCheckpointMagic + 8);
  bytes::append<std::uint32_t>(buf, kCheckpointVersion);
  bytes::append<std::uint32_t>(buf, static_cast<std::uint32_t>(checkpoint.entries.size()));
  std::set<std::string> seen;
  for (const auto& [name, t] : checkpoint.entries) {
    if (!seen.insert(name).second) throw CheckpointError("duplicate checkpoint entry: " + name);
    if (name.size() > 0xFFFF) throw CheckpointError("entry name too long: " + name);
    if (t.rank() > 0xFF) throw CheckpointError("entry rank too large: " + name);
    bytes::append<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    bytes::append<std::uint8_t>(buf, kDtypeF32);
    bytes::append<std::uint8_t>(buf, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) bytes::append<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    for (float v : t.data()) bytes::append(buf, v);
  }
  bytes::append<std::uint32_t>(buf, static_cast<std::uint32_t>(checkpoint.metadata.size()));
  for (const auto& [k, v] : checkpoint.metadata) {
    bytes::append<std::uint32_t>(buf, static_cast<std::uint32_t>(k.size()));
    buf.insert(buf.end(), k.begin(), k.end());
    bytes::append<std::uint32_t>(buf, static_cast<std::uint32_t>(v.size()));
    buf.insert(buf.end(), v.begin(), v.end());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

void save_checkpoint(const ParameterStore& params, const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path) {
  save_checkpoint(snapshot(params, metadata), path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view prefix) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path.string());

  if (r.read_string(8) != std::string(kCheckpointMagic, 8)) {
    throw CheckpointError(path.string() + ": not a BAPMCKPT checkpoint");
  }
  const auto version = r.read<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(version) +
                          ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  const auto count = r.read<std::uint32_t>();
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = r.read_string(r.read<std::uint16_t>());
    const auto dtype = r.read<std::uint8_t>();
    if (dtype != kDtypeF32) throw CheckpointError(name + ": unsupported dtype code " + std::to_string(dtype));
    const auto ndim = r.read<std::uint8_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = r.read<std::uint32_t>();
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = r.read<float>();
    if (has_prefix(name, prefix)) ck.entries.emplace_back(std::move(name), Tensor(shape, std::move(values)));
  }
  const auto meta = r.read<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta; ++i) {
    std::string k = r.read_string(r.read<std::uint32_t>());
    ck.metadata[k] = r.read_string(r.read<std::uint32_t>());
  }
  if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes after metadata");
  return ck;
}

std::size_t load_into(ParameterStore& params, const Checkpoint& checkpoint, std::string_view prefix) {
  std::size_t copied = 0;
  for (auto& p : params.entries()) {
    if (!has_prefix(p.name, prefix)) continue;
    const Tensor* src = checkpoint.find(p.name);
    if (!src) throw CheckpointError("checkpoint has no entry for parameter " + p.name);
    if (src->shape() != p.value.shape()) {
      throw CheckpointError("shape mismatch for " + p.name + ": expected " +
                            shape_str(p.value.shape()) + ", found " + shape_str(src->shape()));
    }
    std::copy(src->data().begin(), src->data().end(), p.value.data().begin());
    ++copied;
  }
  return copied;
}

}  // namespace bapm
