#include "trigait/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "trigait/binary_io.hpp"

namespace trigait {

namespace io {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace io

std::string encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  io::ByteWriter w;
  w.bytes("TGCK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (shape_numel(r.shape) != r.data.size()) throw Error("checkpoint record '" + r.name + "' has inconsistent shape");
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t e : r.shape) w.u64(e);
    for (double v : r.data) w.f64(v);
  }
  return w.take();
}

std::vector<CheckpointRecord> decode_checkpoint(const std::string& bytes, const std::string& origin) {
  io::ByteReader r(bytes, origin);
  if (r.bytes(4) != "TGCK") r.fail("bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name = std::string(r.bytes(r.u32()));
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(static_cast<std::size_t>(r.u64()));
    rec.data.resize(shape_numel(rec.shape));
    for (double& v : rec.data) v = r.f64();
    records.push_back(std::move(rec));
  }
  if (!r.done()) r.fail("trailing bytes after checkpoint records");
  return records;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  io::write_file(path, encode_checkpoint(records));
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

std::vector<CheckpointRecord> module_state(Module& module) {
  std::vector<Parameter*> params;
  std::vector<Buffer> buffers;
  module.collect(params, buffers);
  std::vector<CheckpointRecord> records;
  for (Parameter* p : params) {
    records.push_back({p->name, p->value.shape(), p->value.values()});
  }
  for (Parameter* p : params) {
    if (p->momentum) records.push_back({p->name + ".momentum", p->momentum->shape(), p->momentum->values()});
  }
  for (const Buffer& b : buffers) records.push_back({b.name, {b.values->size()}, *b.values});
  return records;
}

const CheckpointRecord* find_record(const std::vector<CheckpointRecord>& records, const std::string& name) {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

void load_module_state(Module& module, const std::vector<CheckpointRecord>& records) {
  std::vector<Parameter*> params;
  std::vector<Buffer> buffers;
  module.collect(params, buffers);
  for (Parameter* p : params) {
    const CheckpointRecord* rec = find_record(records, p->name);
    if (!rec) throw Error("checkpoint is missing parameter '" + p->name + "'");
    if (rec->shape != p->value.shape()) {
      throw Error("checkpoint parameter '" + p->name + "' has shape " + shape_str(rec->shape) +
                  ", model expects " + shape_str(p->value.shape()));
    }
    std::copy(rec->data.begin(), rec->data.end(), p->value.data().begin());
    if (const CheckpointRecord* m = find_record(records, p->name + ".momentum")) {
      p->momentum = Tensor(m->shape, m->data);
    } else {
      p->momentum.reset();
    }
  }
  for (const Buffer& b : buffers) {
    const CheckpointRecord* rec = find_record(records, b.name);
    if (!rec) throw Error("checkpoint is missing buffer '" + b.name + "'");
    if (rec->data.size() != b.values->size()) throw Error("checkpoint buffer '" + b.name + "' has wrong length");
    *b.values = rec->data;
  }
}

}  // namespace trigait
