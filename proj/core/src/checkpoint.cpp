#include "grounder/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace grounder {

namespace {

constexpr char kMagic[8] = {'G', 'R', 'N', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kFormatVersion = 1;

// Explicit little-endian encoding, independent of host byte order.
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  std::ifstream f;
  std::string context;

  explicit Reader(const std::string& path) : f(path, std::ios::binary), context(path) {
    if (!f) throw IntegrityError("cannot open checkpoint: " + path);
  }

  void bytes(void* dst, size_t n, const std::string& what) {
    f.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n) {
      throw IntegrityError(context + ": truncated while reading " + what);
    }
  }

  uint32_t u32(const std::string& what) {
    unsigned char b[4];
    bytes(b, 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }

  uint64_t u64(const std::string& what) {
    unsigned char b[8];
    bytes(b, 8, what);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  float f32(const std::string& what) {
    const uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string str(const std::string& what) {
    const uint32_t n = u32(what + " length");
    if (n > 4096) throw IntegrityError(context + ": implausible name length in " + what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }

  void f32_array(float* dst, size_t n, const std::string& what) {
    std::vector<unsigned char> buf(n * 4);
    bytes(buf.data(), buf.size(), what);
    for (size_t i = 0; i < n; ++i) {
      const uint32_t bits = static_cast<uint32_t>(buf[4 * i]) |
                            (static_cast<uint32_t>(buf[4 * i + 1]) << 8) |
                            (static_cast<uint32_t>(buf[4 * i + 2]) << 16) |
                            (static_cast<uint32_t>(buf[4 * i + 3]) << 24);
      std::memcpy(dst + i, &bits, 4);
    }
  }
};

void atomic_write(const std::string& path, const std::string& payload) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IntegrityError("cannot open for writing: " + tmp.string());
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw IntegrityError("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

}  // namespace

void save_checkpoint(const ParamStore<float>& store, uint64_t config_hash,
                     const std::string& path, AdamW<float>* optimizer) {
  std::string out;
  out.append(kMagic, 8);
  put_u32(out, kFormatVersion);
  put_u64(out, config_hash);
  out.push_back(optimizer ? 1 : 0);
  put_u32(out, static_cast<uint32_t>(store.count()));
  for (const auto& p : store.items()) {
    put_u32(out, static_cast<uint32_t>(p.name.size()));
    out.append(p.name);
    put_u32(out, static_cast<uint32_t>(p.tensor.shape().size()));
    for (int d : p.tensor.shape()) put_u32(out, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < p.tensor.size(); ++i) put_f32(out, p.tensor.data()[i]);
  }
  if (optimizer) {
    put_u64(out, static_cast<uint64_t>(optimizer->step_count()));
    auto& m = optimizer->first_moments();
    auto& v = optimizer->second_moments();
    put_u32(out, static_cast<uint32_t>(m.size()));
    for (size_t i = 0; i < m.size(); ++i) {
      put_u32(out, static_cast<uint32_t>(m[i].size()));
      for (float x : m[i]) put_f32(out, x);
      for (float x : v[i]) put_f32(out, x);
    }
  }
  atomic_write(path, out);
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw IntegrityError(path + ": not a grounder checkpoint (bad magic)");
  }
  CheckpointMeta meta;
  meta.version = r.u32("format version");
  if (meta.version != kFormatVersion) {
    throw IntegrityError(path + ": unsupported checkpoint version " +
                         std::to_string(meta.version));
  }
  meta.config_hash = r.u64("config hash");
  unsigned char has_opt;
  r.bytes(&has_opt, 1, "optimizer flag");
  meta.has_optimizer = has_opt != 0;
  return meta;
}

CheckpointMeta load_checkpoint(const std::string& path, ParamStore<float>* store,
                               uint64_t expected_config_hash, bool allow_hash_mismatch,
                               AdamW<float>* optimizer) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw IntegrityError(path + ": not a grounder checkpoint (bad magic)");
  }
  CheckpointMeta meta;
  meta.version = r.u32("format version");
  if (meta.version != kFormatVersion) {
    throw IntegrityError(path + ": unsupported checkpoint version " +
                         std::to_string(meta.version));
  }
  meta.config_hash = r.u64("config hash");
  if (meta.config_hash != expected_config_hash && !allow_hash_mismatch) {
    throw IntegrityError(path + ": config hash mismatch (checkpoint " +
                         std::to_string(meta.config_hash) + ", current " +
                         std::to_string(expected_config_hash) + "); pass an explicit override");
  }
  unsigned char has_opt;
  r.bytes(&has_opt, 1, "optimizer flag");
  meta.has_optimizer = has_opt != 0;

  const uint32_t count = r.u32("parameter count");
  if (count != store->count()) {
    throw IntegrityError(path + ": parameter count " + std::to_string(count) +
                         " does not match model (" + std::to_string(store->count()) + ")");
  }
  for (uint32_t i = 0; i < count; ++i) {
    const std::string what = "record " + std::to_string(i);
    const std::string name = r.str(what + " name");
    Param<float>* p = store->find(name);
    if (!p) throw IntegrityError(path + ": " + what + ": unknown parameter '" + name + "'");
    const uint32_t ndim = r.u32(what + " rank");
    if (ndim > 8) throw IntegrityError(path + ": " + what + ": implausible rank");
    Shape shape;
    for (uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(r.u32(what + " dim")));
    if (shape != p->tensor.shape()) {
      throw IntegrityError(path + ": " + what + " ('" + name + "'): shape " + shape_str(shape) +
                           " does not match model " + shape_str(p->tensor.shape()));
    }
    r.f32_array(p->tensor.data(), static_cast<size_t>(p->tensor.size()), what + " payload");
  }

  if (optimizer && !meta.has_optimizer) {
    throw IntegrityError(path + ": optimizer state requested but not present");
  }
  if (meta.has_optimizer) {
    // Walk the optimizer section even on a partial load, so truncation
    // anywhere in the file is always an error.
    const uint64_t step = r.u64("optimizer step count");
    if (optimizer) optimizer->set_step_count(static_cast<int64_t>(step));
    const uint32_t opt_count = r.u32("optimizer tensor count");
    if (optimizer && opt_count != optimizer->first_moments().size()) {
      throw IntegrityError(path + ": optimizer tensor count mismatch");
    }
    std::vector<float> scratch;
    for (uint32_t i = 0; i < opt_count; ++i) {
      const std::string what = "optimizer record " + std::to_string(i);
      const uint32_t n = r.u32(what + " size");
      if (n > (1u << 28)) throw IntegrityError(path + ": " + what + ": implausible size");
      if (optimizer) {
        auto& m = optimizer->first_moments()[i];
        auto& v = optimizer->second_moments()[i];
        if (n != m.size()) throw IntegrityError(path + ": " + what + ": size mismatch");
        r.f32_array(m.data(), n, what + " first moment");
        r.f32_array(v.data(), n, what + " second moment");
      } else {
        scratch.resize(n);
        r.f32_array(scratch.data(), n, what + " first moment");
        r.f32_array(scratch.data(), n, what + " second moment");
      }
    }
  }
  if (r.f.peek() != std::ifstream::traits_type::eof()) {
    throw IntegrityError(path + ": trailing bytes after the last record");
  }
  return meta;
}

}  // namespace grounder
