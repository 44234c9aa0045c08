#include "mmlnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "mmlnet/errors.hpp"

namespace mmlnet::checkpoint {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_doubles(std::ostream& out, const std::vector<double>& xs) {
  for (double x : xs) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    put_u64(out, bits);
  }
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::uint32_t u32() {
    unsigned char b[4];
    take(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    unsigned char b[8];
    take(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::string string(std::uint32_t max_len) {
    const std::uint32_t len = u32();
    if (len > max_len) throw DataError("checkpoint " + path_ + ": oversized field");
    std::string s(len, '\0');
    take(s.data(), len);
    return s;
  }

  void doubles(std::vector<double>& xs) {
    for (double& x : xs) {
      const std::uint64_t bits = u64();
      std::memcpy(&x, &bits, 8);
    }
  }

  void take(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw DataError("checkpoint " + path_ + ": truncated file");
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

void save(const std::string& path, const config::ExperimentConfig& cfg, const ParamStore& store) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u64(out, cfg.seed);
  put_string(out, config::serialize_config(cfg));
  put_string(out, config::config_hash(cfg));
  put_u32(out, static_cast<std::uint32_t>(store.count()));
  for (const Param& p : store.all()) {
    put_string(out, p.name);
    put_u32(out, static_cast<std::uint32_t>(p.value.rows));
    put_u32(out, static_cast<std::uint32_t>(p.value.cols));
    put_doubles(out, p.value.data);
  }
  if (!out) throw DataError("checkpoint: write to " + path + " failed");
}

CheckpointData read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  Reader r(in, path);
  char magic[8];
  r.take(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("checkpoint " + path + ": bad magic (not a checkpoint file)");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw DataError("checkpoint " + path + ": unsupported version " + std::to_string(version));

  CheckpointData data;
  data.seed = r.u64();
  const std::string config_text = r.string(1u << 20);
  data.config = config::parse_config(config_text);
  data.config_hash = r.string(64);
  if (config::config_hash(data.config) != data.config_hash)
    throw DataError("checkpoint " + path + ": stored config hash does not match its config");

  const std::uint32_t count = r.u32();
  if (count > (1u << 20)) throw DataError("checkpoint " + path + ": implausible tensor count");
  data.tensors.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = r.string(1u << 12);
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows == 0 || cols == 0 || static_cast<std::uint64_t>(rows) * cols > (1u << 28))
      throw DataError("checkpoint " + path + ": implausible tensor shape for " + name);
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    r.doubles(m.data);
    data.tensors.emplace_back(std::move(name), std::move(m));
  }
  return data;
}

void restore(const CheckpointData& data, ParamStore& store, const std::string& expected_hash,
             bool force) {
  if (data.config_hash != expected_hash && !force)
    throw ConfigError("checkpoint: config hash " + data.config_hash +
                      " does not match expected " + expected_hash +
                      " (pass force to load anyway)");
  if (static_cast<int>(data.tensors.size()) != store.count())
    throw DataError("checkpoint: holds " + std::to_string(data.tensors.size()) +
                    " tensors, model has " + std::to_string(store.count()));
  for (const auto& [name, value] : data.tensors) {
    if (!store.exists(name)) throw DataError("checkpoint: tensor " + name + " unknown to model");
    Param& p = store.get(name);
    if (!p.value.same_shape(value))
      throw DataError("checkpoint: tensor " + name + " shape mismatch");
    p.value = value;
  }
}

}  // namespace mmlnet::checkpoint
