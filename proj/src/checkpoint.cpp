#include "t2i/checkpoint.h"

#include <cstring>
#include <fstream>

namespace t2i {

namespace {

const char kMagic[4] = {'T', 'H', 'N', '1'};
constexpr uint16_t kVersion = 1;

void write_bytes(std::ofstream& f, const void* p, size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& f, void* p, size_t n, const std::string& path) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(f.gcount()) != n)
    throw IoError("truncated checkpoint " + path + " at byte offset " +
                  std::to_string(static_cast<long long>(f.tellg())));
}

template <typename T>
void write_le(std::ofstream& f, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) &
                                        0xff);
  write_bytes(f, buf, sizeof(T));
}

template <typename T>
T read_le(std::ifstream& f, const std::string& path) {
  unsigned char buf[sizeof(T)];
  read_bytes(f, buf, sizeof(T), path);
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& t) {
  if (has(name)) throw InputError("checkpoint: duplicate array name " + name);
  entries_.emplace_back(name, t);
}

Tensor Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw InputError("checkpoint: missing array " + name);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    (void)t;
    if (n == name) return true;
  }
  return false;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& [n, t] : entries_) {
    (void)t;
    out.push_back(n);
  }
  return out;
}

void Checkpoint::require(const std::vector<std::string>& expected,
                         const std::string& kind) const {
  for (const auto& name : expected)
    if (!has(name))
      throw InputError("not a " + kind + " checkpoint: missing array '" +
                       name + "'; run the stage that produces it first");
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  write_bytes(f, kMagic, 4);
  write_le<uint16_t>(f, kVersion);
  write_le<uint32_t>(f, static_cast<uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    write_le<uint16_t>(f, static_cast<uint16_t>(name.size()));
    write_bytes(f, name.data(), name.size());
    write_le<uint8_t>(f, static_cast<uint8_t>(t.shape().size()));
    for (int d : t.shape()) write_le<uint32_t>(f, static_cast<uint32_t>(d));
    static_assert(sizeof(float) == 4);
    for (float v : t.data()) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      write_le<uint32_t>(f, bits);
    }
  }
  if (!f) throw IoError("write failure on checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  read_bytes(f, magic, 4, path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad magic in checkpoint " + path + " at byte offset 0");
  uint16_t version = read_le<uint16_t>(f, path);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " in " + path + " at byte offset 4");
  uint32_t count = read_le<uint32_t>(f, path);
  Checkpoint cp;
  for (uint32_t e = 0; e < count; ++e) {
    uint16_t nlen = read_le<uint16_t>(f, path);
    std::string name(nlen, '\0');
    read_bytes(f, name.data(), nlen, path);
    uint8_t rank = read_le<uint8_t>(f, path);
    std::vector<int> shape(rank);
    int64_t n = 1;
    for (auto& d : shape) {
      d = static_cast<int>(read_le<uint32_t>(f, path));
      if (d <= 0 || n * d > (1ll << 32))
        throw IoError("bad dimension in checkpoint " + path +
                      " at byte offset " +
                      std::to_string(static_cast<long long>(f.tellg())));
      n *= d;
    }
    std::vector<float> data(static_cast<size_t>(n));
    for (auto& v : data) {
      uint32_t bits = read_le<uint32_t>(f, path);
      std::memcpy(&v, &bits, 4);
    }
    cp.put(name, Tensor::from(std::move(shape), std::move(data)));
  }
  return cp;
}

}  // namespace t2i
