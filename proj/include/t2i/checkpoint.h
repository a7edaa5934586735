#pragma once

#include <string>
#include <utility>
#include <vector>

#include "t2i/tensor.h"

namespace t2i {

// Binary container for named float32 arrays.
// Layout: magic "THN1", u16 version, u32 array count, then per array:
//   u16 name length, name bytes, u8 rank, u32 dims..., float32 LE payload.
class Checkpoint {
 public:
  void put(const std::string& name, const Tensor& t);
  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t count() const { return entries_.size(); }

  // Throws InputError if any expected name is missing; message names the
  // checkpoint kind so the caller knows which stage produced the file.
  void require(const std::vector<std::string>& expected,
               const std::string& kind) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace t2i
