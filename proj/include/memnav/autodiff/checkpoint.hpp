#pragma once

// Checkpoint layout (all integers little-endian):
//   "MNAV" | u32 version | repeated until EOF:
//     u32 name_len | name bytes | u32 rank | u64 dims[rank] | f64 values[prod(dims)]

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "memnav/autodiff/tensor.hpp"

namespace memnav::ad {

inline constexpr char kCheckpointMagic[4] = {'M', 'N', 'A', 'V'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint64_t uint(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += width;
    return v;
  }
  double f64() { return std::bit_cast<double>(uint(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<const Parameter*>& params) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  for (const Parameter* p : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    detail::put_u32(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape) detail::put_u64(out, d);
    for (double v : p->value.values) detail::put_f64(out, v);
  }
  return out;
}

inline std::map<std::string, Tensor> decode_checkpoint(const std::string& bytes) {
  detail::Reader r(bytes);
  if (r.str(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("bad checkpoint magic");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::map<std::string, Tensor> out;
  while (!r.done()) {
    std::string name = r.str(r.uint(4));
    Shape shape(r.uint(4));
    for (auto& d : shape) d = r.uint(8);
    Tensor t(shape);
    for (double& v : t.values) v = r.f64();
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const std::vector<const Parameter*>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint: " + path);
  const std::string bytes = encode_checkpoint(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

// Copies stored values into matching parameters; every parameter must be present with its shape.
inline void restore_parameters(const std::map<std::string, Tensor>& stored, const ParameterList& params) {
  for (Parameter* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw CheckpointError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.shape != p->value.shape) {
      throw CheckpointError("parameter '" + p->name + "' shape " + shape_str(it->second.shape) + " vs " +
                            shape_str(p->value.shape));
    }
    p->value.values = it->second.values;
  }
}

inline std::vector<const Parameter*> const_params(const ParameterList& params) {
  return {params.begin(), params.end()};
}

}  // namespace memnav::ad
