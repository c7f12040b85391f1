#include "mct/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace mct {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'T', 'T'};
constexpr std::uint32_t kVersion = 1;

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
void write_tensor(const std::string& path, const TensorT<T>& t, Dtype dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_tensor: cannot open " + path);
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  std::uint8_t dt = static_cast<std::uint8_t>(dtype);
  out.write(reinterpret_cast<const char*>(&dt), 1);
  std::uint32_t ndim = static_cast<std::uint32_t>(t.shape.size());
  out.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
  for (long d : t.shape) {
    std::int64_t v = d;
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(T)));
  if (!out) throw std::runtime_error("save_tensor: write failed for " + path);
}

template <typename T>
TensorT<T> read_tensor(const std::string& path, Dtype expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_tensor: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_tensor: bad magic in " + path);
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kVersion) throw std::runtime_error("load_tensor: unsupported version");
  std::uint8_t dt = 0;
  in.read(reinterpret_cast<char*>(&dt), 1);
  if (dt != static_cast<std::uint8_t>(expect))
    throw std::runtime_error("load_tensor: dtype mismatch in " + path);
  std::uint32_t ndim = 0;
  in.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
  std::vector<long> shape(ndim);
  for (auto& d : shape) {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    d = static_cast<long>(v);
  }
  TensorT<T> t(shape);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(T)));
  if (!in) throw std::runtime_error("load_tensor: truncated file " + path);
  return t;
}

}  // namespace

void save_tensor(const std::string& path, const TensorT<float>& t) {
  write_tensor(path, t, Dtype::f32);
}
void save_tensor(const std::string& path, const TensorT<double>& t) {
  write_tensor(path, t, Dtype::f64);
}
TensorT<float> load_tensor_f32(const std::string& path) {
  return read_tensor<float>(path, Dtype::f32);
}
TensorT<double> load_tensor_f64(const std::string& path) {
  return read_tensor<double>(path, Dtype::f64);
}

}  // namespace mct
