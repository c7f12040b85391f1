#include <cstdint>
#include <cstring>
#include <fstream>

#include "mct/nn.hpp"

namespace mct::nn {

namespace {
constexpr char kMagic[4] = {'M', 'C', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  std::uint64_t count = store.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const std::string& name : store.names()) {
    const ParamT<float>& p = store.at(name);
    std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    out.write(name.data(), name_len);
    std::uint32_t ndim = static_cast<std::uint32_t>(p.value.shape.size());
    out.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
    for (long d : p.value.shape) {
      std::int64_t v = d;
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    out.write(reinterpret_cast<const char*>(p.value.data.data()),
              static_cast<std::streamsize>(p.value.data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kVersion) throw std::runtime_error("load_checkpoint: unsupported version");
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
    std::vector<long> shape(ndim);
    for (auto& d : shape) {
      std::int64_t v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      d = static_cast<long>(v);
    }
    if (!store.has(name))
      throw std::runtime_error("load_checkpoint: parameter not in model: " + name);
    ParamT<float>& p = store.at(name);
    if (p.value.shape != shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(p.value.data.data()),
            static_cast<std::streamsize>(p.value.data.size() * sizeof(float)));
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path);
}

}  // namespace mct::nn
