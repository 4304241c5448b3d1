#include "laddernat/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace laddernat {

namespace {
constexpr char kMagic[8] = {'L', 'N', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
}  // namespace

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second;
}

long ParamStore::count_prefix(const std::string& prefix) const {
  long n = 0;
  for (const auto& [name, t] : params_)
    if (name.rfind(prefix, 0) == 0) n += t.numel();
  return n;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::vector<double> ParamStore::snapshot() const {
  std::vector<double> out;
  for (const auto& [name, t] : params_)
    out.insert(out.end(), t.data(), t.data() + t.numel());
  return out;
}

void ParamStore::restore(const std::vector<double>& snap) {
  size_t off = 0;
  for (auto& [name, t] : params_) {
    if (off + static_cast<size_t>(t.numel()) > snap.size())
      throw std::invalid_argument("ParamStore::restore: snapshot too small");
    std::memcpy(t.data(), snap.data() + off, static_cast<size_t>(t.numel()) * sizeof(double));
    off += static_cast<size_t>(t.numel());
  }
  if (off != snap.size()) throw std::invalid_argument("ParamStore::restore: snapshot size mismatch");
}

void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint64_t>(os, params.all().size());
  for (const auto& [name, t] : params.all()) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<long>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<long>(t.numel()) * sizeof(double));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

void load_checkpoint(ParamStore& params, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  auto count = read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    auto ndim = read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_pod<std::uint64_t>(is));
    Tensor& t = params.get(name);
    if (t.shape() != shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<long>(t.numel()) * sizeof(double));
    if (!is) throw std::runtime_error("checkpoint: truncated payload for " + name);
  }
}

}  // namespace laddernat
