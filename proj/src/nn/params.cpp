#include "travgrid/nn/params.hpp"

#include <cmath>
#include <fstream>

#include "travgrid/map_io.hpp"

namespace travgrid::nn {

template <typename T>
Var<T>& ParamSet<T>::add(std::string name, Var<T> var) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), std::move(var)});
  return entries_.back().var;
}

template <typename T>
Var<T>& ParamSet<T>::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].var;
}

template <typename T>
const Var<T>& ParamSet<T>::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return entries_[it->second].var;
}

template <typename T>
bool ParamSet<T>::contains(const std::string& name) const {
  return index_.count(name) > 0;
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.size();
  return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

template <typename T>
ParamSet<T> ParamSet<T>::clone(bool trainable) const {
  return cast<T>(trainable);
}

template <typename T>
std::vector<T> truncated_normal(std::size_t count, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<T> out(count);
  for (auto& v : out) {
    double x;
    do {
      x = dist(rng);
    } while (std::abs(x) > 2.0 * sigma);
    v = static_cast<T>(x);
  }
  return out;
}

template <typename T>
void sgd_step(ParamSet<T>& params, SgdState<T>& state, double lr) {
  auto& entries = params.entries();
  if (state.velocity.size() != entries.size()) {
    state.velocity.clear();
    for (const auto& e : entries) state.velocity.emplace_back(e.var.size(), T(0));
  }
  for (auto& e : entries) {
    for (T g : e.var.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NonFiniteError("non-finite gradient in parameter " + e.name);
      }
    }
  }
  const T mu = static_cast<T>(state.config.momentum);
  const T wd = static_cast<T>(state.config.weight_decay);
  const T step = static_cast<T>(lr);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& theta = entries[k].var.value();
    const auto& g = entries[k].var.grad();
    auto& v = state.velocity[k];
    if (v.size() != theta.size()) {
      throw ShapeError("velocity buffer for " + entries[k].name + " has wrong size");
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * theta[i];
      theta[i] -= step * v[i];
    }
  }
}

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

void write_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params) {
  namespace bin = io::binary;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  bin::write_magic(os, "TGCK");
  bin::write_u32(os, kCheckpointVersion);
  bin::write_u32(os, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    bin::write_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    bin::write_u32(os, static_cast<std::uint32_t>(e.var.rows()));
    bin::write_u32(os, static_cast<std::uint32_t>(e.var.cols()));
    os.write(reinterpret_cast<const char*>(e.var.value().data()),
             static_cast<std::streamsize>(e.var.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

ParamSet<float> read_checkpoint(const std::filesystem::path& path) {
  namespace bin = io::binary;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  bin::expect_magic(is, "TGCK", path.string());
  if (const auto v = bin::read_u32(is); v != kCheckpointVersion) {
    throw io::FormatError(path.string() + ": unsupported TGCK version " + std::to_string(v));
  }
  const auto count = bin::read_u32(is);
  ParamSet<float> params;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = bin::read_u32(is);
    if (len > 4096) throw io::FormatError(path.string() + ": implausible parameter name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw io::FormatError(path.string() + ": truncated name");
    const auto rows = bin::read_u32(is);
    const auto cols = bin::read_u32(is);
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28)) {
      throw io::FormatError(path.string() + ": implausible shape for " + name);
    }
    std::vector<float> values(static_cast<std::size_t>(rows) * cols);
    if (!is.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(float)))) {
      throw io::FormatError(path.string() + ": truncated payload for " + name);
    }
    params.add(name, Var<float>::parameter(static_cast<int>(rows), static_cast<int>(cols),
                                           std::move(values)));
  }
  return params;
}

template class ParamSet<float>;
template class ParamSet<double>;
template std::vector<float> truncated_normal<float>(std::size_t, double, std::mt19937_64&);
template std::vector<double> truncated_normal<double>(std::size_t, double, std::mt19937_64&);
template void sgd_step<float>(ParamSet<float>&, SgdState<float>&, double);
template void sgd_step<double>(ParamSet<double>&, SgdState<double>&, double);

}  // namespace travgrid::nn
