#include "m3ae/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "m3ae/error.hpp"

namespace m3ae {
namespace {

constexpr char kMagic[8] = {'M', '3', 'A', 'E', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IngestError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void Checkpoint::put(const std::string& name, const torch::Tensor& t) {
  auto stored = t.detach().to(torch::kFloat32).contiguous().clone();
  for (auto& [n, v] : tensors)
    if (n == name) {
      v = stored;
      return;
    }
  tensors.emplace_back(name, stored);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, v] : tensors)
    if (n == name) return true;
  return false;
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, v] : tensors)
    if (n == name) return v;
  throw IngestError("checkpoint has no tensor named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot write " + tmp);
    out.write(kMagic, 8);
    write_pod(out, Checkpoint::kVersion);
    const std::string meta = ckpt.meta.dump();
    write_pod(out, static_cast<std::uint64_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    write_pod(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      write_pod(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod(out, static_cast<std::uint32_t>(t.dim()));
      for (auto d : t.sizes()) write_pod(out, static_cast<std::int64_t>(d));
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    }
    if (!out) throw IngestError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IngestError("not a checkpoint file: " + path.string());
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != Checkpoint::kVersion)
    throw IngestError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  Checkpoint ckpt;
  const auto meta_len = read_pod<std::uint64_t>(in, path);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw IngestError("truncated checkpoint " + path.string());
  ckpt.meta = nlohmann::json::parse(meta);
  const auto count = read_pod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(in, path);
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = read_pod<std::int64_t>(in, path);
    auto t = torch::empty(dims, torch::kFloat32);
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    if (!in) throw IngestError("truncated checkpoint " + path.string());
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void put_module(Checkpoint& ckpt, const torch::nn::Module& module, const std::string& prefix) {
  for (const auto& item : module.named_parameters()) ckpt.put(prefix + item.key(), item.value());
}

void load_module(const Checkpoint& ckpt, torch::nn::Module& module, const std::string& prefix) {
  torch::NoGradGuard guard;
  for (auto& item : module.named_parameters()) {
    const auto& stored = ckpt.get(prefix + item.key());
    if (stored.sizes() != item.value().sizes())
      throw IngestError("shape mismatch for parameter " + item.key() + " in checkpoint");
    item.value().copy_(stored);
  }
}

void put_adam(Checkpoint& ckpt, torch::optim::Adam& opt,
              const std::vector<std::pair<std::string, torch::Tensor>>& named_params, const std::string& prefix) {
  auto& state = opt.state();
  nlohmann::json steps = nlohmann::json::object();
  for (const auto& [name, p] : named_params) {
    auto it = state.find(p.unsafeGetTensorImpl());
    if (it == state.end()) continue;
    auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
    ckpt.put(prefix + name + "/exp_avg", s.exp_avg());
    ckpt.put(prefix + name + "/exp_avg_sq", s.exp_avg_sq());
    steps[name] = s.step();
  }
  ckpt.meta[prefix] = steps;
}

void load_adam(const Checkpoint& ckpt, torch::optim::Adam& opt,
               const std::vector<std::pair<std::string, torch::Tensor>>& named_params, const std::string& prefix) {
  if (!ckpt.meta.contains(prefix)) return;
  const auto& steps = ckpt.meta.at(prefix);
  auto& state = opt.state();
  for (const auto& [name, p] : named_params) {
    if (!steps.contains(name)) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(steps.at(name).get<std::int64_t>());
    s->exp_avg(ckpt.get(prefix + name + "/exp_avg").to(p.scalar_type()).clone());
    s->exp_avg_sq(ckpt.get(prefix + name + "/exp_avg_sq").to(p.scalar_type()).clone());
    state[p.unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace m3ae
