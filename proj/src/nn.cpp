#include "ropar/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ropar/common.hpp"

namespace ropar::nn {
namespace {

constexpr char kMagic[8] = {'R', 'P', 'A', 'R', 'B', 'L', 'B', '1'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail_data("truncated checkpoint blob");
  return v;
}

std::string serialize(const torch::nn::Module& module) {
  std::string out(kMagic, sizeof kMagic);
  const auto state = named_state(module);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, tensor] : state) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const auto t = tensor.detach().to(torch::kFloat32).contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto s : t.sizes()) put<std::int64_t>(out, s);
    out.append(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::size_t>(t.numel()) * 4);
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& [name, t] : named_state(module)) out.push_back(t.detach().clone());
  return out;
}

void restore(torch::nn::Module& module, const std::vector<torch::Tensor>& state) {
  torch::NoGradGuard guard;
  const auto current = named_state(module);
  if (current.size() != state.size()) fail_data("snapshot does not match module");
  for (std::size_t k = 0; k < state.size(); ++k) current[k].second.copy_(state[k]);
}

void save_checkpoint(const torch::nn::Module& module, const std::filesystem::path& path, const nlohmann::json& sidecar) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string blob = serialize(module);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_data("cannot write checkpoint " + path.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  nlohmann::json meta = sidecar;
  meta["blob_checksum"] = hex64(fnv1a(blob));
  meta["parameter_count"] = parameter_count(module);
  std::ofstream side(path.string() + ".json");
  side << meta.dump(2) << '\n';
}

nlohmann::json read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".json");
  if (!in) fail_data("missing checkpoint sidecar " + path.string() + ".json");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail_data("malformed checkpoint sidecar " + path.string() + ".json: " + e.what());
  }
}

void load_checkpoint(torch::nn::Module& module, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot read checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) fail_data("not a checkpoint blob: " + path.string());
  const auto count = get<std::uint32_t>(in);
  auto state = named_state(module);
  if (count != state.size())
    fail_data("checkpoint " + path.string() + " holds " + std::to_string(count) + " tensors, model expects " +
              std::to_string(state.size()));
  torch::NoGradGuard guard;
  for (auto& [name, tensor] : state) {
    std::string stored(get<std::uint32_t>(in), '\0');
    in.read(stored.data(), static_cast<std::streamsize>(stored.size()));
    if (stored != name) fail_data("checkpoint tensor order mismatch: " + stored + " vs " + name);
    std::vector<std::int64_t> shape(get<std::uint32_t>(in));
    for (auto& s : shape) s = get<std::int64_t>(in);
    if (torch::IntArrayRef(shape) != tensor.sizes()) fail_data("checkpoint shape mismatch for " + name);
    auto buf = torch::empty(shape, torch::kFloat32);
    in.read(reinterpret_cast<char*>(buf.data_ptr<float>()), buf.numel() * 4);
    if (!in) fail_data("truncated checkpoint blob");
    tensor.copy_(buf);
  }
}

std::string state_checksum(const torch::nn::Module& module) { return hex64(fnv1a(serialize(module))); }

std::int64_t parameter_count(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters(true)) n += p.numel();
  return n;
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  const auto freqs =
      torch::exp(-std::log(10000.0) * torch::arange(half, torch::dtype(torch::kFloat32)) / static_cast<double>(half));
  const auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

void check_finite(double value, const std::string& what) {
  if (!std::isfinite(value)) throw Error(ErrorKind::Divergence, what + " became non-finite");
}

}  // namespace ropar::nn
