#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace ropar::nn {

/// Named tensors of a module (parameters first, then buffers), in registration order.
std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module);

/// Deep copy of a module's state, used to keep the best-validation weights.
std::vector<torch::Tensor> snapshot(const torch::nn::Module& module);
void restore(torch::nn::Module& module, const std::vector<torch::Tensor>& state);

/// Checkpoint = `<path>` binary blob + `<path>.json` sidecar.
/// The blob stores every named tensor as float32 little-endian with its shape.
void save_checkpoint(const torch::nn::Module& module, const std::filesystem::path& path, const nlohmann::json& sidecar);
nlohmann::json read_sidecar(const std::filesystem::path& path);
/// Loads tensors into an already-constructed module of matching architecture.
void load_checkpoint(torch::nn::Module& module, const std::filesystem::path& path);

/// FNV-1a over the serialized blob; identifies trained weights in reports.
std::string state_checksum(const torch::nn::Module& module);

std::int64_t parameter_count(const torch::nn::Module& module);

/// Sinusoidal embedding of (possibly fractional) timesteps: [N] -> [N, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int dim);

/// Throws a divergence error when `value` is not finite.
void check_finite(double value, const std::string& what);

}  // namespace ropar::nn
