#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "ropar/config.hpp"
#include "ropar/credibility.hpp"
#include "ropar/eval.hpp"
#include "ropar/pipeline.hpp"
#include "ropar/ropar.hpp"
#include "ropar/synthdata.hpp"

namespace py = pybind11;
using namespace ropar;

namespace {

// JSON crosses the boundary as text; the Python side decodes it.
std::string dump(const nlohmann::json& j) { return j.dump(); }

Positions positions_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("expected an array of shape (frames, joints, 3)");
  Positions p(a.shape(0), a.shape(1));
  auto r = a.unchecked<3>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (py::ssize_t j = 0; j < a.shape(1); ++j) p(i, j) = Vec3(r(i, j, 0), r(i, j, 1), r(i, j, 2));
  return p;
}

py::array_t<bool> to_numpy(const torch::Tensor& t) {
  const auto c = t.to(torch::kBool).contiguous();
  py::array_t<bool> out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<bool>(), c.numel() * sizeof(bool));
  return out;
}

using StageFn = StageOutput (*)(const RunConfig&, const Progress&);

StageFn stage_named(const std::string& name) {
  static const std::map<std::string, StageFn> stages{
      {"synth", run_synth},         {"curate", run_curate},     {"train-vae", run_train_vae},
      {"train-gen", run_train_gen}, {"train-eval", run_train_eval}, {"evaluate", run_evaluate},
      {"sweep", run_sweep},         {"ablate", run_ablate}};
  const auto it = stages.find(name);
  if (it == stages.end()) fail_config("unknown stage '" + name + "'");
  return it->second;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Part-aware motion generation pipeline (C++ core)";

  static py::exception<Error> error(m, "RoparError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const char* kind = e.kind() == ErrorKind::Config ? "config" : e.kind() == ErrorKind::Data ? "data" : "divergence";
      py::set_error(error, (std::string(kind) + ": " + e.what()).c_str());
    }
  });

  m.def("version_info", [] { return dump(version_info()); });

  m.def(
      "parse_config",
      [](const std::string& ini, const std::vector<std::string>& overrides) {
        return dump(parse_run_config(ini, overrides).to_json());
      },
      py::arg("ini"), py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "config_hash",
      [](const std::string& ini, const std::vector<std::string>& overrides) {
        return parse_run_config(ini, overrides).hash();
      },
      py::arg("ini"), py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "run_stage",
      [](const std::string& stage, const std::filesystem::path& config, const std::vector<std::string>& overrides) {
        const auto fn = stage_named(stage);
        const auto rc = load_run_config(config, overrides);
        py::gil_scoped_release release;
        return dump(fn(rc, {}).summary);
      },
      py::arg("stage"), py::arg("config"), py::arg("overrides") = std::vector<std::string>{},
      "Runs one pipeline stage and returns its JSON summary.");

  m.def(
      "sample",
      [](const std::filesystem::path& config, const std::string& prompt, int frames, int steps,
         std::optional<std::uint64_t> seed, const std::vector<std::string>& overrides) {
        const auto rc = load_run_config(config, overrides);
        py::gil_scoped_release release;
        return dump(run_sample(rc, {prompt, frames, steps, seed}).summary);
      },
      py::arg("config"), py::arg("prompt"), py::arg("frames") = 64, py::arg("steps") = 8, py::arg("seed") = py::none(),
      py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "corpus_stats",
      [](std::size_t size, int length, double full_body_fraction, std::uint64_t seed, double tau) {
        CorpusConfig c;
        c.size = size;
        c.length_min = c.length_max = length;
        c.noise.target_full_body_fraction = full_body_fraction;
        c.seed = seed;
        const auto [skel, part] = build_default_skeleton();
        return dump(to_json(corpus_stats(make_corpus(c).records, part, tau), part));
      },
      py::arg("size") = 200, py::arg("length") = 64, py::arg("full_body_fraction") = 0.24, py::arg("seed") = 0,
      py::arg("tau") = kDefaultTau, "Synthesizes a noisy corpus and reports its credibility statistics.");

  m.def(
      "mask_plan",
      [](const py::array_t<bool, py::array::c_style | py::array::forcecast>& credible, double alpha,
         std::uint64_t seed) {
        if (credible.ndim() != 2) throw py::value_error("credible must be (frames, parts)");
        auto t = torch::from_blob(const_cast<bool*>(credible.data()), {credible.shape(0), credible.shape(1)},
                                  torch::kBool)
                     .clone();
        Rng rng(seed);
        const auto plan = make_mask_plan(t, alpha, rng);
        return py::make_tuple(to_numpy(plan.masked), to_numpy(plan.loss_mask));
      },
      py::arg("credible"), py::arg("alpha"), py::arg("seed") = 0, "Returns (masked, loss_mask).");

  m.def("fid", &fid, py::arg("a"), py::arg("b"));
  m.def("mm_distance", &mm_distance, py::arg("motion"), py::arg("text"));
  m.def(
      "mpjpe",
      [](const py::array_t<double>& pred, const py::array_t<double>& gt) {
        return mpjpe(positions_from(pred), positions_from(gt));
      },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "r_precision",
      [](const Eigen::MatrixXd& motion, const Eigen::MatrixXd& text, std::uint64_t seed, int batch_size, int rounds) {
        Rng rng(seed);
        const auto r = r_precision(motion, text, rng, batch_size, rounds);
        return py::dict(py::arg("r1") = r.r1, py::arg("r2") = r.r2, py::arg("r3") = r.r3,
                        py::arg("batches") = r.batches);
      },
      py::arg("motion"), py::arg("text"), py::arg("seed") = 0, py::arg("batch_size") = 32, py::arg("rounds") = 1);
}
