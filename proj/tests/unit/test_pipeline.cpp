#include "testing.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "ropar/pipeline.hpp"

using namespace ropar;
namespace fs = std::filesystem;

TEST_CASE("versioned artifact names") {
  CHECK(artifact_version("pvae.v3.bin", "pvae", ".bin") == 3);
  CHECK(artifact_version("pvae.v12.bin", "pvae", ".bin") == 12);
  CHECK(artifact_version("pvae.v3.bin.json", "pvae", ".bin") == 0);
  CHECK(artifact_version("pvae.v03.bin", "pvae", ".bin") == 0);
  CHECK(artifact_version("pvae.v.bin", "pvae", ".bin") == 0);
  CHECK(artifact_version("gen.v1.bin", "pvae", ".bin") == 0);
  CHECK(artifact_version("pvae.vx1.bin", "pvae", ".bin") == 0);
}

TEST_CASE("artifact store hands out increasing versions") {
  const auto root = fs::temp_directory_path() / "ropar_store_test";
  fs::remove_all(root);
  const ArtifactStore store(root);
  CHECK_FALSE(store.latest("reports", "metrics", ".json").has_value());
  CHECK_THROWS_AS(store.require("reports", "metrics", ".json", "ropar evaluate"), Error);
  const auto a = store.next("reports", "metrics", ".json");
  CHECK(a.filename() == "metrics.v1.json");
  std::ofstream(a) << "{}";
  std::ofstream(root / "reports" / "metrics.v1.json.provenance.json") << "{}";
  const auto b = store.next("reports", "metrics", ".json");
  CHECK(b.filename() == "metrics.v2.json");
  std::ofstream(b) << "{}";
  CHECK(store.latest("reports", "metrics", ".json") == b);
  CHECK(store.relative(b) == "reports/metrics.v2.json");
  CHECK(file_checksum(a) == hex64(fnv1a("{}")));
  fs::remove_all(root);
}

TEST_CASE("synth and curate write provenance and never overwrite") {
  const auto root = fs::temp_directory_path() / "ropar_pipeline_test";
  fs::remove_all(root);
  auto c = parse_run_config("[synth]\nsize = 6\nlength_min = 65\nlength_max = 65\n", {"run.root=" + root.string()});
  const auto s1 = run_synth(c);
  const auto s2 = run_synth(c);
  CHECK(s1.primary.filename() == "corpus.v1.jsonl");
  CHECK(s2.primary.filename() == "corpus.v2.jsonl");
  CHECK(file_checksum(s1.primary) == file_checksum(s2.primary));

  std::ifstream in(s1.primary.string() + ".provenance.json");
  const auto prov = nlohmann::json::parse(in);
  CHECK(prov["stage"] == "synth");
  CHECK(prov["config_hash"] == c.hash());
  CHECK(prov["stage_seed"] == derive_seed(c.seed, "corpus"));
  CHECK(prov["outputs"].size() == 3);
  CHECK(prov["outputs"][0]["path"] == "corpus/corpus.v1.jsonl");
  CHECK_FALSE(prov["config"]["run"].contains("root"));

  const auto cur = run_curate(c);
  CHECK(cur.primary.filename() == "curated.v1.jsonl");
  CHECK(cur.summary["sequences"] == 6);
  CHECK_THROWS_AS(run_train_gen(c), Error);  // no P-VAE yet
  fs::remove_all(root);
}
