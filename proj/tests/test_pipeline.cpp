#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "slq/pipeline.hpp"

using namespace slq;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run_config() {
  RunConfig cfg;
  cfg.backbone.d_model = 32;
  cfg.backbone.n_layers = 2;
  cfg.backbone.n_heads = 4;
  cfg.backbone.vocab_size = 128;
  cfg.backbone.max_seq_len = 64;
  cfg.data.n_pretrain = 48;
  cfg.data.n_adapt = 32;
  cfg.data.n_eval = 16;
  cfg.data.seed = 77;
  cfg.trainer.total_steps = 12;
  cfg.trainer.batch_size = 4;
  cfg.trainer.seed = 5;
  cfg.pretrain.total_steps = 15;
  cfg.pretrain.batch_size = 4;
  cfg.readout.n_queries = 4;
  cfg.eval.k_list = {1, 5};
  return cfg;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config render/parse round trip") {
  RunConfig cfg = tiny_run_config();
  cfg.readout.prompt_prefix = {"the", "thing"};
  const std::string text = render_config(cfg);
  RunConfig parsed = parse_config_text(text);
  CHECK(render_config(parsed) == text);
  CHECK(parsed.data.seed == 77);
  CHECK(parsed.readout.prompt_prefix.size() == 2);
}

TEST_CASE("config rejects unknown keys and bad values naming the offender") {
  try {
    parse_config_text("[backbone]\nwhatever = 3\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("backbone.whatever") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("[nonsense]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("key_without_section = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[backbone]\nd_model = pony\n"), ConfigError);
  // Validation failures surface as ConfigError too.
  CHECK_THROWS_AS(parse_config_text("[backbone]\nd_model = 30\nn_heads = 4\n"),
                  InputError);
  CHECK_THROWS_AS(parse_config_text("[readout]\nn_queries = 40\n"), ConfigError);
  CHECK_THROWS_AS(
      parse_config_text("[data]\ndim_mix = 0.5,0.5,0.5,0.1,0.1,0.1\n"), ConfigError);
}

TEST_CASE("pipeline end to end: artifacts, determinism, steps 0, contamination") {
  TempDir dir_a("slq_pipe_a"), dir_b("slq_pipe_b");
  RunConfig cfg = tiny_run_config();

  pipeline::cmd_pretrain(cfg, dir_a.path, true);
  pipeline::cmd_adapt(cfg, dir_a.path / "backbone.slq", dir_a.path, true);
  pipeline::cmd_eval(cfg, dir_a.path / "backbone.slq", dir_a.path / "adapter.slq",
                     dir_a.path, true);
  pipeline::cmd_gendata(cfg, dir_a.path / "dataset.txt");

  for (const char* name :
       {"backbone.slq", "adapter.slq", "retrieval.csv", "geometry.csv", "pca.svg",
        "embeddings.txt", "pretrain_log.txt", "adapt_log.txt", "config_resolved.ini",
        "dataset.txt"}) {
    CHECK(fs::exists(dir_a.path / name));
  }

  // Full rerun into a different directory is byte-identical.
  pipeline::cmd_pretrain(cfg, dir_b.path, true);
  pipeline::cmd_adapt(cfg, dir_b.path / "backbone.slq", dir_b.path, true);
  pipeline::cmd_eval(cfg, dir_b.path / "backbone.slq", dir_b.path / "adapter.slq",
                     dir_b.path, true);
  pipeline::cmd_gendata(cfg, dir_b.path / "dataset.txt");
  for (const char* name :
       {"backbone.slq", "adapter.slq", "retrieval.csv", "geometry.csv", "pca.svg",
        "embeddings.txt", "pretrain_log.txt", "adapt_log.txt", "dataset.txt"}) {
    CHECK(slurp(dir_a.path / name) == slurp(dir_b.path / name));
  }

  // The adapter holds readout state only, never backbone tensors.
  const auto adapter_entries = load_checkpoint(dir_a.path / "adapter.slq");
  for (const auto& e : adapter_entries) {
    const bool allowed = e.name.rfind("meta.", 0) == 0 ||
                         e.name == "raw_temperature" ||
                         e.name.rfind("bank.", 0) == 0 ||
                         e.name.rfind("head.", 0) == 0;
    CHECK(allowed);
  }

  // --steps 0 writes the freshly initialized adapter: zero bank, tau at init.
  TempDir dir_zero("slq_pipe_zero");
  pipeline::cmd_adapt(cfg, dir_a.path / "backbone.slq", dir_zero.path, true, 0);
  auto loaded = load_adapter<float>(dir_zero.path / "adapter.slq", 32, 4);
  for (float v : loaded.readout.bank.q.values()) CHECK(v == 0.0f);
  CHECK(std::exp(loaded.raw_temperature) == doctest::Approx(0.07).epsilon(1e-5));

  // Contamination: hand the eval command an adapter trained on an eval id.
  auto data = pipeline::make_data(cfg);
  std::vector<std::uint64_t> poisoned = {data.eval.pairs[0].id};
  save_adapter(dir_zero.path / "poisoned.slq", loaded.readout,
               loaded.raw_temperature, poisoned);
  CHECK_THROWS_AS(pipeline::cmd_eval(cfg, dir_a.path / "backbone.slq",
                                     dir_zero.path / "poisoned.slq", dir_zero.path,
                                     true),
                  ContaminationError);

  // Corrupted backbone fails integrity on load.
  auto bytes = slurp(dir_a.path / "backbone.slq");
  bytes[bytes.size() - 3] ^= 0x10;
  std::ofstream out(dir_zero.path / "corrupt.slq", std::ios::binary);
  out << bytes;
  out.close();
  CHECK_THROWS_AS(
      pipeline::cmd_adapt(cfg, dir_zero.path / "corrupt.slq", dir_zero.path, true),
      IntegrityError);

  // Adapt log header records the trainable census.
  const std::string log = slurp(dir_a.path / "adapt_log.txt");
  CHECK(log.find("trainable_params=" + std::to_string(4 * 32 + 1)) !=
        std::string::npos);

  // Empty pretrain corpus is an input error.
  RunConfig empty = cfg;
  empty.data.n_pretrain = 0;
  CHECK_THROWS_AS(pipeline::cmd_pretrain(empty, dir_zero.path, true), InputError);
}

TEST_CASE("ablate writes one row per setting with shared data seed") {
  TempDir dir("slq_pipe_ablate");
  RunConfig cfg = tiny_run_config();
  cfg.trainer.total_steps = 6;
  pipeline::cmd_ablate(cfg, "pooling", dir.path, true);
  const std::string csv = slurp(dir.path / "ablation.csv");
  CHECK(csv.find("pooling,mean,77") != std::string::npos);
  CHECK(csv.find("pooling,max,77") != std::string::npos);
  CHECK(csv.find("pooling,last,77") != std::string::npos);
  int lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 4);  // header + 3 rows

  CHECK_THROWS_AS(pipeline::cmd_ablate(cfg, "bogus", dir.path, true), InputError);
}

TEST_CASE("diagnose compares both readouts per tier on identical candidates") {
  TempDir dir("slq_pipe_diag");
  RunConfig cfg = tiny_run_config();
  pipeline::cmd_pretrain(cfg, dir.path, true);
  pipeline::cmd_diagnose(cfg, dir.path / "backbone.slq", dir.path, true);
  const std::string csv = slurp(dir.path / "diagnose.csv");
  for (const char* tier : {"explicit", "knowledge", "logical"}) {
    CHECK(csv.find(std::string(tier) + ",query,") != std::string::npos);
    CHECK(csv.find(std::string(tier) + ",last_token,") != std::string::npos);
  }
  const std::string margins = slurp(dir.path / "margins.csv");
  // One margin row per (tier, readout, query).
  int lines = 0;
  for (char c : margins) lines += c == '\n';
  CHECK(lines == 1 + 3 * 2 * cfg.data.n_eval);
}

TEST_CASE("embedding dump has a pinned format and round trips") {
  TempDir dir("slq_dump");
  std::vector<EmbeddingRecord> records;
  records.push_back({42, Modality::kImage, {0.6, 0.8}});
  records.push_back({7, Modality::kText, {1.0, 0.0}});
  write_embedding_dump(dir.path / "dump.txt", records);
  CHECK(slurp(dir.path / "dump.txt") ==
        "42 IMAGE [0.6,0.8]\n7 TEXT [1,0]\n");
  auto loaded = read_embedding_dump(dir.path / "dump.txt");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].id == 42);
  CHECK(loaded[0].modality == Modality::kImage);
  CHECK(loaded[1].z[0] == doctest::Approx(1.0));
}

TEST_CASE("retrieval csv honors the configured k list") {
  TempDir dir("slq_csv");
  RetrievalReport report;
  report.direction = "I2T";
  report.k_list = {1};
  report.recall = {0.5};
  report.n_queries = 4;
  report.n_gallery = 4;
  write_retrieval_csv(dir.path / "r.csv", {report}, "eval");
  CHECK(slurp(dir.path / "r.csv") ==
        "direction,r@1,n_queries,n_gallery,split\nI2T,0.500000,4,4,eval\n");
}
