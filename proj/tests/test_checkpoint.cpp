// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <doctest.h>

#include "sorbet/checkpoint.hpp"
#include "sorbet/model.hpp"

using namespace sorbet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("sorbet-test-" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.blocks = 1;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.seq_len = 4;
  cfg.vocab = 16;
  cfg.classes = 3;
  cfg.seed = 12;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("round trip preserves the forward pass bit-exactly") {
  const ModelConfig cfg = small_config();
  const auto ref = std::make_shared<const ReferenceModel>(build_reference(cfg));
  const StageModel m3 = to_m3(to_m2(quantize_to_m1(ref)));

  TempDir dir("roundtrip");
  save_checkpoint(m3, dir.path);
  CHECK(fs::exists(dir.path / "manifest.json"));
  CHECK(fs::exists(dir.path / "embedding.bin"));
  CHECK(fs::exists(dir.path / "block0.wq.signs.bin"));

  const StageModel back = load_checkpoint(dir.path);
  CHECK(back.stage == Stage::m3);
  CHECK(back.cfg.dim == cfg.dim);
  CHECK(back.cfg.seed == cfg.seed);
  for (std::uint64_t i = 0; i < 5; ++i) {
    const std::vector<int> ids = random_token_ids(cfg, 900 + i);
    const ForwardResult a = forward(m3, ids);
    const ForwardResult b = forward(back, ids);
    CHECK(a.logits == b.logits);
    CHECK(a.block_outputs == b.block_outputs);
    CHECK(a.ops == b.ops);
  }
}

TEST_CASE("spiking stage round trips too") {
  const ModelConfig cfg = small_config();
  const auto ref = std::make_shared<const ReferenceModel>(build_reference(cfg));
  const StageModel snn = to_snn(to_m3(to_m2(quantize_to_m1(ref))));
  TempDir dir("snn");
  save_checkpoint(snn, dir.path);
  const StageModel back = load_checkpoint(dir.path);
  CHECK(back.stage == Stage::snn);
  const std::vector<int> ids = random_token_ids(cfg, 5);
  CHECK(forward(snn, ids).logits == forward(back, ids).logits);
}

TEST_CASE("saving twice produces identical bytes") {
  const ModelConfig cfg = small_config();
  const auto ref = std::make_shared<const ReferenceModel>(build_reference(cfg));
  const StageModel m1 = quantize_to_m1(ref);
  TempDir a("bytes-a"), b("bytes-b");
  save_checkpoint(m1, a.path);
  save_checkpoint(m1, b.path);
  CHECK(slurp(a.path / "manifest.json") == slurp(b.path / "manifest.json"));
  CHECK(slurp(a.path / "embedding.bin") == slurp(b.path / "embedding.bin"));
  CHECK(slurp(a.path / "block0.attn_bspn.gamma.bin") ==
        slurp(b.path / "block0.attn_bspn.gamma.bin"));
}

TEST_CASE("the reference stage has no serialized form") {
  const ModelConfig cfg = small_config();
  const auto ref = std::make_shared<const ReferenceModel>(build_reference(cfg));
  TempDir dir("m0");
  CHECK_THROWS_AS(save_checkpoint(stage_m0(ref), dir.path),
                  std::invalid_argument);
}

TEST_CASE("loader rejects damage") {
  const ModelConfig cfg = small_config();
  const auto ref = std::make_shared<const ReferenceModel>(build_reference(cfg));
  const StageModel m1 = quantize_to_m1(ref);

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/sorbet-checkpoint"),
                  std::runtime_error);

  TempDir dir("damage");
  save_checkpoint(m1, dir.path);

  SUBCASE("truncated tensor file") {
    std::ofstream(dir.path / "embedding.bin", std::ios::trunc) << "xx";
    CHECK_THROWS_AS(load_checkpoint(dir.path), std::runtime_error);
  }
  SUBCASE("missing tensor file") {
    fs::remove(dir.path / "block0.wq.signs.bin");
    CHECK_THROWS_AS(load_checkpoint(dir.path), std::runtime_error);
  }
  SUBCASE("wrong format tag") {
    std::string manifest = slurp(dir.path / "manifest.json");
    const auto pos = manifest.find("sorbet-checkpoint");
    REQUIRE(pos != std::string::npos);
    manifest.replace(pos, 17, "sorbet-chequebook");
    std::ofstream(dir.path / "manifest.json", std::ios::trunc) << manifest;
    CHECK_THROWS_AS(load_checkpoint(dir.path), std::runtime_error);
  }
}
