#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "dssd/blocks.hpp"
#include "dssd/checkpoint.hpp"
#include "dssd/errors.hpp"
#include "dssd/postprocess.hpp"
#include "oracles.hpp"

namespace dssd {
namespace fs = std::filesystem;
namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Checkpoint sample_checkpoint() {
  const PyramidSpec spec = preset_spec("toy-16");
  const NetworkGraph g = assemble_dssd(assemble_ssd(spec, 1), spec, 2);
  Checkpoint c = capture(g, spec, Stage::kDssdStage1);
  c.iteration = 42;
  c.rng_state = "12345 678";
  c.tensors.emplace_back(std::string(kMomentumPrefix) + "decoder.dm0.dm.out.weight",
                         Tensor(Shape{2, 1, 1, 1}, 0.25f));
  return c;
}

TEST(Checkpoint, StageNames) {
  for (Stage s : {Stage::kSsd, Stage::kDssdStage1, Stage::kDssdStage2}) {
    EXPECT_EQ(stage_from_string(to_string(s)), s);
  }
  EXPECT_EQ(to_string(Stage::kDssdStage1), "dssd_stage1");
  EXPECT_THROW(stage_from_string("stage3"), FormatError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const fs::path dir = fs::path(::testing::TempDir()) / "dssd_ckpt";
  fs::create_directories(dir);
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(c, dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(back, dir / "b.ckpt");
  EXPECT_EQ(read_bytes(dir / "a.ckpt"), read_bytes(dir / "b.ckpt"));
  EXPECT_EQ(back.stage, c.stage);
  EXPECT_EQ(back.iteration, 42);
  EXPECT_EQ(back.rng_state, c.rng_state);
  EXPECT_EQ(back.fingerprint, c.spec.fingerprint());
  ASSERT_EQ(back.tensors.size(), c.tensors.size());
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].first, c.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.shape(), c.tensors[i].second.shape());
    EXPECT_EQ(oracle::max_abs_diff(back.tensors[i].second.data(), c.tensors[i].second.data()), 0.0);
  }
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = serialize(sample_checkpoint());
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "DSSDCKPT");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9] | bytes[10] | bytes[11], 0);
}

TEST(Checkpoint, CorruptionDetected) {
  const auto bytes = serialize(sample_checkpoint());
  for (std::size_t cut : {std::size_t{0}, std::size_t{7}, std::size_t{20}, bytes.size() / 2,
                          bytes.size() - 1}) {
    EXPECT_THROW(deserialize(std::span(bytes.data(), cut)), FormatError) << "cut " << cut;
  }
  for (std::size_t at : {std::size_t{0}, std::size_t{8}, bytes.size() / 2, bytes.size() - 2}) {
    auto bad = bytes;
    bad[at] ^= 0x40;
    EXPECT_THROW(deserialize(bad), FormatError) << "flip " << at;
  }
  EXPECT_THROW(load_checkpoint(fs::path(::testing::TempDir()) / "nope.ckpt"), FormatError);
}

TEST(Checkpoint, ReloadedNetworkComputesSameOutputs) {
  const PyramidSpec spec = preset_spec("toy-64");
  NetworkGraph g = assemble_ssd(spec, 3);
  std::mt19937_64 rng(4);
  g.for_each_param([&](ParamView p) {
    if (p.name.ends_with(".running_mean")) p.value = oracle::random_tensor(p.value.shape(), rng);
  });
  const Checkpoint c = deserialize(serialize(capture(g, spec, Stage::kSsd)));
  const NetworkGraph back = build_graph(c);
  for (int i = 0; i < 10; ++i) {
    const Tensor x = oracle::random_tensor(Shape{1, 3, 64, 64}, rng);
    const ForwardResult a = forward(static_cast<const NetworkGraph&>(g), x);
    const ForwardResult b = forward(back, x);
    for (std::size_t h = 0; h < g.heads().size(); ++h) {
      EXPECT_EQ(oracle::max_abs_diff(a.class_map(g, h).data(), b.class_map(back, h).data()), 0.0);
      EXPECT_EQ(oracle::max_abs_diff(a.box_map(g, h).data(), b.box_map(back, h).data()), 0.0);
    }
  }
}

TEST(Checkpoint, FoldedNetworkRoundTrips) {
  const PyramidSpec spec = preset_spec("toy-16");
  const NetworkGraph folded = fold_network(assemble_ssd(spec, 5));
  Checkpoint c = capture(folded, spec, Stage::kSsd);
  c.folded = true;
  const NetworkGraph back = build_graph(deserialize(serialize(c)));
  EXPECT_EQ(back.nodes().size(), folded.nodes().size());
  EXPECT_EQ(count_foldable(back), 0u);
}

TEST(Checkpoint, LoadIntoRejectsMismatches) {
  const PyramidSpec spec = preset_spec("toy-16");
  NetworkGraph g = assemble_ssd(spec, 6);
  Checkpoint c = capture(g, spec, Stage::kSsd);

  NetworkGraph other = assemble_ssd(preset_spec("toy-64"), 6);
  EXPECT_THROW(load_into(other, c), SpecError);

  Checkpoint missing = c;
  missing.tensors.pop_back();
  EXPECT_THROW(load_into(g, missing), SpecError);

  Checkpoint extra = c;
  extra.tensors.emplace_back("stray.weight", Tensor(Shape{1, 1, 1, 1}));
  EXPECT_THROW(load_into(g, extra), SpecError);

  Checkpoint reshaped = c;
  reshaped.tensors.front().second = Tensor(Shape{1, 1, 1, 1});
  EXPECT_THROW(load_into(g, reshaped), SpecError);

  Checkpoint with_momentum = c;
  with_momentum.tensors.emplace_back(std::string(kMomentumPrefix) + "x", Tensor(Shape{1, 1, 1, 1}));
  EXPECT_NO_THROW(load_into(g, with_momentum));
}

}  // namespace
}  // namespace dssd
