#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "deltadiff/checkpoint.hpp"
#include "test_util.hpp"

using namespace deltadiff;

namespace {

const DenoiserConfig kCfg{8, 1, 8, 3};

Checkpoint trained_checkpoint(std::int64_t steps = 3) {
  TrainState st = make_train_state(init_params<float>(kCfg, 1));
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 1;
  tc.max_steps = steps;
  train(st, toy_dataset(2, 16, 3), DatasetSpec{"", 16, 4, 0}, build_schedule({}), tc);
  return Checkpoint{kCfg, ScheduleConfig{}, 4, st};
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  testutil::TempDir dir("ckpt");
  const Checkpoint c = trained_checkpoint();
  save_checkpoint(c, dir / "a.ddif");
  const Checkpoint back = load_checkpoint(dir / "a.ddif");
  EXPECT_EQ(back.denoiser, c.denoiser);
  EXPECT_EQ(back.scale, 4);
  EXPECT_EQ(back.schedule.steps, c.schedule.steps);
  EXPECT_EQ(back.schedule.eta_end, c.schedule.eta_end);
  EXPECT_EQ(back.state.step, 3);
  EXPECT_EQ(back.state.loss_history, c.state.loss_history);
  ASSERT_EQ(back.state.params.tensors.size(), c.state.params.tensors.size());
  for (std::size_t i = 0; i < c.state.params.tensors.size(); ++i) {
    EXPECT_EQ(back.state.params.tensors[i].name, c.state.params.tensors[i].name);
    EXPECT_EQ(back.state.params.tensors[i].shape, c.state.params.tensors[i].shape);
    EXPECT_EQ(back.state.params.tensors[i].values, c.state.params.tensors[i].values);
    EXPECT_EQ(back.state.adam_m[i], c.state.adam_m[i]);
    EXPECT_EQ(back.state.adam_v[i], c.state.adam_v[i]);
  }
  // saving the loaded copy reproduces the file byte for byte
  save_checkpoint(back, dir / "b.ddif");
  EXPECT_EQ(read_bytes(dir / "a.ddif"), read_bytes(dir / "b.ddif"));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.ddif.tmp"));
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  testutil::TempDir dir("resume");
  const auto pool = toy_dataset(2, 16, 3);
  const DatasetSpec spec{"", 16, 4, 0};
  const EtaSchedule s = build_schedule({});
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 1;
  tc.seed = 4;

  TrainState full = make_train_state(init_params<float>(kCfg, 1));
  tc.max_steps = 6;
  train(full, pool, spec, s, tc);

  TrainState half = make_train_state(init_params<float>(kCfg, 1));
  tc.max_steps = 3;
  train(half, pool, spec, s, tc);
  save_checkpoint(Checkpoint{kCfg, {}, 4, half}, dir / "h.ddif");
  TrainState resumed = load_checkpoint(dir / "h.ddif").state;
  tc.max_steps = 6;
  train(resumed, pool, spec, s, tc);

  EXPECT_EQ(resumed.loss_history, full.loss_history);
  for (std::size_t i = 0; i < full.params.tensors.size(); ++i)
    EXPECT_EQ(resumed.params.tensors[i].values, full.params.tensors[i].values);
}

TEST(Checkpoint, CorruptMagicIsIntegrityError) {
  testutil::TempDir dir("magic");
  save_checkpoint(trained_checkpoint(1), dir / "c.ddif");
  auto bytes = read_bytes(dir / "c.ddif");
  bytes[0] = 'X';
  write_bytes(dir / "c.ddif", bytes);
  EXPECT_THROW(load_checkpoint(dir / "c.ddif"), IntegrityError);
}

TEST(Checkpoint, TruncationIsIntegrityError) {
  testutil::TempDir dir("trunc");
  save_checkpoint(trained_checkpoint(1), dir / "c.ddif");
  auto bytes = read_bytes(dir / "c.ddif");
  for (std::size_t keep : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}}) {
    write_bytes(dir / "t.ddif", std::vector<char>(bytes.begin(), bytes.begin() + static_cast<long>(keep)));
    EXPECT_THROW(load_checkpoint(dir / "t.ddif"), IntegrityError) << keep;
  }
}

TEST(Checkpoint, FlippedPayloadByteFailsChecksum) {
  testutil::TempDir dir("flip");
  save_checkpoint(trained_checkpoint(1), dir / "c.ddif");
  auto bytes = read_bytes(dir / "c.ddif");
  bytes[bytes.size() / 2] ^= 0x10;
  write_bytes(dir / "c.ddif", bytes);
  EXPECT_THROW(load_checkpoint(dir / "c.ddif"), IntegrityError);
}

TEST(Checkpoint, UnknownVersionIsVersionError) {
  testutil::TempDir dir("ver");
  save_checkpoint(trained_checkpoint(1), dir / "c.ddif");
  auto bytes = read_bytes(dir / "c.ddif");
  bytes[4] = 7;  // little-endian u32 right after the magic
  write_bytes(dir / "c.ddif", bytes);
  EXPECT_THROW(load_checkpoint(dir / "c.ddif"), VersionError);
}

TEST(Checkpoint, ConfigMismatchNamesTheField) {
  testutil::TempDir dir("mismatch");
  save_checkpoint(trained_checkpoint(1), dir / "c.ddif");
  DenoiserConfig other = kCfg;
  other.depth = 2;
  try {
    load_checkpoint(dir / "c.ddif", other);
    FAIL() << "expected ConfigMismatchError";
  } catch (const ConfigMismatchError& e) {
    EXPECT_EQ(e.field(), "depth");
  }
  EXPECT_NO_THROW(load_checkpoint(dir / "c.ddif", kCfg));
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ddif"), IoError);
}
