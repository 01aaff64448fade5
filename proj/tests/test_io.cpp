#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>

#include "sonic/checkpoint.hpp"
#include "sonic/config.hpp"
#include "sonic/tensor_file.hpp"

using namespace sonic;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sonic_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

template <typename T>
bool bitwise_equal(const nn::Tensor<T>& a, const nn::Tensor<T>& b) {
  if (a.shape != b.shape || a.data.size() != b.data.size()) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (std::bit_cast<std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>(a.data[i]) !=
        std::bit_cast<std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>(b.data[i]))
      return false;
  }
  return true;
}

}  // namespace

TEST(TensorFile, HeaderLayout) {
  const nn::Tensor<float> t({2, 1}, {1.0f, -2.0f});
  const auto bytes = io::encode_tensor(t);
  ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 2 * 4 + 2 * 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SPT1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 2);
  EXPECT_EQ(bytes[6], 2);
  EXPECT_EQ(bytes[10], 1);
  // 1.0f = 0x3F800000 little-endian.
  EXPECT_EQ(bytes[14], 0x00);
  EXPECT_EQ(bytes[17], 0x3F);
  EXPECT_EQ(io::encode_tensor(nn::Tensor<double>({1}, {0.0}))[4], 2);
}

TEST(TensorFile, RoundTripSpecialValues) {
  TempDir dir("io_special");
  const nn::Tensor<double> d({5}, {0.0, -0.0, std::numeric_limits<double>::denorm_min(),
                                   std::numeric_limits<double>::max(), std::numeric_limits<double>::quiet_NaN()});
  io::write_tensor_file(dir.path / "d.spt", d);
  EXPECT_TRUE(bitwise_equal(io::read_tensor_file_as<double>(dir.path / "d.spt"), d));
  const nn::Tensor<float> f({1, 1, 1}, {std::numeric_limits<float>::infinity()});
  io::write_tensor_file(dir.path / "f.spt", f);
  EXPECT_TRUE(bitwise_equal(io::read_tensor_file_as<float>(dir.path / "f.spt"), f));
}

TEST(TensorFile, RandomRoundTrip) {
  TempDir dir("io_random");
  Rng rng(1);
  for (int i = 0; i < 40; ++i) {
    nn::Shape shape(1 + rng.below(4));
    for (auto& d : shape) d = 1 + rng.below(6);
    const auto path = dir.path / ("t" + std::to_string(i) + ".spt");
    if (i % 2) {
      nn::Tensor<float> t(shape);
      for (auto& v : t.data) v = static_cast<float>(rng.normal());
      io::write_tensor_file(path, t);
      EXPECT_TRUE(bitwise_equal(io::read_tensor_file_as<float>(path), t));
    } else {
      nn::Tensor<double> t(shape);
      for (auto& v : t.data) v = rng.normal();
      io::write_tensor_file(path, t);
      EXPECT_TRUE(bitwise_equal(io::read_tensor_file_as<double>(path), t));
    }
  }
}

TEST(TensorFile, CorruptInputs) {
  auto bytes = io::encode_tensor(nn::Tensor<double>({2}, {1.0, 2.0}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(io::decode_tensor(bad_magic), DataError);
  auto bad_dtype = bytes;
  bad_dtype[4] = 7;
  EXPECT_THROW(io::decode_tensor(bad_dtype), DataError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(io::decode_tensor(truncated), DataError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(io::decode_tensor(extra), DataError);
  EXPECT_THROW(io::decode_tensor(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 8)), DataError);
  EXPECT_THROW(io::read_tensor_file("/nonexistent.spt"), DataError);
  TempDir dir("io_dtype");
  io::write_tensor_file(dir.path / "d.spt", nn::Tensor<double>({1}, {1.0}));
  EXPECT_THROW(io::read_tensor_file_as<float>(dir.path / "d.spt"), DataError);
}

TEST(Checkpoint, RoundTripRestoresOutputs) {
  TempDir dir("ckpt");
  fusion::ModelSpec spec;
  spec.kind = fusion::ModelKind::Sonic;
  spec.classes = 3;
  spec.input_shape = {8, 8, 3};
  spec.init_seed = 4;
  fusion::SonicModel<float> model(spec);
  Rng rng(2);
  for (auto& [name, p] : model.named_parameters())
    for (auto& v : p->value.data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  checkpoint::save(dir.path, model, {{"fold", 0}});
  EXPECT_TRUE(fs::exists(dir.path / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir.path / "fusion.0.weight.spt"));

  const auto loaded = checkpoint::load<float>(dir.path);
  nn::Tensor<float> x({2, 8, 8, 3});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform());
  EXPECT_EQ(loaded->infer(x).probabilities, model.infer(x).probabilities);
  EXPECT_EQ(loaded->spec().init_seed, 4u);
}

TEST(Checkpoint, MissingOrBrokenManifest) {
  TempDir dir("ckpt_bad");
  EXPECT_THROW(checkpoint::load<float>(dir.path), DataError);
  std::ofstream(dir.path / "manifest.json") << "{ not json";
  EXPECT_THROW(checkpoint::load<float>(dir.path), DataError);
  std::ofstream(dir.path / "manifest.json", std::ios::trunc) << R"({"model": {"kind": "bogus"}})";
  EXPECT_THROW(checkpoint::load<float>(dir.path), DataError);
}

TEST(Config, ParsesSectionsAndComments) {
  const auto c = config::parse_config(R"(# pipeline
seed = 7
task = 3class
mode = residual   # trailing comment
[paths]
data_dir = /data/wesad
[stft]
window_len = 128
hop = 32
nfft = 128
window = hamming
[train]
epochs = 3
learning_rate = 0.0005
[eval]
group_by_subject = true
)");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.task, ingest::TaskScheme::ThreeClass);
  EXPECT_EQ(c.mode, fusion::ModelKind::SingleResidual);
  EXPECT_EQ(c.data_dir, "/data/wesad");
  EXPECT_EQ(c.stft.window_len, 128u);
  EXPECT_EQ(c.stft.window, dsp::WindowKind::Hamming);
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.train.adam.learning_rate, 0.0005);
  EXPECT_TRUE(c.group_by_subject);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.echo()["file"].get<std::string>().substr(0, 10), "# pipeline");
}

TEST(Config, RejectsUnknownAndMalformed) {
  EXPECT_THROW(config::parse_config("colour = blue\n"), ConfigError);
  EXPECT_THROW(config::parse_config("[stft]\nwindow_length = 3\n"), ConfigError);
  EXPECT_THROW(config::parse_config("seed = abc\n"), ConfigError);
  EXPECT_THROW(config::parse_config("seed\n"), ConfigError);
  EXPECT_THROW(config::parse_config("[stft\n"), ConfigError);
  EXPECT_THROW(config::parse_config("task = 5class\n"), ConfigError);
  EXPECT_THROW(config::load_config("/nonexistent/config.ini"), ConfigError);
}

TEST(Config, ValidationCatchesComponentInvariants) {
  EXPECT_THROW(config::parse_config("[stft]\nnfft = 200\n").validate(), ConfigError);
  EXPECT_THROW(config::parse_config("[stft]\nwindow_len = 512\n").validate(), ConfigError);
  EXPECT_THROW(config::parse_config("[train]\nbatch_size = 0\n").validate(), ConfigError);
  EXPECT_THROW(config::parse_config("[train]\ndropout = 1.0\n").validate(), ConfigError);
  EXPECT_THROW(config::parse_config("[eval]\nfolds = 1\n").validate(), ConfigError);
  EXPECT_THROW(config::parse_config("[segmentation]\nstride_seconds = 0\n").validate(), ConfigError);
  EXPECT_THROW(config::parse_config("[ingest]\nsample_rate_hz = -1\n").validate(), ConfigError);
}

TEST(Config, OverridesAreRecorded) {
  auto c = config::parse_config("seed = 1\n");
  config::apply_override(c, "train.epochs=2");
  config::apply_override(c, "seed = 9");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train.epochs, 2u);
  EXPECT_EQ(c.echo()["overrides"].size(), 2u);
  EXPECT_THROW(config::apply_override(c, "nonsense"), ConfigError);
}
