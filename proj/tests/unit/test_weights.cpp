#include <gtest/gtest.h>

#include <filesystem>

#include "rankedit/error.hpp"
#include "rankedit/io.hpp"
#include "support.hpp"

using namespace rankedit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rankedit_unit";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Config, Invariants) {
  EncoderConfig c;
  c.vocab_size = 10;
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 5;
  EXPECT_THROW(c.validate(), DataError);
  c.n_heads = 4;
  c.d_mlp = 16;
  EXPECT_THROW(c.validate(), DataError);
  c.d_mlp = 128;
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), DataError);
}

TEST(Config, JsonRoundTrip) {
  EncoderConfig c;
  c.vocab_size = 99;
  c.seed = 7;
  const EncoderConfig back = EncoderConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  auto j = c.to_json();
  j["nonlinearity"] = "relu";
  EXPECT_THROW(EncoderConfig::from_json(j), DataError);
}

TEST(Weights, RandomInitIsSeeded) {
  EncoderConfig c;
  c.vocab_size = 20;
  c.seed = 3;
  const EncoderWeights a = EncoderWeights::random_init(c);
  const EncoderWeights b = EncoderWeights::random_init(c);
  EXPECT_TRUE(bitwise_equal(a, b));
  c.seed = 4;
  EXPECT_FALSE(bitwise_equal(a, EncoderWeights::random_init(c)));
  // Biases start at zero and norms at unit scale.
  EXPECT_TRUE(a.layers[0].b_fc.isZero(0.0));
  EXPECT_TRUE(a.final_gamma.isOnes(0.0));
  const double sd = std::sqrt(a.layers[0].w_fc.array().square().mean());
  EXPECT_NEAR(sd, 0.02, 0.002);
}

TEST(Weights, SaveLoadRoundTripIsExact) {
  const Vocabulary v = rankedit::testing::small_vocab();
  EncoderConfig c;
  c.vocab_size = v.size();
  c.d_model = 8;
  c.d_mlp = 16;
  c.n_heads = 2;
  EncoderWeights w = EncoderWeights::random_init(c);
  w.vocab_digest = v.digest();
  const fs::path p = scratch("weights.bin");
  w.save(p);
  const EncoderWeights back = EncoderWeights::load(p);
  EXPECT_TRUE(bitwise_equal(w, back));
  EXPECT_EQ(back.vocab_digest, v.digest());
  const TokenSequence seq = tokenize("a cat", v, c.max_seq_len);
  EXPECT_TRUE(encode(w, seq).eos_embedding == encode(back, seq).eos_embedding);
  // Serializing the loaded file again gives the same bytes.
  EXPECT_EQ(serialize_tensor_file(back.to_tensor_file()), read_text_file(p));
}

TEST(Weights, RejectsNonFiniteAndBadShapes) {
  EncoderConfig c;
  c.vocab_size = 8;
  c.d_model = 8;
  c.d_mlp = 16;
  c.n_heads = 2;
  EncoderWeights w = EncoderWeights::random_init(c);
  w.layers[0].w_q(0, 0) = std::nan("");
  EXPECT_THROW(w.validate(), DataError);
  TensorFile f = EncoderWeights::random_init(c).to_tensor_file();
  for (auto& t : f.tensors) {
    if (t.name == "final_ln.gamma") t.shape = {9};
  }
  EXPECT_THROW(EncoderWeights::from_tensor_file(f), DataError);
}

TEST(TensorFile, HeaderLayout) {
  TensorFile f;
  f.config = {{"a", 1}};
  f.metadata = {{"kind", "test"}};
  f.tensors.push_back({"x", {2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}});
  f.tensors.push_back({"y", {3}, {-1.0f, 0.5f, 0.25f}});
  const std::string bytes = serialize_tensor_file(f);
  std::uint64_t header_len = 0;
  for (int i = 7; i >= 0; --i) {
    header_len = (header_len << 8) | static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]);
  }
  const auto header = nlohmann::json::parse(bytes.substr(8, header_len));
  EXPECT_EQ(header["format"], "rankedit-tensors");
  EXPECT_EQ(header["tensors"]["y"]["offset"], 16);
  EXPECT_EQ(bytes.size(), 8 + header_len + 7 * 4);
  const TensorFile back = parse_tensor_file(bytes, "memory");
  EXPECT_EQ(back.at("y").values, (std::vector<float>{-1.0f, 0.5f, 0.25f}));
  EXPECT_EQ(serialize_tensor_file(back), bytes);
}

TEST(TensorFile, TruncatedPayloadIsDataError) {
  TensorFile f;
  f.tensors.push_back({"x", {4}, {1.0f, 2.0f, 3.0f, 4.0f}});
  std::string bytes = serialize_tensor_file(f);
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(parse_tensor_file(bytes, "memory"), DataError);
  EXPECT_THROW(parse_tensor_file("abc", "memory"), DataError);
}

TEST(Vocabulary, SpecialsAndFormat) {
  const Vocabulary v = Vocabulary::with_specials({"x", "y"});
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.bos(), 0);
  EXPECT_EQ(v.pad(), 3);
  EXPECT_EQ(*v.find("y"), 5);
  const Vocabulary back = Vocabulary::parse(v.serialize(), "memory");
  EXPECT_EQ(back.serialize(), v.serialize());
  EXPECT_EQ(back.digest(), v.digest());
  EXPECT_THROW(Vocabulary::parse("x\ny\n", "memory"), DataError);
  EXPECT_THROW(Vocabulary::with_specials({"x", "x"}), DataError);
}

TEST(Vocabulary, FrequencyRankedWithCap) {
  const std::vector<std::string> lines = {"b a a", "c b a", "d"};
  const Vocabulary v = Vocabulary::build_from_corpus(lines, 3);
  EXPECT_EQ(v.size(), 7u);
  EXPECT_EQ(v.token(4), "a");
  EXPECT_EQ(v.token(5), "b");
  EXPECT_EQ(v.token(6), "c");  // c and d tie; lexicographic order decides
  EXPECT_FALSE(v.find("d"));
  EXPECT_THROW(Vocabulary::build_from_corpus(std::vector<std::string>{"  "}, 3), DataError);
}
