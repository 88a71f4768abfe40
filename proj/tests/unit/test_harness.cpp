#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "rankedit/error.hpp"
#include "rankedit/harness.hpp"
#include "rankedit/io.hpp"
#include "support.hpp"

using namespace rankedit;
namespace fs = std::filesystem;
using rankedit::testing::data_dir;

namespace {

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

class Harness : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("rankedit_harness_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    cfg_json_ = {{"model", {{"vocab_size", 512}, {"seed", 0}}},
                 {"corpus", (data_dir() / "toy_corpus.txt").string()},
                 {"captions", (data_dir() / "captions.txt").string()},
                 {"dataset", (data_dir() / "synthetic_road.json").string()},
                 {"time_dataset", (data_dir() / "synthetic_time.json").string()},
                 {"weights", "out/model.bin"},
                 {"edited_weights", "out/edited.bin"},
                 {"vocab", "out/vocab.txt"},
                 {"output_dir", "out"},
                 {"layer", 0},
                 {"entry", "apple"},
                 {"seeds", "0-1"},
                 {"optimizer", {{"max_steps", 10}}}};
  }
  void TearDown() override { fs::remove_all(root_); }

  RunConfig config() const { return RunConfig::from_json(cfg_json_, root_); }
  RunConfig initialized() const {
    const RunConfig c = config();
    cmd_init_model(c);
    return c;
  }

  fs::path root_;
  nlohmann::json cfg_json_;
};

}  // namespace

TEST(SeedList, Parsing) {
  EXPECT_EQ(parse_seed_list("0-3,9"), (std::vector<std::uint64_t>{0, 1, 2, 3, 9}));
  EXPECT_EQ(parse_seed_list("5").size(), 1u);
  EXPECT_THROW(parse_seed_list("3-1"), UsageError);
  EXPECT_THROW(parse_seed_list("x"), UsageError);
}

TEST_F(Harness, ConfigDefaultsAndValidation) {
  cfg_json_.erase("seeds");
  RunConfig c = config();
  EXPECT_EQ(c.seeds.size(), 25u);
  EXPECT_EQ(c.seeds.back(), 24u);
  EXPECT_EQ(c.weights, root_ / "out/model.bin");
  c.seeds = {1, 1};
  EXPECT_THROW(c.validate(), UsageError);
}

TEST_F(Harness, InitModelIsReproducible) {
  const RunConfig c = initialized();
  const std::string weights = read_text_file(c.weights);
  const std::string vocab = read_text_file(c.vocab);
  cmd_init_model(c);
  EXPECT_EQ(read_text_file(c.weights), weights);
  EXPECT_EQ(read_text_file(c.vocab), vocab);

  std::set<std::string> distinct;
  for (const auto& line : read_lines(data_dir() / "toy_corpus.txt")) {
    for (auto& w : split_words(line)) distinct.insert(w);
  }
  const std::size_t cap = 512 - 4;
  // Header line plus one line per token.
  EXPECT_EQ(count_lines(vocab), 1 + std::min(distinct.size(), cap) + 4);

  const EncoderWeights w = EncoderWeights::load(c.weights);
  const Vocabulary v = Vocabulary::load(c.vocab);
  EncoderConfig expect_cfg = c.model;
  expect_cfg.vocab_size = v.size();
  EncoderWeights fresh = EncoderWeights::random_init(expect_cfg);
  const auto seq = tokenize("a photo of an apple", v, 32);
  EXPECT_TRUE(encode(w, seq).eos_embedding == encode(fresh, seq).eos_embedding);
}

TEST_F(Harness, InitModelErrors) {
  cfg_json_["model"]["vocab_size"] = 4;
  EXPECT_THROW(cmd_init_model(config()), DataError);
  write_text_file(root_ / "empty.txt", "");
  cfg_json_["model"]["vocab_size"] = 100;
  cfg_json_["corpus"] = "empty.txt";
  EXPECT_THROW(cmd_init_model(config()), DataError);
}

TEST_F(Harness, EditNeedsCovarianceThenWritesAudit) {
  const RunConfig c = initialized();
  EXPECT_THROW(cmd_edit(c), DataError);
  cmd_estimate_cov(c);
  EXPECT_TRUE(fs::exists(covariance_cache_path(c, 0)));
  const auto summary = cmd_edit(c);
  const auto audit = nlohmann::json::parse(read_text_file(summary["audit"].get<std::string>()));
  EXPECT_EQ(audit["request_id"], "apple");
  EXPECT_TRUE(audit.contains("lambda_norm"));
  EXPECT_TRUE(fs::exists(c.output_dir / "edited.bin"));
}

TEST_F(Harness, NoOpRequestReportsLambdaNorm) {
  RunConfig c = initialized();
  cmd_estimate_cov(c);
  write_text_file(root_ / "req.json",
                  R"({"id": "noop", "edit_prompt": "an apple", "subject": "apple",
                      "source": "an apple", "target": "an apple", "layer": 0})");
  c.request = root_ / "req.json";
  const auto summary = cmd_edit(c);
  EXPECT_TRUE(summary["lambda_norm"].is_number());
  const auto audit = nlohmann::json::parse(read_text_file(summary["audit"].get<std::string>()));
  EXPECT_EQ(audit["request_id"], "noop");
  EXPECT_TRUE(audit["lambda_norm"].is_number());
}

TEST_F(Harness, RejectsVocabularyMismatch) {
  RunConfig c = initialized();
  write_text_file(root_ / "other_vocab.txt", Vocabulary::with_specials({"x"}).serialize());
  c.vocab = root_ / "other_vocab.txt";
  EXPECT_THROW(cmd_estimate_cov(c), DataError);
  EXPECT_THROW(cmd_eval(c, false), DataError);
}

TEST_F(Harness, SeqEditWritesAuditsAndCurve) {
  cfg_json_.erase("time_dataset");
  cfg_json_["optimizer"]["max_steps"] = 3;
  const RunConfig c = initialized();
  cmd_estimate_cov(c);
  const auto summary = cmd_seq_edit(c);
  EXPECT_EQ(summary["edits"], 10);
  std::size_t audits = 0;
  for (const auto& e : fs::directory_iterator(c.output_dir / "audits")) {
    audits += e.path().extension() == ".json";
  }
  EXPECT_EQ(audits, 10u);
  const std::string curve = read_text_file(c.output_dir / "metrics_curve.csv");
  EXPECT_EQ(count_lines(curve), 2u);
  EXPECT_EQ(curve.substr(curve.find('\n') + 1, 3), "10,");
}

TEST_F(Harness, SeqEditInterleavesTime) {
  const DatasetFile road = load_road(data_dir() / "synthetic_road.json");
  const DatasetFile time = load_time(data_dir() / "synthetic_time.json");
  const auto order = interleave(road, &time);
  ASSERT_EQ(order.size(), road.entries.size() + time.entries.size());
  EXPECT_EQ(order[0].second, DatasetFormat::kRoad);
  EXPECT_EQ(order[1].second, DatasetFormat::kTime);
  EXPECT_EQ(order[1].first.id, time.entries[0].id);
  EXPECT_EQ(order.back().second, DatasetFormat::kRoad);
}

TEST_F(Harness, EvalUneditedModel) {
  cfg_json_["edited_weights"] = "out/model.bin";
  const RunConfig c = initialized();
  const auto summary = cmd_eval(c, false);
  const auto report = nlohmann::json::parse(read_text_file(c.output_dir / "report.json"));
  EXPECT_LE(report["metrics"]["efficacy"].get<double>(), 0.5);
  EXPECT_GE(report["metrics"]["specificity"].get<double>(), 0.9);
  EXPECT_EQ(report["score_source"], "proxy");
  EXPECT_EQ(report["record_count"], 10 * 11 * 2);
  const std::string csv = read_text_file(c.output_dir / "report.csv");
  EXPECT_EQ(count_lines(csv), 2u);

  // Feeding the emitted scores back as external scores gives the same report.
  RunConfig ext = c;
  fs::copy_file(c.output_dir / "scores.csv", root_ / "ext.csv");
  ext.scores = root_ / "ext.csv";
  cmd_eval(ext, false);
  auto external = nlohmann::json::parse(read_text_file(c.output_dir / "report.json"));
  EXPECT_EQ(external["score_source"], "external");
  external["score_source"] = "proxy";
  EXPECT_EQ(external, report);
}

TEST_F(Harness, EvalEmptyDatasetIsError) {
  write_text_file(root_ / "empty.json", R"({"version": 1, "split": "test", "entries": []})");
  cfg_json_["dataset"] = "empty.json";
  const RunConfig c = initialized();
  EXPECT_THROW(cmd_eval(c, false), DataError);
}

TEST_F(Harness, SweepRowsAndFailedLayer) {
  cfg_json_["layers"] = {0, 1, 5};
  const RunConfig c = initialized();
  cmd_sweep_layers(c);
  const std::string csv = read_text_file(c.output_dir / "sweep.csv");
  EXPECT_EQ(count_lines(csv), 4u);
  EXPECT_NE(csv.find("\n5,nan,nan,nan,nan\n"), std::string::npos) << csv;
  const auto j = nlohmann::json::parse(read_text_file(c.output_dir / "sweep.json"));
  EXPECT_EQ(j["rows"].size(), 3u);
  EXPECT_TRUE(j["rows"][2].contains("error"));
}

TEST_F(Harness, SweepSingleLayerEqualsEditThenEval) {
  cfg_json_["layers"] = {0};
  RunConfig c = initialized();
  cmd_sweep_layers(c);
  const auto sweep = nlohmann::json::parse(read_text_file(c.output_dir / "sweep.json"));

  cmd_edit(c);  // covariance for layer 0 was cached by the sweep
  const auto ds = load_road(c.dataset);
  const auto edited = EncoderWeights::load(c.output_dir / "edited.bin");
  const auto clean = EncoderWeights::load(c.weights);
  const auto vocab = Vocabulary::load(c.vocab);
  const auto report = aggregate(proxy_records(edited, clean, vocab, ds.find("apple"), c.seeds));
  EXPECT_EQ(sweep["rows"][0]["f1"].get<double>(), *report.mean.f1);
  EXPECT_EQ(sweep["rows"][0]["efficacy"].get<double>(), *report.mean.efficacy);
}
