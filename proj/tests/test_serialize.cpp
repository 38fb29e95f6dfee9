#include <catch2/catch_amalgamated.hpp>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "auvire/datagen.hpp"
#include "auvire/serialize.hpp"

using namespace auvire;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("auvire_ser_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

FeatureRecord sample_record(int t, int d, std::uint64_t seed) {
  FeatureRecord rec;
  rec.id = "clip";
  rec.features.visual = Tensor<float>({t, d});
  rec.features.audio = Tensor<float>({t, d});
  Rng rng(seed);
  for (auto& v : rec.features.visual.data) v = static_cast<float>(rng.normal());
  for (auto& v : rec.features.audio.data) v = static_cast<float>(rng.normal());
  rec.features.valid_len = t;
  rec.features.fps = 25.0;
  return rec;
}

}  // namespace

TEST_CASE("feature files round-trip bit exactly") {
  TempDir dir;
  auto rec = sample_record(37, 8, 11);
  const std::string path = dir.file("clip.avrf");
  write_features(path, rec);
  auto back = read_features(path);
  CHECK(back.id == "clip");
  CHECK(back.features.visual.shape == rec.features.visual.shape);
  CHECK(back.features.visual.data == rec.features.visual.data);
  CHECK(back.features.audio.data == rec.features.audio.data);
  CHECK(back.features.fps == 25.0);
  CHECK(back.features.valid_len == 37);

  // header: magic, version, t, d, fps, then t*d floats per modality
  CHECK(fs::file_size(path) == 4 + 4 + 4 + 4 + 4 + 2u * 37u * 8u * 4u);
}

TEST_CASE("truncated feature files report the missing byte count and offset") {
  TempDir dir;
  write_features(dir.file("clip.avrf"), sample_record(8, 4, 3));
  auto whole = read_file_bytes(dir.file("clip.avrf"));
  write_file_bytes(dir.file("cut.avrf"), whole.substr(0, whole.size() - 10));
  try {
    read_features(dir.file("cut.avrf"));
    FAIL("expected format_error");
  } catch (const format_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("truncated") != std::string::npos);
    CHECK(msg.find("offset") != std::string::npos);
  }
}

TEST_CASE("feature files reject bad magic, version, trailing bytes, and dims") {
  TempDir dir;
  write_features(dir.file("ok.avrf"), sample_record(8, 4, 3));
  auto whole = read_file_bytes(dir.file("ok.avrf"));

  auto corrupt = whole;
  corrupt[0] = 'X';
  write_file_bytes(dir.file("magic.avrf"), corrupt);
  CHECK_THROWS_WITH(read_features(dir.file("magic.avrf")),
                    Catch::Matchers::ContainsSubstring("bad magic"));

  corrupt = whole;
  corrupt[4] = 2;
  write_file_bytes(dir.file("ver.avrf"), corrupt);
  CHECK_THROWS_WITH(read_features(dir.file("ver.avrf")),
                    Catch::Matchers::ContainsSubstring("unsupported version"));

  write_file_bytes(dir.file("tail.avrf"), whole + "zz");
  CHECK_THROWS_WITH(read_features(dir.file("tail.avrf")),
                    Catch::Matchers::ContainsSubstring("trailing"));

  corrupt = whole;
  corrupt[8] = 0;
  corrupt[9] = 0;
  corrupt[10] = 0;
  corrupt[11] = 0;  // t = 0
  write_file_bytes(dir.file("dims.avrf"), corrupt);
  CHECK_THROWS_WITH(read_features(dir.file("dims.avrf")),
                    Catch::Matchers::ContainsSubstring("implausible dimensions"));

  CHECK_THROWS_AS(read_features(dir.file("missing.avrf")), format_error);
}

TEST_CASE("annotation files round-trip") {
  TempDir dir;
  SegmentAnnotation a;
  a.id = "vid_7";
  a.duration = 5.12;
  a.fps = 25.0;
  a.segments = {{0.5, 1.25}, {3.0, 4.75}};
  const std::string path = dir.file("vid_7.json");
  write_annotation(path, a);
  auto b = read_annotation(path);
  CHECK(b.id == a.id);
  CHECK(b.duration == a.duration);
  CHECK(b.fps == a.fps);
  REQUIRE(b.segments.size() == 2);
  CHECK(b.segments[0].start == 0.5);
  CHECK(b.segments[0].end == 1.25);
  CHECK(b.segments[1].start == 3.0);
  CHECK(b.segments[1].end == 4.75);

  write_file_bytes(dir.file("broken.json"), "{\"id\": \"x\"");
  CHECK_THROWS_AS(read_annotation(dir.file("broken.json")), format_error);
  write_file_bytes(dir.file("partial.json"), "{\"id\": \"x\"}");
  CHECK_THROWS_AS(read_annotation(dir.file("partial.json")), format_error);
}

TEST_CASE("manifest files round-trip and validate") {
  TempDir dir;
  std::vector<ManifestEntry> entries = {
      {"features/a.avrf", "annotations/a.json", "train"},
      {"features/b.avrf", "annotations/b.json", "val"},
      {"features/c.avrf", "annotations/c.json", "test"},
  };
  const std::string path = dir.file("manifest.tsv");
  write_manifest(path, entries);
  auto back = read_manifest(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].feature_path == entries[i].feature_path);
    CHECK(back[i].annotation_path == entries[i].annotation_path);
    CHECK(back[i].split == entries[i].split);
  }

  write_file_bytes(dir.file("short.tsv"), "only_two\tfields\n");
  CHECK_THROWS_WITH(read_manifest(dir.file("short.tsv")),
                    Catch::Matchers::ContainsSubstring(":1:"));

  write_file_bytes(dir.file("split.tsv"), "a\tb\ttrain\nc\td\tdev\n");
  CHECK_THROWS_WITH(read_manifest(dir.file("split.tsv")),
                    Catch::Matchers::ContainsSubstring("unknown split"));
  CHECK_THROWS_WITH(read_manifest(dir.file("split.tsv")),
                    Catch::Matchers::ContainsSubstring(":2:"));
}

TEST_CASE("validity files round-trip through run-length encoding") {
  TempDir dir;
  ValidityRecord r;
  r.id = "vid";
  r.fps = 25.0;
  r.frames = 10;
  r.runs = {{1, 4}, {0, 3}, {1, 3}};
  const std::string path = dir.file("validity.jsonl");
  write_validity(path, {r});
  auto back = read_validity(path);
  REQUIRE(back.count("vid") == 1);
  const auto& b = back.at("vid");
  CHECK(b.fps == 25.0);
  CHECK(b.frames == 10);
  std::vector<std::uint8_t> expect = {1, 1, 1, 1, 0, 0, 0, 1, 1, 1};
  CHECK(b.presence() == expect);

  write_file_bytes(dir.file("bad_sum.jsonl"),
                   "{\"id\":\"x\",\"fps\":25.0,\"frames\":5,\"presence_runs\":[[1,3]]}\n");
  CHECK_THROWS_WITH(read_validity(dir.file("bad_sum.jsonl")),
                    Catch::Matchers::ContainsSubstring("cover 3 of 5"));

  write_file_bytes(dir.file("bad_json.jsonl"), "not json\n");
  CHECK_THROWS_AS(read_validity(dir.file("bad_json.jsonl")), format_error);
}

TEST_CASE("model config json round-trips and rejects unknown keys") {
  ModelConfig c;
  c.d = 24;
  c.d_a = 48;
  c.k = 7;
  c.q = 16;
  c.l_pre_r = 2;
  c.l_down_r = 3;
  c.l_up_r = 3;
  c.l_post_r = 1;
  c.l_retain_e = 2;
  c.l_down_e = 3;
  c.pair_set = {Pair::va, Pair::vv};
  c.discrepancy = DiscrepancyOp::product;
  c.loss_terms.det_bce = true;
  auto j = model_config_to_json(c);
  auto back = model_config_from_json(json::parse(j.dump()));
  CHECK(model_config_to_json(back).dump() == j.dump());

  auto extra = json::parse(j.dump());
  extra["bogus"] = 1;
  CHECK_THROWS_WITH(model_config_from_json(extra), Catch::Matchers::ContainsSubstring("bogus"));

  auto bad_lt = json::parse(j.dump());
  bad_lt["loss_terms"]["mystery"] = true;
  CHECK_THROWS_AS(model_config_from_json(bad_lt), config_error);

  auto bad_pair = json::parse(j.dump());
  bad_pair["pair_set"] = {"av", "xx"};
  CHECK_THROWS_AS(model_config_from_json(bad_pair), config_error);

  auto bad_type = json::parse(j.dump());
  bad_type["d"] = "wide";
  CHECK_THROWS_AS(model_config_from_json(bad_type), config_error);

  auto bad_disc = json::parse(j.dump());
  bad_disc["discrepancy"] = "quotient";
  CHECK_THROWS_AS(model_config_from_json(bad_disc), config_error);
}

TEST_CASE("checkpoints restore parameters bit exactly") {
  TempDir dir;
  ModelConfig cfg;
  cfg.d = 6;
  cfg.d_a = 8;
  cfg.k = 3;
  cfg.l_down_e = 1;
  Model<float> m(cfg);
  m.init(5);
  const std::string path = dir.file("model.bin");
  save_checkpoint(path, m);
  auto back = load_checkpoint<float>(path);
  CHECK(model_config_to_json(back.config()).dump() == model_config_to_json(cfg).dump());
  REQUIRE(back.params().size() == m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i)
    CHECK(back.params()[i].data == m.params()[i].data);

  // a double model loads the same float payload
  auto as_double = load_checkpoint<double>(path);
  for (std::size_t i = 0; i < m.params().size(); ++i)
    for (std::size_t k = 0; k < m.params()[i].data.size(); ++k)
      CHECK(static_cast<float>(as_double.params()[i].data[k]) == m.params()[i].data[k]);
}

TEST_CASE("checkpoints reject mismatched payloads") {
  TempDir dir;
  ModelConfig cfg;
  cfg.d = 6;
  cfg.d_a = 8;
  cfg.k = 3;
  cfg.l_down_e = 1;
  Model<float> m(cfg);
  m.init(5);
  save_checkpoint(dir.file("model.bin"), m);
  auto whole = read_file_bytes(dir.file("model.bin"));

  auto corrupt = whole;
  corrupt[0] = 'Z';
  write_file_bytes(dir.file("magic.bin"), corrupt);
  CHECK_THROWS_WITH(load_checkpoint<float>(dir.file("magic.bin")),
                    Catch::Matchers::ContainsSubstring("bad magic"));

  write_file_bytes(dir.file("cut.bin"), whole.substr(0, whole.size() - 3));
  CHECK_THROWS_WITH(load_checkpoint<float>(dir.file("cut.bin")),
                    Catch::Matchers::ContainsSubstring("truncated"));

  write_file_bytes(dir.file("tail.bin"), whole + "x");
  CHECK_THROWS_WITH(load_checkpoint<float>(dir.file("tail.bin")),
                    Catch::Matchers::ContainsSubstring("trailing"));
}

TEST_CASE("train state sidecar round-trips") {
  TempDir dir;
  TrainStateRecord s;
  s.next_epoch = 17;
  s.adam_step = 123456789012345ull;
  s.lr = 2.5e-4;
  s.has_best = true;
  s.best_criterion = 4.3125;
  s.epochs_since_best = 3;
  s.plateau_counter = 2;
  Rng rng(9);
  for (int i = 0; i < 3; ++i) {
    Tensor<float> m({4 + i});
    Tensor<float> v({4 + i});
    for (auto& x : m.data) x = static_cast<float>(rng.normal());
    for (auto& x : v.data) x = static_cast<float>(rng.uniform());
    s.m.push_back(std::move(m));
    s.v.push_back(std::move(v));
  }
  const std::string path = dir.file("state.bin");
  save_train_state(path, s);
  auto b = load_train_state(path);
  CHECK(b.next_epoch == 17);
  CHECK(b.adam_step == 123456789012345ull);
  CHECK(b.lr == 2.5e-4);
  CHECK(b.has_best);
  CHECK(b.best_criterion == 4.3125);
  CHECK(b.epochs_since_best == 3);
  CHECK(b.plateau_counter == 2);
  REQUIRE(b.m.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(b.m[i].data == s.m[i].data);
    CHECK(b.v[i].data == s.v[i].data);
  }

  auto whole = read_file_bytes(path);
  write_file_bytes(dir.file("cut.bin"), whole.substr(0, 10));
  CHECK_THROWS_AS(load_train_state(dir.file("cut.bin")), format_error);
}
