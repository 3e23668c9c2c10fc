#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "compad/error.hpp"
#include "compad/scene_data.hpp"
#include "test_util.hpp"

using namespace compad;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "compad_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

VideoSample plain_video(std::size_t snippets, std::size_t d = 2) {
  VideoSample v;
  v.video_id = "v";
  for (std::size_t i = 0; i < snippets; ++i) {
    Snippet s;
    s.index = i;
    s.scene_feature.assign(d, static_cast<double>(i));
    v.snippets.push_back(s);
  }
  return v;
}

SynthConfig small_synth() {
  SynthConfig c;
  c.num_videos = 3;
  c.feature_dim = 8;
  c.min_snippets = 40;
  c.max_snippets = 60;
  return c;
}

}  // namespace

TEST_CASE("synth is deterministic in the seed and differs across seeds") {
  const auto c = small_synth();
  CHECK(synth_generate(c, 7) == synth_generate(c, 7));
  CHECK_FALSE(synth_generate(c, 7) == synth_generate(c, 8));
}

TEST_CASE("synth output satisfies the dataset invariants") {
  SynthConfig c;
  const Dataset ds = synth_generate(c, 7);
  CHECK_NOTHROW(validate(ds));
  CHECK(ds.videos.size() == c.num_videos);
  for (const auto& v : ds.videos) {
    CHECK(v.snippets.size() >= c.min_snippets);
    CHECK(v.snippets.size() <= c.max_snippets);
    CHECK(v.ground_truth.size() >= 1);
    CHECK(v.ground_truth.size() <= 3);
    for (const auto& g : v.ground_truth) {
      const auto len = g.end_snippet - g.start_snippet + 1;
      CHECK(len >= c.min_segment_len);
      CHECK(len <= c.max_segment_len);
    }
    // non-overlapping by default
    const auto mask = ground_truth_mask(v);
    std::size_t covered = 0;
    for (auto m : mask) covered += m;
    std::size_t total = 0;
    for (const auto& g : v.ground_truth) total += g.end_snippet - g.start_snippet + 1;
    CHECK(covered == total);
  }
}

TEST_CASE("synth without background tiles every snippet") {
  auto c = small_synth();
  c.background = false;
  for (const auto& v : synth_generate(c, 3).videos) {
    for (auto m : ground_truth_mask(v)) CHECK(m == 1);
  }
}

TEST_CASE("synth rejects infeasible configurations") {
  SynthConfig c = small_synth();
  c.min_snippets = c.max_snippets = 20;
  c.min_segments = c.max_segments = 3;
  c.min_segment_len = c.max_segment_len = 10;
  CHECK_THROWS_AS(synth_generate(c, 1), ConfigError);
  SynthConfig one_class = small_synth();
  one_class.num_classes = 1;
  CHECK_THROWS_AS(synth_generate(one_class, 1), ConfigError);
  SynthConfig tiny = small_synth();
  tiny.feature_dim = 3;
  CHECK_THROWS_AS(synth_generate(tiny, 1), ConfigError);
}

TEST_CASE("a linear probe on scene features separates the classes") {
  // Softmax regression over the activity classes (snippets inside a segment),
  // trained on 20 videos and scored on 5 held-out ones.
  SynthConfig c;
  c.num_videos = 25;
  const Dataset ds = synth_generate(c, 7);
  const std::size_t k = c.num_classes, d = c.feature_dim;
  auto label_of = [&](const VideoSample& v, std::size_t i) {
    for (const auto& g : v.ground_truth) {
      if (i >= g.start_snippet && i <= g.end_snippet) return static_cast<std::size_t>(g.activity_class);
    }
    return c.num_classes;
  };
  std::vector<double> w(k * (d + 1), 0.0);
  auto logits = [&](const std::vector<double>& x) {
    std::vector<double> z(k);
    for (std::size_t j = 0; j < k; ++j) {
      z[j] = w[j * (d + 1) + d];
      for (std::size_t q = 0; q < d; ++q) z[j] += w[j * (d + 1) + q] * x[q];
    }
    return z;
  };
  for (int epoch = 0; epoch < 20; ++epoch) {
    for (std::size_t vi = 0; vi < 20; ++vi) {
      const auto& v = ds.videos[vi];
      for (std::size_t i = 0; i < v.snippets.size(); ++i) {
        if (label_of(v, i) == c.num_classes) continue;
        const auto& x = v.snippets[i].scene_feature;
        auto z = logits(x);
        const double m = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double& e : z) s += (e = std::exp(e - m));
        const std::size_t y = label_of(v, i);
        for (std::size_t j = 0; j < k; ++j) {
          const double g = z[j] / s - (j == y ? 1.0 : 0.0);
          for (std::size_t q = 0; q < d; ++q) w[j * (d + 1) + q] -= 0.01 * g * x[q];
          w[j * (d + 1) + d] -= 0.01 * g;
        }
      }
    }
  }
  std::size_t ok = 0, total = 0;
  for (std::size_t vi = 20; vi < 25; ++vi) {
    const auto& v = ds.videos[vi];
    for (std::size_t i = 0; i < v.snippets.size(); ++i) {
      if (label_of(v, i) == c.num_classes) continue;
      ++total;
      const auto z = logits(v.snippets[i].scene_feature);
      const auto arg = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      ok += arg == label_of(v, i);
    }
  }
  CHECK(static_cast<double>(ok) / static_cast<double>(total) > 0.9);
}

TEST_CASE("CADF round-trips and is byte-deterministic") {
  const Dataset ds = synth_generate(small_synth(), 7);
  const auto a = scratch("cadf_a"), b = scratch("cadf_b");
  save_dataset(ds, a / "manifest.json");
  save_dataset(ds, b / "manifest.json");
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  CHECK(slurp(a / "features.bin") == slurp(b / "features.bin"));
  CHECK(fs::file_size(a / "features.bin") == cadf_payload_size(ds));

  const Dataset back = load_dataset(a / "manifest.json");
  CHECK(back == ds);
  const auto c = scratch("cadf_c");
  save_dataset(back, c / "manifest.json");
  CHECK(slurp(c / "features.bin") == slurp(a / "features.bin"));
}

TEST_CASE("CADF empty dataset") {
  Dataset ds;
  ds.feature_dim = 4;
  ds.num_activity_classes = 2;
  ds.num_agent_classes = 1;
  ds.activity_class_names = {"a", "b"};
  ds.agent_class_names = {"x"};
  const auto dir = scratch("cadf_empty");
  save_dataset(ds, dir / "manifest.json");
  const Dataset back = load_dataset(dir / "manifest.json");
  CHECK(back.videos.empty());
  CHECK(back == ds);
}

TEST_CASE("CADF payload size formula and zero-agent snippets") {
  Dataset ds;
  ds.feature_dim = 4;
  ds.num_activity_classes = 1;
  ds.num_agent_classes = 2;
  ds.activity_class_names = {"a"};
  ds.agent_class_names = {"x", "y"};
  VideoSample v = plain_video(2, 4);
  v.video_id = "only";
  AgentTube t;
  t.agent_class = 1;
  t.tube_length = 3;
  t.feature = {1, 2, 3, 4};
  v.snippets[1].agents.push_back(t);
  ds.videos.push_back(v);
  // header 16 bytes, snippet 0: 4 floats, snippet 1: 4 floats + (2 u32 + 4 floats)
  const std::size_t expect = 16 + (4 + 0) * 4 + (4 + (2 + 4)) * 4;
  CHECK(cadf_payload_size(ds) == expect);
  const auto dir = scratch("cadf_size");
  save_dataset(ds, dir / "manifest.json");
  CHECK(fs::file_size(dir / "features.bin") == expect);
  const auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(j["videos"][0]["agents_per_snippet"] == nlohmann::json::array({0, 1}));
  CHECK(load_dataset(dir / "manifest.json") == ds);
}

TEST_CASE("CADF parse errors are distinct and carry offsets") {
  const Dataset ds = synth_generate(small_synth(), 7);
  const auto dir = scratch("cadf_err");
  save_dataset(ds, dir / "manifest.json");
  const std::string manifest = slurp(dir / "manifest.json");
  const std::string payload = slurp(dir / "features.bin");
  auto write = [&](const std::string& m, const std::string& p) {
    std::ofstream(dir / "manifest.json", std::ios::binary | std::ios::trunc) << m;
    std::ofstream(dir / "features.bin", std::ios::binary | std::ios::trunc) << p;
  };
  auto kind_of = [&]() {
    try {
      load_dataset(dir / "manifest.json");
    } catch (const ParseError& e) {
      return e.kind();
    }
    FAIL("expected ParseError");
    return ParseError::Kind::Schema;
  };

  SUBCASE("payload magic") {
    std::string p = payload;
    p[0] = 'X';
    write(manifest, p);
    CHECK(kind_of() == ParseError::Kind::Magic);
  }
  SUBCASE("manifest version") {
    auto j = nlohmann::json::parse(manifest);
    j["version"] = 9;
    write(j.dump(), payload);
    CHECK(kind_of() == ParseError::Kind::Version);
  }
  SUBCASE("truncated payload") {
    write(manifest, payload.substr(0, payload.size() - 4));
    CHECK(kind_of() == ParseError::Kind::PayloadLength);
  }
  SUBCASE("manifest feature_dim over a payload sized for another D names the video") {
    auto j = nlohmann::json::parse(manifest);
    j["feature_dim"] = 16;
    write(j.dump(), payload);
    try {
      load_dataset(dir / "manifest.json");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.kind() == ParseError::Kind::FeatureDim);
      CHECK(std::string(e.what()).find(ds.videos[0].video_id) != std::string::npos);
      CHECK(e.offset() == 16);
    }
  }
  SUBCASE("malformed manifest") {
    write("{not json", payload);
    CHECK(kind_of() == ParseError::Kind::Schema);
  }
}

TEST_CASE("chunk_video lengths") {
  auto lengths = [](const std::vector<Chunk>& cs) {
    std::vector<std::size_t> out;
    for (const auto& c : cs) out.push_back(c.valid_len());
    return out;
  };
  CHECK(lengths(chunk_video(plain_video(1000), 512)) == std::vector<std::size_t>{512, 488});
  CHECK(lengths(chunk_video(plain_video(100), 512)) == std::vector<std::size_t>{100});
  CHECK(chunk_video(plain_video(0), 8).empty());
  CHECK_THROWS_AS(chunk_video(plain_video(3), 0), ConfigError);
}

TEST_CASE("chunk_video clips and re-indexes ground truth") {
  VideoSample v = plain_video(1000);
  v.ground_truth = {{0, 500, 600}};
  const auto cs = chunk_video(v, 512);
  REQUIRE(cs.size() == 2);
  REQUIRE(cs[0].sample.ground_truth.size() == 1);
  REQUIRE(cs[1].sample.ground_truth.size() == 1);
  CHECK(cs[0].sample.ground_truth[0] == GroundTruthSegment{0, 500, 511});
  CHECK(cs[1].sample.ground_truth[0] == GroundTruthSegment{0, 0, 88});
  CHECK(cs[1].first_snippet == 512);
  CHECK(cs[1].sample.snippets[0].index == 0);
}

TEST_CASE("chunking conserves snippets and GT masks") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = compad::testing::uniform_index(rng, 1, 120);
    VideoSample v = plain_video(n);
    for (int g = 0; g < 3; ++g) {
      const std::size_t a = compad::testing::uniform_index(rng, 0, n - 1);
      const std::size_t b = compad::testing::uniform_index(rng, a, n - 1);
      v.ground_truth.push_back({g % 2, a, b});
    }
    const std::size_t len = compad::testing::uniform_index(rng, 1, 40);
    const auto cs = chunk_video(v, len);
    for (int cls : {-1, 0, 1}) {
      std::vector<std::uint8_t> joined;
      std::size_t total = 0;
      for (const auto& c : cs) {
        CHECK(c.first_snippet == total);
        total += c.valid_len();
        const auto m = ground_truth_mask(c.sample, cls);
        joined.insert(joined.end(), m.begin(), m.end());
      }
      CHECK(total == n);
      CHECK(joined == ground_truth_mask(v, cls));
    }
  }
}
