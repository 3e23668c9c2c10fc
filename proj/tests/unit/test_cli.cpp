#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "compad/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = compad::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("compad_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::string> small_synth(const fs::path& out, const std::string& seed) {
  return {"synth", "--out", out.string(), "--seed", seed, "--videos", "3", "--classes", "2",
          "--feature-dim", "8", "--min-snippets", "20", "--max-snippets", "30",
          "--min-segment-len", "3", "--max-segment-len", "8", "--max-agents", "2",
          "--agent-classes", "2"};
}

std::vector<std::string> small_train(const fs::path& data, const fs::path& out) {
  return {"train", "--dataset", data.string(), "--out", out.string(), "--hidden-dim", "6",
          "--scene-dim", "8", "--heads", "2", "--temporal-len", "16", "--anchor-count", "16",
          "--epochs", "2", "--seed", "3"};
}

// synth + train once, shared by the checkpoint-consuming tests
const fs::path& trained() {
  static const fs::path root = [] {
    const fs::path r = scratch("shared");
    REQUIRE(cli(small_synth(r / "data", "5")).code == 0);
    REQUIRE(cli(small_train(r / "data", r / "run")).code == 0);
    return r;
  }();
  return root;
}

}  // namespace

TEST_CASE("usage and help") {
  const Run none = cli({});
  CHECK(none.code == 2);
  CHECK(none.err.find("synth") != std::string::npos);
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"train", "--help"}).code == 0);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"synth"}).code == 2);
  CHECK(cli({"synth", "--out", "x", "--no-such-flag"}).code == 2);
}

TEST_CASE("bad option values exit 2 before touching data") {
  const fs::path out = scratch("bad");
  const Run topo = cli({"train", "--dataset", "nowhere", "--out", out.string(), "--topology",
                        "diag"});
  CHECK(topo.code == 2);
  for (const char* name : {"fully", "star", "star-plus"}) {
    CHECK(topo.err.find(name) != std::string::npos);
  }
  CHECK(cli({"train", "--dataset", "nowhere", "--out", out.string(), "--lr", "nan"}).code == 2);
  CHECK(cli({"train", "--dataset", "nowhere", "--out", out.string(), "--agg", "max"}).code == 2);
  CHECK(cli({"train", "--dataset", "nowhere", "--out", out.string(), "--protocol", "kinetics"})
            .code == 2);
  CHECK(cli({"train", "--dataset", "nowhere", "--out", out.string(), "--threads", "0"}).code ==
        2);
  CHECK(!fs::exists(out));
  CHECK(cli({"synth", "--out", out.string(), "--classes", "0"}).code == 2);
}

TEST_CASE("missing checkpoint exits 2") {
  const fs::path out = scratch("nock");
  CHECK(cli({"eval", "--checkpoint", (out / "none.cadw").string(), "--dataset", "x", "--out",
             out.string()})
            .code == 2);
  CHECK(cli({"infer", "--checkpoint", (out / "none.cadw").string(), "--dataset", "x", "--out",
             out.string()})
            .code == 2);
}

TEST_CASE("missing dataset is a runtime failure") {
  const fs::path out = scratch("nodata");
  CHECK(cli({"train", "--dataset", (out / "none").string(), "--out", out.string()}).code == 1);
}

TEST_CASE("synth is reproducible from the seed") {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b"), c = scratch("synth_c");
  REQUIRE(cli(small_synth(a, "11")).code == 0);
  REQUIRE(cli(small_synth(b, "11")).code == 0);
  REQUIRE(cli(small_synth(c, "12")).code == 0);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  CHECK(read_json(a / "run_config.json")["seed"] == 11);
  bool any_diff = false;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    if (name == "run_config.json") continue;
    REQUIRE(fs::exists(b / name));
    CHECK(slurp(entry.path()) == slurp(b / name));
    if (fs::exists(c / name) && slurp(entry.path()) != slurp(c / name)) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("seed falls back to the environment") {
  const fs::path a = scratch("env_a"), b = scratch("env_b");
  auto args = small_synth(a, "21");
  REQUIRE(cli(args).code == 0);
  auto no_seed = small_synth(b, "0");
  no_seed.erase(no_seed.begin() + 3, no_seed.begin() + 5);
  ::setenv("COMPAD_SEED", "21", 1);
  const Run r = cli(no_seed);
  ::unsetenv("COMPAD_SEED");
  REQUIRE(r.code == 0);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
}

TEST_CASE("train writes checkpoint, metrics and config") {
  const fs::path run = trained() / "run";
  CHECK(fs::exists(run / "checkpoint.cadw"));
  const std::string csv = slurp(run / "metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  const json rc = read_json(run / "run_config.json");
  CHECK(rc["command"] == "train");
  CHECK(rc["epochs"] == 2);
  CHECK(rc["model"]["heads"] == json::array({2}));
  CHECK(rc["model"]["temporal_len"] == 16);
  const int anchors = rc["detect"]["anchor_count"];
  CHECK(anchors >= 1);
  CHECK(anchors <= 16);
  CHECK(rc["pos_weight"].size() == 3);

  // same seed, same bytes
  const fs::path again = scratch("again");
  REQUIRE(cli(small_train(trained() / "data", again)).code == 0);
  CHECK(slurp(again / "checkpoint.cadw") == slurp(run / "checkpoint.cadw"));
  CHECK(slurp(again / "metrics.csv") == csv);
}

TEST_CASE("train flags map onto the model configuration") {
  const fs::path out = scratch("flags");
  const std::vector<std::string> args{
      "train", "--dataset", (trained() / "data").string(), "--out", out.string(),
      "--hidden-dim", "6", "--scene-dim", "8", "--epochs", "1", "--temporal-len", "32",
      "--topology", "star-plus", "--agg", "scene", "--concat-last-layer", "--heads", "2,3",
      "--lambda", "4", "--protocol", "road", "--anchor-scoring", "mean"};
  REQUIRE(cli(args).code == 0);
  const json rc = read_json(out / "run_config.json");
  CHECK(rc["epochs"] == 1);
  CHECK(rc["lambda"] == 4.0);
  CHECK(rc["model"]["temporal_len"] == 32);
  CHECK(rc["model"]["topology"] == "star-plus");
  CHECK(rc["model"]["agg"] == "scene");
  CHECK(rc["model"]["concat_last_layer"] == true);
  CHECK(rc["model"]["heads"] == json::array({2, 3}));
  CHECK(rc["detect"]["protocol"] == "road");
  CHECK(rc["detect"]["anchor_scoring"] == "mean");
}

TEST_CASE("config file supplies defaults and flags override it") {
  const fs::path out = scratch("cfg");
  fs::create_directories(out);
  {
    std::ofstream os(out / "opts.toml");
    os << "[train]\nlr = 0.01\nepochs = 1\n";
  }
  auto args = small_train(trained() / "data", out / "run");
  args.erase(args.end() - 4, args.end() - 2);  // drop --epochs 2
  args.insert(args.begin(), {"--config", (out / "opts.toml").string()});
  args.insert(args.end(), {"--lr", "0.002"});
  REQUIRE(cli(args).code == 0);
  const json rc = read_json(out / "run" / "run_config.json");
  CHECK(rc["epochs"] == 1);
  CHECK(rc["lr"] == 0.002);
}

TEST_CASE("eval echoes the protocol thresholds") {
  const fs::path out = scratch("eval");
  const auto ck = (trained() / "run" / "checkpoint.cadw").string();
  const auto data = (trained() / "data").string();
  const Run r = cli({"eval", "--checkpoint", ck, "--dataset", data, "--out", out.string(),
                     "--protocol", "road"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("road | 0.1: ", 0) == 0);
  const json j = read_json(out / "eval.json");
  CHECK(j["thresholds"] == json::array({0.1, 0.2, 0.3, 0.4, 0.5}));
  const double avg = j["avg_map"];
  CHECK(avg >= 0.0);
  CHECK(avg <= 1.0);
  CHECK(slurp(out / "eval.csv").rfind("protocol,0.1,0.2,0.3,0.4,0.5,avg\n", 0) == 0);
  CHECK(read_json(out / "run_config.json")["command"] == "eval");

  const fs::path out2 = scratch("eval2");
  REQUIRE(cli({"eval", "--checkpoint", ck, "--dataset", data, "--out", out2.string(),
               "--protocol", "road"})
              .code == 0);
  CHECK(slurp(out2 / "eval.json") == slurp(out / "eval.json"));

  const fs::path out3 = scratch("eval3");
  REQUIRE(cli({"eval", "--checkpoint", ck, "--dataset", data, "--out", out3.string(),
               "--protocol", "custom", "--thresholds", "0.25,0.6"})
              .code == 0);
  CHECK(read_json(out3 / "eval.json")["thresholds"] == json::array({0.25, 0.6}));
  CHECK(cli({"eval", "--checkpoint", ck, "--dataset", data, "--out", out.string(), "--protocol",
             "custom", "--thresholds", "0.5,0.5"})
            .code == 2);
}

TEST_CASE("eval rejects a dataset the model was not trained for") {
  const fs::path other = scratch("other");
  auto args = small_synth(other, "5");
  args[std::find(args.begin(), args.end(), "--feature-dim") - args.begin() + 1] = "6";
  REQUIRE(cli(args).code == 0);
  const Run r = cli({"eval", "--checkpoint", (trained() / "run" / "checkpoint.cadw").string(),
                     "--dataset", other.string(), "--out", scratch("mismatch").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("feature dimension") != std::string::npos);
}

TEST_CASE("infer writes sorted json lines") {
  const fs::path out = scratch("infer");
  const Run r = cli({"infer", "--checkpoint", (trained() / "run" / "checkpoint.cadw").string(),
                     "--dataset", (trained() / "data").string(), "--out", out.string(),
                     "--seconds", "--fps", "24"});
  REQUIRE(r.code == 0);
  std::ifstream is(out / "detections.jsonl");
  std::string line, prev_vid;
  double prev_score = 2.0;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const json j = json::parse(line);
    const std::string vid = j["video_id"];
    const double score = j["score"];
    if (vid == prev_vid) CHECK(score <= prev_score);
    CHECK(vid >= prev_vid);
    const std::size_t s = j["start_snippet"], e = j["end_snippet"];
    CHECK(s <= e);
    // 24 frames per snippet at 24 fps
    CHECK(j["start_sec"] == static_cast<double>(s));
    CHECK(j["end_sec"] == static_cast<double>(e + 1));
    prev_vid = vid;
    prev_score = score;
    ++n;
  }
  CHECK(n > 0);
  CHECK(cli({"infer", "--checkpoint", (trained() / "run" / "checkpoint.cadw").string(),
             "--dataset", (trained() / "data").string(), "--out", out.string(), "--seconds"})
            .code == 2);
}

TEST_CASE("gradcheck passes") {
  const fs::path out = scratch("gc");
  const Run r = cli({"gradcheck", "--out", out.string(), "--seed", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(read_json(out / "run_config.json")["command"] == "gradcheck");
  CHECK(cli({"gradcheck", "--out", out.string(), "--eps", "0.1"}).code == 2);
}
