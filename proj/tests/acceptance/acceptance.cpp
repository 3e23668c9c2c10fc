// Prints one PASS/FAIL line per acceptance criterion; exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "compad/cli.hpp"
#include "compad/kernels.hpp"
#include "compad/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace compad;
using compad::testing::random_tensor;
using compad::testing::random_values;
using compad::testing::uniform_index;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path g_work;

fs::path scratch(const std::string& name) {
  const fs::path p = g_work / name;
  fs::remove_all(p);
  return p;
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::cerr << "  [compad " << args.front() << "] " << e.str();
  return code;
}

Snippet random_snippet(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  Snippet s;
  s.scene_feature = random_values(d, rng);
  for (std::size_t a = 0; a < n; ++a) {
    AgentTube t;
    t.tube_id = static_cast<int>(a);
    t.agent_class = static_cast<int>(rng() % 3);
    t.feature = random_values(d, rng);
    s.agents.push_back(t);
  }
  return s;
}

SgatLayerParams random_layer(std::size_t din, std::size_t dout, std::size_t heads,
                             std::mt19937_64& rng) {
  SgatLayerParams p;
  p.w1 = random_tensor({din, dout}, rng, -1, 1);
  for (std::size_t h = 0; h < heads; ++h) p.attn.push_back(random_tensor({dout, 2}, rng, -1, 1));
  return p;
}

SgatLayerOutput run_layer(ad::Tape& t, const Tensor& x, std::span<const Edge> edges,
                          const SgatLayerParams& p, double slope) {
  SgatLayerVars v{t.constant(p.w1), {}};
  for (const auto& a : p.attn) v.attn.push_back(t.constant(a));
  return sgat_layer(t.constant(x), attention_mask(x.rows(), edges), v, slope);
}

constexpr Topology kTopologies[] = {Topology::Fully, Topology::Star, Topology::StarPlus};

// ---- 1 ----------------------------------------------------------------------------

Outcome gradient_correctness() {
  Outcome r;
  double worst = 0.0, slowest = 0.0;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto t0 = Clock::now();
    const auto rep = toy_grad_check(seed, 1e-5);
    slowest = std::max(slowest, seconds_since(t0));
    worst = std::max(worst, rep.max_rel_error);
  }
  r.pass = worst < 1e-4 && slowest < 30.0;
  r.detail = fmt::format("max relative error {:.2e} over 3 seeds, slowest run {:.2f} s", worst,
                         slowest);
  return r;
}

// ---- 2 ----------------------------------------------------------------------------

Outcome attention_normalization() {
  double sum_err = 0.0, perm_err = 0.0;
  for (std::uint64_t g = 0; g < 1000; ++g) {
    std::mt19937_64 rng(1000 + g);
    const std::size_t n = uniform_index(rng, 0, 10);
    const Topology topo = kTopologies[g % 3];
    const Snippet s = random_snippet(n, 6, rng);
    const SceneGraph graph = build_scene_graph(s, topo);

    ad::Tape t;
    const auto p = random_layer(6, 5, uniform_index(rng, 1, 4), rng);
    const auto out = run_layer(t, graph.node_features, graph.edges, p, 0.2);
    for (const auto& alpha : out.attention) {
      const Tensor& a = alpha.value();
      for (std::size_t i = 0; i <= n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j <= n; ++j) row += a(i, j);
        sum_err = std::max(sum_err, std::abs(row - 1.0));
      }
    }

    const SgatStackParams stack =
        init_sgat({.in_dim = 6, .hidden_dim = 5, .scene_dim = 4, .heads = {2, 3}}, rng);
    Snippet shuffled = s;
    std::shuffle(shuffled.agents.begin(), shuffled.agents.end(), rng);
    perm_err = std::max(perm_err, max_abs_diff(sgat_forward(graph, stack),
                                               sgat_forward(build_scene_graph(shuffled, topo),
                                                            stack)));
  }
  Outcome r;
  r.pass = sum_err <= 1e-12 && perm_err <= 1e-12;
  r.detail = fmt::format("1000 graphs: max |row sum - 1| {:.1e}, max permutation drift {:.1e}",
                         sum_err, perm_err);
  return r;
}

// ---- 3 ----------------------------------------------------------------------------

Outcome oracle_equivalences() {
  double sgat_err = 0.0, decode_err = 0.0, ap_err = 0.0;
  std::size_t conv_bad = 0, iou_bad = 0, match_bad = 0, decode_bad = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);

    // attention layer
    {
      const std::size_t n = uniform_index(rng, 0, 9);
      const Topology topo = kTopologies[seed % 3];
      const Snippet s = random_snippet(n, 5, rng);
      const SceneGraph graph = build_scene_graph(s, topo);
      const auto p = random_layer(5, 4, uniform_index(rng, 1, 4), rng);
      const double slope = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
      ad::Tape t;
      const Tensor got = run_layer(t, graph.node_features, graph.edges, p, slope).features.value();
      const Tensor ref = oracle::dense_sgat_layer(graph.node_features, graph.edges, p, slope);
      sgat_err = std::max(sgat_err, max_abs_diff(got.data(), ref.data()));
    }

    // convolution, serial and parallel
    {
      kernels::Conv1d g;
      g.c_in = uniform_index(rng, 1, 4);
      g.c_out = uniform_index(rng, 1, 4);
      g.kernel = uniform_index(rng, 1, 5);
      g.length = uniform_index(rng, g.kernel, 20);
      g.stride = uniform_index(rng, 1, 2);
      g.padding = uniform_index(rng, 0, g.kernel / 2);
      const auto x = random_values(g.c_in * g.length, rng);
      const auto w = random_values(g.c_out * g.c_in * g.kernel, rng);
      const auto ref = oracle::conv1d_loops(g, x, w);
      std::vector<double> ys(ref.size()), yp(ref.size());
      kernels::conv1d_serial(g, x, w, ys);
      kernels::conv1d_parallel(g, x, w, yp);
      conv_bad += ys != ref || yp != ref;
    }

    // temporal IoU
    for (int k = 0; k < 10; ++k) {
      const std::size_t a0 = uniform_index(rng, 0, 30), b0 = uniform_index(rng, 0, 30);
      const Interval a{a0, uniform_index(rng, a0, 40)}, b{b0, uniform_index(rng, b0, 40)};
      iou_bad += temporal_iou(a, b) != oracle::iou_count(a, b);
    }

    // anchor matching and decoding on at most 10 anchors
    const std::size_t len = uniform_index(rng, 4, 24);
    AnchorSet anchors;
    anchors.length = len;
    const std::size_t count = uniform_index(rng, 1, 10);
    while (anchors.windows.size() < count) {
      const std::size_t s = uniform_index(rng, 0, len - 1);
      const Interval w{s, uniform_index(rng, s, len - 1)};
      if (std::find(anchors.windows.begin(), anchors.windows.end(), w) == anchors.windows.end()) {
        anchors.windows.push_back(w);
      }
    }
    {
      std::vector<GroundTruthSegment> gt;
      const std::size_t ng = uniform_index(rng, 0, 3);
      for (std::size_t k = 0; k < ng; ++k) {
        const std::size_t s = uniform_index(rng, 0, len - 1);
        gt.push_back({static_cast<int>(rng() % 2), s, uniform_index(rng, s, len - 1)});
      }
      const auto got = match_anchors(anchors, gt);
      const auto ref = oracle::match_oracle(anchors, gt);
      match_bad += got.best_anchor != ref.best_anchor || got.max_iou != ref.max_iou ||
                   got.label != ref.label || got.boundary_target != ref.boundary_target;
    }
    {
      const std::size_t valid = uniform_index(rng, 1, len);
      // one class so there are at most 10 candidates
      const Tensor cls = random_tensor({len, 2}, rng, 0, 1);
      auto br = random_values(len, rng, 0, 1);
      for (double& v : br) v = v < 0.4 ? v : 0.5 + v / 2;
      const DecodeOptions o{.nms_iou = std::uniform_real_distribution<double>(0.1, 0.9)(rng),
                            .top_k = uniform_index(rng, 1, 10),
                            .scoring = seed % 2 ? AnchorScoring::Mean : AnchorScoring::RunIou};
      const auto got = decode(cls, br, anchors, valid, o);
      const auto ref = oracle::decode_oracle(cls, br, anchors, valid, o);
      if (got.size() != ref.size()) {
        ++decode_bad;
      } else {
        for (std::size_t k = 0; k < got.size(); ++k) {
          decode_bad += got[k].interval() != ref[k].interval() ||
                        got[k].activity_class != ref[k].activity_class;
          decode_err = std::max(decode_err, std::abs(got[k].score - ref[k].score));
        }
      }
    }

    // average precision on at most 10 predictions
    {
      const char* vids[] = {"a", "b"};
      std::vector<GroundTruthInstance> gts;
      std::vector<Detection> preds;
      const std::size_t ng = uniform_index(rng, 1, 5), np = uniform_index(rng, 0, 10);
      for (std::size_t k = 0; k < ng; ++k) {
        const std::size_t s = uniform_index(rng, 0, 20);
        gts.push_back({vids[rng() % 2], 0, {s, s + uniform_index(rng, 0, 8)}});
      }
      for (std::size_t k = 0; k < np; ++k) {
        const std::size_t s = uniform_index(rng, 0, 20);
        const double score = static_cast<double>(uniform_index(rng, 1, 5)) / 5.0;
        preds.push_back({vids[rng() % 2], {0, s, s + uniform_index(rng, 0, 8), score}});
      }
      for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        ap_err = std::max(ap_err, std::abs(average_precision(preds, gts, 0, tau) -
                                           oracle::ap_oracle(preds, gts, 0, tau)));
      }
    }
  }
  Outcome r;
  r.pass = sgat_err <= 1e-12 && conv_bad == 0 && iou_bad == 0 && match_bad == 0 &&
           decode_bad == 0 && decode_err <= 1e-12 && ap_err <= 1e-12;
  r.detail = fmt::format(
      "200 seeds: sgat {:.1e}, conv mismatches {}, iou mismatches {}, match mismatches {}, "
      "decode mismatches {} (score {:.1e}), AP {:.1e}",
      sgat_err, conv_bad, iou_bad, match_bad, decode_bad, decode_err, ap_err);
  return r;
}

// ---- 4 ----------------------------------------------------------------------------

Outcome learnability() {
  SynthConfig sc;  // 3 classes, D = 64, segments 10-40, separation 3.0
  sc.num_videos = 25;
  const Dataset all = synth_generate(sc, 7);
  Dataset train_set = all, held_out = all;
  train_set.videos.assign(all.videos.begin(), all.videos.begin() + 20);
  held_out.videos.assign(all.videos.begin() + 20, all.videos.end());

  TrainConfig c;
  c.model.feature_dim = all.feature_dim;
  c.model.num_classes = all.num_activity_classes;
  c.model.temporal_len = 128;
  c.model.heads = {4};
  c.model.hidden_dim = 64;
  c.model.scene_dim = 64;
  c.anchor_scales = {10, 12, 14, 16, 20, 24, 28, 32, 40};
  c.lr = 3e-3;
  c.epochs = 50;
  c.seed = 1;
  c.threads = 1;
  kernels::set_num_threads(1);

  const auto t0 = Clock::now();
  const TrainResult res = train(train_set, c);
  const double elapsed = seconds_since(t0);
  const auto anchors = c.anchors();
  auto score = [&](const Dataset& d) {
    const auto dets = predict_dataset(res.params, c.model, d, anchors, c.decode, 1);
    return mean_ap(dets, collect_ground_truth(d.videos), protocol_preset("thumos14"));
  };
  const EvalResult tr = score(train_set), te = score(held_out);
  std::cout << "  train    " << eval_result_row(tr) << "\n";
  std::cout << "  held-out " << eval_result_row(te) << "\n";
  Outcome r;
  r.pass = tr.avg_map >= 0.90 && te.avg_map >= 0.60 && elapsed < 600.0;
  r.detail = fmt::format("avg mAP train {:.3f} (>= 0.90), held-out {:.3f} (>= 0.60), {} epochs "
                         "in {:.0f} s single-threaded",
                         tr.avg_map, te.avg_map, c.epochs, elapsed);
  return r;
}

// ---- 5 ----------------------------------------------------------------------------

std::vector<std::string> ablation_synth(const fs::path& out, std::size_t snippet_len) {
  return {"synth", "--out", out.string(), "--seed", "17", "--videos", "6", "--feature-dim",
          "16", "--min-snippets", "40", "--max-snippets", "64", "--min-segment-len", "6",
          "--max-segment-len", "16", "--snippet-len", std::to_string(snippet_len)};
}

// Trains briefly and evaluates; returns the average mAP or NaN on failure.
double ablation_run(const fs::path& data, const fs::path& dir, std::vector<std::string> flags) {
  std::vector<std::string> args{"train", "--dataset", data.string(), "--out",
                                (dir / "train").string(), "--epochs", "2", "--hidden-dim", "8",
                                "--scene-dim", "8", "--heads", "2,2", "--seed", "1"};
  args.insert(args.end(), flags.begin(), flags.end());
  if (cli(args) != 0) return NAN;
  if (cli({"eval", "--checkpoint", (dir / "train" / "checkpoint.cadw").string(), "--dataset",
           data.string(), "--out", (dir / "eval").string()}) != 0) {
    return NAN;
  }
  return json::parse(slurp(dir / "eval" / "eval.json"))["avg_map"].get<double>();
}

Outcome ablation_axes() {
  const fs::path root = scratch("ablation");
  std::size_t runs = 0, done = 0;
  auto record = [&](double v) {
    ++runs;
    done += std::isfinite(v);
    return std::isfinite(v) ? fmt::format("{:.4f}", v) : std::string("failed");
  };

  const fs::path base = root / "data24";
  if (cli(ablation_synth(base, 24)) != 0) return {false, "synth failed"};

  std::cout << "  topology x aggregation (avg mAP, thumos14)\n";
  std::cout << fmt::format("  {:<10} {:>10} {:>10}\n", "topology", "aggregated", "scene");
  for (const char* topo : {"fully", "star", "star-plus"}) {
    std::string row = fmt::format("  {:<10}", topo);
    for (const char* agg : {"aggregated", "scene"}) {
      const double v = ablation_run(base, root / fmt::format("{}_{}", topo, agg),
                                    {"--topology", topo, "--agg", agg});
      row += fmt::format(" {:>10}", record(v));
    }
    std::cout << row << "\n";
  }

  std::cout << "  snippet length\n";
  for (std::size_t sl : {12, 18, 24, 30}) {
    const fs::path data = root / fmt::format("snip{}", sl);
    double v = NAN;
    if (cli(ablation_synth(data, sl)) == 0) v = ablation_run(data, root / fmt::format("s{}", sl), {});
    std::cout << fmt::format("  {:<10} {:>10}\n", sl, record(v));
  }

  std::cout << "  temporal length N\n";
  for (std::size_t n : {128, 256, 512, 1024}) {
    const double v = ablation_run(base, root / fmt::format("n{}", n),
                                  {"--temporal-len", std::to_string(n)});
    std::cout << fmt::format("  {:<10} {:>10}\n", n, record(v));
  }
  return {done == runs && runs == 14, fmt::format("{} of {} configurations completed", done, runs)};
}

// ---- 6 ----------------------------------------------------------------------------

Outcome determinism_and_formats() {
  const fs::path root = scratch("determinism");
  std::vector<std::string> problems;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };
  for (const char* k : {"a", "b"}) {
    const fs::path d = root / k;
    expect(cli({"synth", "--out", (d / "data").string(), "--seed", "42", "--videos", "5",
                "--feature-dim", "16", "--min-snippets", "30", "--max-snippets", "50",
                "--min-segment-len", "5", "--max-segment-len", "12"}) == 0,
           "synth");
    expect(cli({"train", "--dataset", (d / "data").string(), "--out", (d / "run").string(),
                "--epochs", "2", "--hidden-dim", "8", "--scene-dim", "8", "--heads", "2",
                "--temporal-len", "64", "--seed", "42"}) == 0,
           "train");
    expect(cli({"eval", "--checkpoint", (d / "run" / "checkpoint.cadw").string(), "--dataset",
                (d / "data").string(), "--out", (d / "eval").string()}) == 0,
           "eval");
  }
  if (!problems.empty()) return {false, "command failed: " + problems.front()};

  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "run_config.json") continue;
    const fs::path twin = root / "b" / fs::relative(e.path(), root / "a");
    expect(slurp(e.path()) == slurp(twin), "bytes differ: " + twin.filename().string());
    ++compared;
  }

  // round trips
  const Dataset ds = load_dataset(root / "a" / "data" / "manifest.json");
  save_dataset(ds, root / "rt" / "data" / "manifest.json");
  const Dataset again = load_dataset(root / "rt" / "data" / "manifest.json");
  expect(again == ds, "dataset round trip");
  for (const auto& e : fs::directory_iterator(root / "a" / "data")) {
    if (e.path().extension() == ".cadf") {
      expect(slurp(e.path()) == slurp(root / "rt" / "data" / e.path().filename()),
             "CADF bytes after round trip");
    }
  }
  const fs::path ck = root / "a" / "run" / "checkpoint.cadw";
  const Checkpoint loaded = load_checkpoint(ck);
  save_checkpoint(root / "rt" / "checkpoint.cadw", loaded.params, loaded.config);
  expect(slurp(ck) == slurp(root / "rt" / "checkpoint.cadw"), "checkpoint round trip");

  Outcome r;
  r.pass = problems.empty();
  r.detail = r.pass ? fmt::format("{} output files byte-identical across two seeded runs; "
                                  "dataset and checkpoint round-trip exactly",
                                  compared)
                    : problems.front();
  return r;
}

// ---- 7 ----------------------------------------------------------------------------

Outcome loss_algebra() {
  double bce_err = 0.0, lin_err = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t rows = uniform_index(rng, 1, 12), cols = uniform_index(rng, 1, 5);
    const Tensor x = random_tensor({rows, cols}, rng, -30, 30);
    Tensor y(Shape{rows, cols});
    for (double& v : y.data()) v = static_cast<double>(rng() % 2);
    double ref = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      ref += std::max(x[i], 0.0) - x[i] * y[i] + std::log1p(std::exp(-std::abs(x[i])));
    }
    ref /= static_cast<double>(x.size());
    ad::Tape t;
    const double got =
        activity_loss(t.constant(x), y, std::vector<double>(cols, 1.0), nullptr, rows)
            .value()
            .item();
    bce_err = std::max(bce_err, std::abs(got - ref));
  }

  SynthConfig sc;
  sc.num_videos = 3;
  sc.num_classes = 2;
  sc.feature_dim = 8;
  sc.min_snippets = 20;
  sc.max_snippets = 30;
  sc.min_segment_len = 3;
  sc.max_segment_len = 8;
  const Dataset ds = synth_generate(sc, 5);
  TrainConfig c;
  c.model.feature_dim = 8;
  c.model.num_classes = 2;
  c.model.hidden_dim = 6;
  c.model.scene_dim = 8;
  c.model.heads = {2, 2};
  c.model.temporal_len = 32;
  const auto anchors = c.anchors();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ModelParams params = init_model(c.model, seed);
    const auto chunk = chunk_video(ds.videos[seed], c.model.temporal_len).front().sample;
    const auto targets = chunk_targets(chunk, anchors, c.model.num_classes);
    const std::vector<double> pw{2.0, 1.5, 1.0};
    const double lambda = 128.0;
    auto grads_of = [&](int which) {
      ad::Tape t;
      const auto vars = bind(t, params, true);
      const auto l = chunk_loss(t, vars, chunk, targets, c.model, pw, lambda);
      t.backward(which == 0 ? l.total : which == 1 ? l.act : l.br);
      std::vector<Tensor> g;
      for (const auto& v : vars.all) g.push_back(t.grad(v));
      return g;
    };
    const auto total = grads_of(0), act = grads_of(1), br = grads_of(2);
    for (std::size_t k = 0; k < total.size(); ++k) {
      for (std::size_t i = 0; i < total[k].size(); ++i) {
        const double expect = lambda * act[k][i] + br[k][i];
        lin_err = std::max(lin_err, std::abs(total[k][i] - expect) / std::max(1.0, std::abs(expect)));
      }
    }
  }

  const TrainConfig defaults;
  const bool lambda_ok = defaults.anchor_count == 128 && defaults.resolved_lambda() == 128.0;
  Outcome r;
  r.pass = bce_err <= 1e-12 && lin_err <= 1e-10 && lambda_ok;
  r.detail = fmt::format("BCE difference {:.1e}, gradient linearity {:.1e}, default lambda {} "
                         "(anchor count {})",
                         bce_err, lin_err, defaults.resolved_lambda(), defaults.anchor_count);
  return r;
}

// ---- 8 ----------------------------------------------------------------------------

Outcome protocol_presets() {
  const fs::path root = scratch("presets");
  if (cli({"synth", "--out", (root / "data").string(), "--seed", "3", "--videos", "3",
           "--feature-dim", "8", "--min-snippets", "20", "--max-snippets", "30",
           "--min-segment-len", "3", "--max-segment-len", "8"}) != 0 ||
      cli({"train", "--dataset", (root / "data").string(), "--out", (root / "run").string(),
           "--epochs", "1", "--hidden-dim", "6", "--scene-dim", "8", "--heads", "2",
           "--temporal-len", "32"}) != 0) {
    return {false, "setup failed"};
  }
  const std::map<std::string, std::vector<double>> expected{
      {"road", {0.1, 0.2, 0.3, 0.4, 0.5}},
      {"thumos14", {0.3, 0.4, 0.5, 0.6, 0.7}},
      {"activitynet13", {0.5, 0.75, 0.95}}};
  std::vector<std::string> seen;
  bool ok = true;
  for (const auto& [name, list] : expected) {
    const fs::path out = root / name;
    std::string row;
    if (cli({"eval", "--checkpoint", (root / "run" / "checkpoint.cadw").string(), "--dataset",
             (root / "data").string(), "--out", out.string(), "--protocol", name},
            &row) != 0) {
      return {false, "eval failed for " + name};
    }
    const json j = json::parse(slurp(out / "eval.json"));
    const json rc = json::parse(slurp(out / "run_config.json"));
    const auto got = j["thresholds"].get<std::vector<double>>();
    ok = ok && got == list && rc["detect"]["thresholds"].get<std::vector<double>>() == list &&
         j["protocol"] == name && j["map"].size() == list.size();
    seen.push_back(fmt::format("{} {}", name, j["thresholds"].dump()));
    std::cout << "  " << row;
  }
  return {ok, fmt::format("{}", fmt::join(seen, "; "))};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "compad_acceptance").string();
  app.add_option("--criterion", only, "Run only these criteria (1-8)")->delimiter(',');
  app.add_option("--work-dir", work, "Scratch directory")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  g_work = work;
  fs::create_directories(g_work);
  kernels::set_num_threads(1);

  const std::vector<Criterion> criteria{
      {1, "gradient correctness", gradient_correctness},
      {2, "attention normalization", attention_normalization},
      {3, "oracle equivalences", oracle_equivalences},
      {4, "end-to-end learnability", learnability},
      {5, "ablation axes", ablation_axes},
      {6, "determinism and formats", determinism_and_formats},
      {7, "loss algebra", loss_algebra},
      {8, "protocol presets", protocol_presets},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("{} C{} {}: {} [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                             o.detail, seconds_since(t0))
              << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
