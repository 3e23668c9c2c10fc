#include "compad/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "compad/kernels.hpp"
#include "compad/training.hpp"

namespace compad::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Raised for problems that are the caller's fault (exit 2).
struct UsageError : Error {
  using Error::Error;
};

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  SynthConfig config;
  bool no_background = false;
};

struct ModelArgs {
  std::size_t hidden_dim = 32;
  std::size_t scene_dim = 32;
  std::vector<std::size_t> heads;
  std::string topology = "fully";
  std::string agg = "aggregated";
  bool concat_last_layer = false;
  double leaky_slope = 0.2;
  std::size_t temporal_len = 128;
  std::size_t kernel_size = 3;
};

struct DetectArgs {
  std::size_t anchor_count = 128;
  std::vector<std::size_t> anchor_scales;
  double nms_iou = 0.5;
  std::size_t top_k = 100;
  std::string scoring = "run-iou";
  std::string protocol = "thumos14";
  std::vector<double> thresholds;
  int threads = 1;
};

struct TrainArgs {
  std::string dataset, validation, out;
  ModelArgs model;
  DetectArgs detect;
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  std::optional<double> lambda;
  std::vector<double> pos_weight;
  double max_pos_weight = 100.0;
};

struct EvalArgs {
  std::string checkpoint, dataset, out;
  DetectArgs detect;
  // infer only
  bool seconds = false;
  double fps = 0.0;
  std::size_t snippet_len = 0;
};

struct GradArgs {
  std::string out = ".";
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double tolerance = 1e-4;
};

fs::path manifest_path(const std::string& p) {
  fs::path path(p);
  if (fs::is_directory(path)) path /= "manifest.json";
  return path;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot write {}", path.string()));
  os << text;
  if (!os) throw IoError(fmt::format("failed writing {}", path.string()));
}

void prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory {}: {}", dir, ec.message()));
}

void write_run_config(const std::string& dir, const json& j) {
  write_text(fs::path(dir) / "run_config.json", j.dump(2) + "\n");
}

// ---- option registration --------------------------------------------------------

void add_model_options(CLI::App* app, ModelArgs& m) {
  app->add_option("--hidden-dim", m.hidden_dim, "Attention layer width")->capture_default_str();
  app->add_option("--scene-dim", m.scene_dim, "Scene representation width")
      ->capture_default_str();
  app->add_option("--heads", m.heads, "Heads per attention layer (default 4,4,C,C)")
      ->delimiter(',');
  app->add_option("--topology", m.topology, "Scene graph topology {fully, star, star-plus}")
      ->capture_default_str();
  app->add_option("--agg", m.agg, "Scene aggregation {aggregated, scene}")->capture_default_str();
  app->add_flag("--concat-last-layer", m.concat_last_layer,
                "Concatenate the heads of the last attention layer");
  app->add_option("--leaky-slope", m.leaky_slope, "LeakyReLU slope")->capture_default_str();
  app->add_option("--temporal-len", m.temporal_len, "Temporal graph length N")
      ->capture_default_str();
  app->add_option("--kernel-size", m.kernel_size, "Temporal convolution width")
      ->capture_default_str();
}

void add_detect_options(CLI::App* app, DetectArgs& d) {
  app->add_option("--anchor-count", d.anchor_count, "Number of anchors")->capture_default_str();
  app->add_option("--anchor-scales", d.anchor_scales, "Anchor widths in snippets")
      ->delimiter(',');
  app->add_option("--nms-iou", d.nms_iou, "NMS IoU threshold")->capture_default_str();
  app->add_option("--top-k", d.top_k, "Segments kept per chunk")->capture_default_str();
  app->add_option("--anchor-scoring", d.scoring, "Anchor scoring {mean, run-iou}")
      ->capture_default_str();
  app->add_option("--protocol", d.protocol,
                  "Evaluation protocol {road, thumos14, activitynet13, activitynet13-full, "
                  "custom}")
      ->capture_default_str();
  app->add_option("--thresholds", d.thresholds, "IoU thresholds for --protocol custom")
      ->delimiter(',');
  app->add_option("--threads", d.threads, "Worker threads")->capture_default_str();
}

// ---- resolution -----------------------------------------------------------------

ModelConfig resolve_model(const ModelArgs& m, std::size_t feature_dim, std::size_t classes) {
  ModelConfig c;
  c.feature_dim = feature_dim;
  c.num_classes = classes;
  c.hidden_dim = m.hidden_dim;
  c.scene_dim = m.scene_dim;
  c.heads = m.heads;
  c.topology = parse_topology(m.topology);
  c.agg = parse_agg_mode(m.agg);
  c.concat_last_layer = m.concat_last_layer;
  c.leaky_slope = m.leaky_slope;
  c.temporal_len = m.temporal_len;
  c.kernel_size = m.kernel_size;
  return c;
}

EvalProtocol resolve_protocol(const DetectArgs& d) {
  EvalProtocol p;
  if (d.protocol == "custom") {
    p.name = "custom";
    p.iou_thresholds = d.thresholds;
  } else {
    if (!d.thresholds.empty()) {
      throw ConfigError("--thresholds is only valid with --protocol custom");
    }
    p = protocol_preset(d.protocol);
  }
  validate(p);
  return p;
}

DecodeOptions resolve_decode(const DetectArgs& d) {
  DecodeOptions o;
  o.nms_iou = d.nms_iou;
  o.top_k = d.top_k;
  o.scoring = parse_anchor_scoring(d.scoring);
  if (!(o.nms_iou > 0.0 && o.nms_iou <= 1.0)) throw ConfigError("--nms-iou must lie in (0, 1]");
  if (o.top_k < 1) throw ConfigError("--top-k must be >= 1");
  return o;
}

AnchorSet resolve_anchors(const DetectArgs& d, std::size_t length) {
  if (d.anchor_count < 1) throw ConfigError("--anchor-count must be >= 1");
  const auto scales = d.anchor_scales.empty() ? default_anchor_scales(length) : d.anchor_scales;
  return generate_anchors(length, scales, d.anchor_count);
}

json model_json(const ModelConfig& c) {
  return {{"feature_dim", c.feature_dim},
          {"num_classes", c.num_classes},
          {"hidden_dim", c.hidden_dim},
          {"scene_dim", c.scene_dim},
          {"heads", c.resolved_heads()},
          {"topology", to_string(c.topology)},
          {"agg", to_string(c.agg)},
          {"concat_last_layer", c.concat_last_layer},
          {"leaky_slope", c.leaky_slope},
          {"temporal_len", c.temporal_len},
          {"kernel_size", c.kernel_size}};
}

json detect_json(const AnchorSet& anchors, std::span<const std::size_t> scales,
                 const DecodeOptions& d, const EvalProtocol& p, int threads) {
  return {{"anchor_count", anchors.size()},
          {"anchor_scales", std::vector<std::size_t>(scales.begin(), scales.end())},
          {"nms_iou", d.nms_iou},
          {"top_k", d.top_k},
          {"anchor_scoring", to_string(d.scoring)},
          {"protocol", p.name},
          {"thresholds", p.iou_thresholds},
          {"threads", threads}};
}

void check_threads(int threads) {
  if (threads < 1) throw ConfigError("--threads must be >= 1");
  kernels::set_num_threads(threads);
}

// ---- commands -------------------------------------------------------------------

int cmd_synth(SynthArgs& a, std::ostream& out) {
  a.config.background = !a.no_background;
  validate(a.config);
  prepare_out_dir(a.out);
  const Dataset ds = synth_generate(a.config, a.seed);
  save_dataset(ds, fs::path(a.out) / "manifest.json");
  const SynthConfig& c = a.config;
  write_run_config(a.out, {{"command", "synth"},
                           {"seed", a.seed},
                           {"out", a.out},
                           {"videos", c.num_videos},
                           {"classes", c.num_classes},
                           {"feature_dim", c.feature_dim},
                           {"agent_classes", c.num_agent_classes},
                           {"min_snippets", c.min_snippets},
                           {"max_snippets", c.max_snippets},
                           {"min_segments", c.min_segments},
                           {"max_segments", c.max_segments},
                           {"min_segment_len", c.min_segment_len},
                           {"max_segment_len", c.max_segment_len},
                           {"min_gap", c.min_gap},
                           {"background", c.background},
                           {"separation", c.class_separation},
                           {"agent_class_signal", c.agent_class_signal},
                           {"agent_type_signal", c.agent_type_signal},
                           {"min_agents", c.min_agents},
                           {"max_agents", c.max_agents},
                           {"snippet_len", c.snippet_len}});
  out << fmt::format("wrote {} videos to {}\n", ds.videos.size(), a.out);
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  // Everything checkable without data is checked first (exit 2).
  TrainConfig tc;
  try {
    check_threads(a.detect.threads);
    tc.model = resolve_model(a.model, 1, 1);
    tc.lr = a.lr;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch_size;
    tc.seed = a.seed;
    tc.anchor_count = a.detect.anchor_count;
    tc.anchor_scales = a.detect.anchor_scales;
    tc.lambda = a.lambda;
    tc.max_pos_weight = a.max_pos_weight;
    tc.threads = a.detect.threads;
    tc.decode = resolve_decode(a.detect);
    tc.protocol = resolve_protocol(a.detect);
    validate(tc);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  const Dataset data = load_dataset(manifest_path(a.dataset));
  std::optional<Dataset> held_out;
  if (!a.validation.empty()) held_out = load_dataset(manifest_path(a.validation));
  tc.model.feature_dim = data.feature_dim;
  tc.model.num_classes = data.num_activity_classes;
  tc.snippet_len = data.snippet_len;
  tc.pos_weight = a.pos_weight;
  validate(tc);

  prepare_out_dir(a.out);
  const fs::path ckpt = fs::path(a.out) / "checkpoint.cadw";
  const auto scales = tc.resolved_anchor_scales();
  const AnchorSet anchors = tc.anchors();
  json rc = {{"command", "train"},
             {"dataset", a.dataset},
             {"validation", a.validation},
             {"out", a.out},
             {"seed", tc.seed},
             {"lr", tc.lr},
             {"epochs", tc.epochs},
             {"batch_size", tc.batch_size},
             {"snippet_len", tc.snippet_len},
             {"lambda", tc.resolved_lambda()},
             {"max_pos_weight", tc.max_pos_weight},
             {"model", model_json(tc.model)},
             {"detect", detect_json(anchors, scales, tc.decode, tc.protocol, tc.threads)}};
  write_run_config(a.out, rc);

  std::vector<EpochMetrics> history;
  TrainOptions opts;
  opts.validation = held_out ? &*held_out : nullptr;
  opts.checkpoint = ckpt;
  opts.on_epoch = [&](const EpochMetrics& m) {
    history.push_back(m);
    out << fmt::format("epoch {:>3}  loss_act {:.5f}  loss_br {:.5f}  loss {:.5f}{}\n", m.epoch,
                       m.loss_act, m.loss_br, m.loss_total,
                       m.map_avg ? fmt::format("  val_avg_map {:.4f}", *m.map_avg) : "");
    out.flush();
  };

  try {
    const TrainResult r = train(data, tc, opts);
    rc["pos_weight"] = r.pos_weight;
    write_run_config(a.out, rc);
  } catch (const DivergenceError& e) {
    write_text(fs::path(a.out) / "metrics.csv", metrics_csv(history));
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  write_text(fs::path(a.out) / "metrics.csv", metrics_csv(history));
  out << fmt::format("checkpoint: {}\n", ckpt.string());
  return kExitOk;
}

struct Loaded {
  Checkpoint model;
  Dataset data;
  AnchorSet anchors;
  std::vector<std::size_t> scales;
  DecodeOptions decode;
  EvalProtocol protocol;
};

Loaded load_for_inference(const EvalArgs& a) {
  Loaded l;
  try {
    check_threads(a.detect.threads);
    l.decode = resolve_decode(a.detect);
    l.protocol = resolve_protocol(a.detect);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  l.model = load_checkpoint(a.checkpoint);
  l.data = load_dataset(manifest_path(a.dataset));
  const ModelConfig& mc = l.model.config;
  if (l.data.feature_dim != mc.feature_dim) {
    throw ConfigError(fmt::format("dataset feature dimension {} does not match the model's {}",
                                  l.data.feature_dim, mc.feature_dim));
  }
  if (l.data.num_activity_classes != mc.num_classes) {
    throw ConfigError(fmt::format("dataset has {} activity classes, the model was trained on {}",
                                  l.data.num_activity_classes, mc.num_classes));
  }
  l.scales = a.detect.anchor_scales.empty() ? default_anchor_scales(mc.temporal_len)
                                            : a.detect.anchor_scales;
  l.anchors = resolve_anchors(a.detect, mc.temporal_len);
  return l;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Loaded l = load_for_inference(a);
  prepare_out_dir(a.out);
  write_run_config(a.out, {{"command", "eval"},
                           {"checkpoint", a.checkpoint},
                           {"dataset", a.dataset},
                           {"out", a.out},
                           {"model", model_json(l.model.config)},
                           {"detect", detect_json(l.anchors, l.scales, l.decode, l.protocol,
                                                  a.detect.threads)}});
  const auto dets = predict_dataset(l.model.params, l.model.config, l.data, l.anchors, l.decode,
                                    a.detect.threads);
  const auto gt = collect_ground_truth(l.data.videos);
  const EvalResult r = mean_ap(dets, gt, l.protocol);
  write_text(fs::path(a.out) / "eval.json",
             eval_result_json(r, l.data.activity_class_names) + "\n");
  write_text(fs::path(a.out) / "eval.csv", eval_result_csv(r));
  out << eval_result_row(r) << "\n";
  return kExitOk;
}

int cmd_infer(const EvalArgs& a, std::ostream& out) {
  if (a.seconds && !(a.fps > 0.0)) throw UsageError("--seconds requires --fps > 0");
  const Loaded l = load_for_inference(a);
  const std::size_t snippet_len = a.snippet_len ? a.snippet_len : l.data.snippet_len;
  if (a.seconds && snippet_len == 0) {
    throw UsageError("--seconds requires --snippet-len (the dataset does not record one)");
  }
  prepare_out_dir(a.out);
  write_run_config(a.out, {{"command", "infer"},
                           {"checkpoint", a.checkpoint},
                           {"dataset", a.dataset},
                           {"out", a.out},
                           {"seconds", a.seconds},
                           {"fps", a.fps},
                           {"snippet_len", snippet_len},
                           {"model", model_json(l.model.config)},
                           {"detect", detect_json(l.anchors, l.scales, l.decode, l.protocol,
                                                  a.detect.threads)}});
  auto dets = predict_dataset(l.model.params, l.model.config, l.data, l.anchors, l.decode,
                              a.detect.threads);
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& x, const Detection& y) {
    if (x.video_id != y.video_id) return x.video_id < y.video_id;
    return x.segment.score > y.segment.score;
  });

  std::string lines;
  for (const Detection& d : dets) {
    const Segment& s = d.segment;
    const auto cls = static_cast<std::size_t>(s.activity_class);
    json j = {{"video_id", d.video_id},
              {"class", s.activity_class},
              {"class_name", cls < l.data.activity_class_names.size()
                                 ? l.data.activity_class_names[cls]
                                 : std::string()},
              {"start_snippet", s.start_snippet},
              {"end_snippet", s.end_snippet},
              {"score", s.score}};
    if (a.seconds) {
      const double per = static_cast<double>(snippet_len) / a.fps;
      j["start_sec"] = static_cast<double>(s.start_snippet) * per;
      j["end_sec"] = static_cast<double>(s.end_snippet + 1) * per;
    }
    lines += j.dump() + "\n";
  }
  const fs::path path = fs::path(a.out) / "detections.jsonl";
  write_text(path, lines);
  out << fmt::format("{} detections written to {}\n", dets.size(), path.string());
  return kExitOk;
}

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
  if (!(a.eps > 1e-8 && a.eps < 1e-3)) throw UsageError("--eps must lie in (1e-8, 1e-3)");
  prepare_out_dir(a.out);
  write_run_config(a.out, {{"command", "gradcheck"},
                           {"seed", a.seed},
                           {"eps", a.eps},
                           {"tolerance", a.tolerance},
                           {"toy", {{"temporal_len", 8},
                                    {"feature_dim", 8},
                                    {"classes", 2},
                                    {"attention_layers", 1},
                                    {"heads", 2},
                                    {"anchors", 4}}}});
  const ad::GradCheckReport r = toy_grad_check(a.seed, a.eps);
  const bool ok = r.max_rel_error < a.tolerance;
  out << fmt::format("gradcheck: {} entries, max relative error {:.3e} (param {}, index {}, "
                     "analytic {:.9g}, numeric {:.9g}) -> {}\n",
                     r.entries, r.max_rel_error, r.worst_param, r.worst_index, r.analytic,
                     r.numeric, ok ? "PASS" : "FAIL");
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Complex activity detection with scene and temporal graphs", "compad"};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--seed", sa.seed, "RNG seed")->envname("COMPAD_SEED")->capture_default_str();
  synth->add_option("--videos", sa.config.num_videos)->capture_default_str();
  synth->add_option("--classes", sa.config.num_classes)->capture_default_str();
  synth->add_option("--feature-dim", sa.config.feature_dim)->capture_default_str();
  synth->add_option("--agent-classes", sa.config.num_agent_classes)->capture_default_str();
  synth->add_option("--min-snippets", sa.config.min_snippets)->capture_default_str();
  synth->add_option("--max-snippets", sa.config.max_snippets)->capture_default_str();
  synth->add_option("--min-segments", sa.config.min_segments)->capture_default_str();
  synth->add_option("--max-segments", sa.config.max_segments)->capture_default_str();
  synth->add_option("--min-segment-len", sa.config.min_segment_len)->capture_default_str();
  synth->add_option("--max-segment-len", sa.config.max_segment_len)->capture_default_str();
  synth->add_option("--min-gap", sa.config.min_gap)->capture_default_str();
  synth->add_option("--separation", sa.config.class_separation)->capture_default_str();
  synth->add_option("--min-agents", sa.config.min_agents)->capture_default_str();
  synth->add_option("--max-agents", sa.config.max_agents)->capture_default_str();
  synth->add_option("--snippet-len", sa.config.snippet_len, "Frames per snippet")
      ->capture_default_str();
  synth->add_flag("--no-background", sa.no_background, "Segments tile each video");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a model on a dataset");
  trn->add_option("--dataset", ta.dataset, "Manifest file or dataset directory")->required();
  trn->add_option("--validation", ta.validation, "Held-out dataset for per-epoch mAP");
  trn->add_option("--out", ta.out, "Output directory")->required();
  trn->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  trn->add_option("--epochs", ta.epochs)->capture_default_str();
  trn->add_option("--batch-size", ta.batch_size, "Chunks per optimizer step")
      ->capture_default_str();
  trn->add_option("--seed", ta.seed, "RNG seed")->envname("COMPAD_SEED")->capture_default_str();
  trn->add_option("--lambda", ta.lambda, "Activity loss weight (default: anchor count)");
  trn->add_option("--pos-weight", ta.pos_weight, "Per-class positive weights, C + 1 values")
      ->delimiter(',');
  trn->add_option("--max-pos-weight", ta.max_pos_weight)->capture_default_str();
  add_model_options(trn, ta.model);
  add_detect_options(trn, ta.detect);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", ea.dataset, "Manifest file or dataset directory")->required();
  ev->add_option("--out", ea.out, "Output directory")->required();
  add_detect_options(ev, ea.detect);

  EvalArgs ia;
  auto* inf = app.add_subcommand("infer", "Write detected segments as JSON lines");
  inf->add_option("--checkpoint", ia.checkpoint)->required()->check(CLI::ExistingFile);
  inf->add_option("--dataset", ia.dataset, "Manifest file or dataset directory")->required();
  inf->add_option("--out", ia.out, "Output directory")->required();
  inf->add_flag("--seconds", ia.seconds, "Also report boundaries in seconds");
  inf->add_option("--fps", ia.fps, "Frames per second for --seconds");
  inf->add_option("--snippet-len", ia.snippet_len, "Frames per snippet (default: dataset)");
  add_detect_options(inf, ia.detect);

  GradArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  gc->add_option("--out", ga.out, "Output directory")->capture_default_str();
  gc->add_option("--seed", ga.seed)->envname("COMPAD_SEED")->capture_default_str();
  gc->add_option("--eps", ga.eps)->capture_default_str();
  gc->add_option("--tolerance", ga.tolerance)->capture_default_str();

  if (args.empty()) {
    err << app.help();
    return kExitUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      try {
        return cmd_synth(sa, out);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
    }
    if (trn->parsed()) return cmd_train(ta, out, err);
    if (ev->parsed()) return cmd_eval(ea, out);
    if (inf->parsed()) return cmd_infer(ia, out);
    if (gc->parsed()) return cmd_gradcheck(ga, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace compad::cli
