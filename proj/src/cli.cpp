#include "kpn/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

#include "kpn/checkpoint.hpp"
#include "kpn/config.hpp"
#include "kpn/image_io.hpp"
#include "kpn/report.hpp"

namespace kpn {
namespace fs = std::filesystem;
namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c, const std::string& default_out) {
  c.out = default_out;
  sub->add_option("--config", c.config, "flat key = value config file")->check(CLI::ExistingFile);
  c.seed_opt = sub->add_option("--seed", c.seed, "run seed (overrides the config's seed)");
  sub->add_option("--out", c.out, "output directory")->capture_default_str();
  sub->add_option("--set", c.sets, "config override key=value (repeatable)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) apply_config_file(cfg, c.config);
  apply_overrides(cfg, c.sets);
  if (c.seed_opt->count() > 0) cfg.set("seed", std::to_string(c.seed));
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void persist_config(const RunConfig& cfg, const fs::path& out) { write_resolved_config(cfg, out / "config.txt"); }

/// Checkpoint model, after checking explicitly configured model keys
/// against its manifest.
Model<float> load_for_inference(const RunConfig& cfg, const fs::path& dir) {
  const Manifest m = read_manifest(CheckpointPaths{dir}.manifest());
  RunConfig recorded;
  recorded.model = model_config_from(m);
  for (const std::string& key : cfg.assigned) {
    if (key.rfind("model.", 0) != 0) continue;
    if (cfg.get(key) != recorded.get(key)) {
      throw std::runtime_error("checkpoint " + dir.string() + " has " + key + " = " + recorded.get(key) +
                               " but the config asks for " + cfg.get(key));
    }
  }
  Model<float> model = load_model<float>(dir);
  model.set_training(false);
  return model;
}

std::vector<Sequence> training_sequences(const RunConfig& cfg) {
  std::vector<Sequence> seqs;
  if (!cfg.data.path.empty()) seqs = load_folder_dataset(cfg.data.path);
  if (cfg.data.synth_count > 0) {
    SynthConfig sc = cfg.synth;
    sc.length = cfg.data.synth_length;
    auto synth = synth_sequences(sc, cfg.data.synth_count, cfg.data.synth_seed, "train");
    seqs.insert(seqs.end(), std::make_move_iterator(synth.begin()), std::make_move_iterator(synth.end()));
  }
  return seqs;
}

/// Sequences for eval/sweep: a folder dataset, or `synth` generated ones
/// seeded from the run seed.
std::vector<Sequence> test_sequences(const RunConfig& cfg, const std::string& dataset, int synth) {
  if (!dataset.empty() && synth > 0) throw UsageError("use either --dataset or --synth, not both");
  if (dataset.empty() && synth <= 0) throw UsageError("need --dataset DIR or --synth N");
  std::vector<Sequence> seqs =
      dataset.empty() ? synth_sequences(cfg.synth, synth, cfg.seed, "test") : load_folder_dataset(dataset);
  if (seqs.empty()) throw std::runtime_error("dataset " + dataset + " holds no sequences");
  return seqs;
}

std::string frame_name(std::size_t f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.png", f + 1);
  return buf;
}

std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size());
  double s = 0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    s += v[k];
    if (k >= window) s -= v[k - window];
    out[k] = s / static_cast<double>(std::min(k + 1, window));
  }
  return out;
}

int cmd_synth(const Common& c, int count, std::ostream& out) {
  const RunConfig cfg = resolve(c);
  if (count < 1) throw UsageError("--count must be >= 1");
  const fs::path root = c.out;
  for (const Sequence& seq : synth_sequences(cfg.synth, count, cfg.seed, "synth")) {
    export_sequence(seq, root);
    out << root / seq.name << '\n';
  }
  persist_config(cfg, root);
  return kExitOk;
}

int cmd_train(const Common& c, std::ostream& out) {
  const RunConfig cfg = resolve(c);
  if (cfg.data.path.empty() && cfg.data.synth_count == 0) {
    throw UsageError("training needs data.path or data.synth_count > 0");
  }
  const fs::path dir = c.out;
  fs::create_directories(dir);
  persist_config(cfg, dir);
  const std::vector<Sequence> seqs = training_sequences(cfg);
  if (seqs.empty()) throw std::runtime_error("no training sequences in " + cfg.data.path);
  out << "training on " << seqs.size() << " sequences, " << cfg.train.epochs << " epochs x "
      << cfg.train.steps_per_epoch() << " steps\n";

  PairSampler sampler(seqs, cfg.aug);
  Model<float> model(cfg.model, cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const auto t0 = std::chrono::steady_clock::now();
  double epoch_loss = 0;
  int epoch_steps = 0;
  const TrainResult result = train(
      model, tc, [&](Rng& rng) { return sampler.sample(rng); }, TrainOutputs{dir, cfg.checkpoint_every_epoch},
      [&](const StepRecord& rec) {
        epoch_loss += rec.loss.total;
        if (++epoch_steps == tc.steps_per_epoch()) {
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          char line[160];
          std::snprintf(line, sizeof line, "epoch %d/%d  lr %.5f/%.5f  loss %.4f  (%.0fs)\n", rec.epoch, tc.epochs,
                        rec.lr.head, rec.lr.backbone, epoch_loss / epoch_steps, secs);
          out << line << std::flush;
          epoch_loss = 0;
          epoch_steps = 0;
        }
      });

  std::vector<double> steps, total;
  for (const StepRecord& r : result.log) {
    steps.push_back(static_cast<double>(r.step));
    total.push_back(r.loss.total);
  }
  plot_lines(dir / "loss.png", "Training loss", "step", steps,
             {{"total", total}, {"moving avg", moving_average(total, 50)}});
  out << "checkpoint: " << (dir / "checkpoint").string() << '\n';
  return kExitOk;
}

int cmd_track(const Common& c, const std::string& checkpoint, const std::string& sequence, bool viz,
              bool heatmaps, std::ostream& out) {
  const RunConfig cfg = resolve(c);
  Model<float> model = load_for_inference(cfg, checkpoint);
  const Sequence seq = load_sequence_folder(sequence);
  if (seq.frames.empty()) throw std::runtime_error("sequence " + sequence + " has no frames");
  const fs::path dir = c.out;
  fs::create_directories(dir);
  persist_config(cfg, dir);

  KpnTracker tracker(model, cfg.track);
  tracker.set_keep_debug(heatmaps);
  Trajectory traj;
  for (std::size_t f = 0; f < seq.size(); ++f) {
    if (f == 0) {
      if (!seq.boxes[0]) throw std::runtime_error("sequence " + sequence + " lacks a first-frame box");
      tracker.init(seq.frames[0], *seq.boxes[0]);
      traj.push_back(*seq.boxes[0]);
    } else {
      traj.push_back(tracker.update(seq.frames[f]).box);
    }
    if (!viz && !heatmaps) continue;
    Image frame = seq.frames[f];
    if (seq.boxes[f]) draw_box(frame, *seq.boxes[f], kTruthColor);
    draw_box(frame, traj.back(), kPredColor, 2);
    std::vector<Image> row{frame};
    if (heatmaps) {
      const int side = frame.height();
      for (int s = 0; s < model.config().n_stages; ++s) {
        row.push_back(f == 0 ? Image(3, side, side)
                             : heatmap_image(tracker.last_debug().stage_maps[static_cast<std::size_t>(s)], side));
      }
    }
    save_image(dir / "frames" / frame_name(f), hstack(row));
  }
  write_trajectory(dir / "trajectory.txt", traj);
  out << (dir / "trajectory.txt").string() << '\n';
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& dataset, int synth,
             std::string protocol, bool oracle, std::ostream& out) {
  RunConfig cfg = resolve(c);
  if (!protocol.empty()) cfg.set("eval.protocol", protocol);
  if (cfg.eval.protocol != "ope" && cfg.eval.protocol != "restart") {
    throw UsageError("--protocol must be ope or restart");
  }
  if (!oracle && checkpoint.empty()) throw UsageError("need --checkpoint DIR (or --oracle)");
  std::unique_ptr<Model<float>> model;
  if (!oracle) model = std::make_unique<Model<float>>(load_for_inference(cfg, checkpoint));
  const std::vector<Sequence> seqs = test_sequences(cfg, dataset, synth);
  const fs::path dir = c.out;
  fs::create_directories(dir);
  persist_config(cfg, dir);

  auto make_tracker = [&](const Sequence& seq) -> std::unique_ptr<Tracker> {
    if (oracle) return std::make_unique<ReplayTracker>(seq, seq.boxes);
    return std::make_unique<KpnTracker>(*model, cfg.track);
  };
  const bool restart = cfg.eval.protocol == "restart";
  std::vector<OpeResult> ope;
  int failures = 0;
  double accuracy = 0;
  std::ofstream table(dir / "sequences.csv");
  table << "sequence,frames,precision_at_20,auc,mean_iou" << (restart ? ",failures,accuracy" : "") << '\n';
  for (const Sequence& seq : seqs) {
    auto tracker = make_tracker(seq);
    const Trajectory traj = run_ope(*tracker, seq);
    ope.push_back(ope_metrics(traj, seq.boxes));
    write_trajectory(dir / "trajectories" / (seq.name + ".txt"), traj);
    write_frame_csv(dir / "frames" / (seq.name + ".csv"), ope.back());
    table << seq.name << ',' << seq.size() << ',' << ope.back().precision_at_20 << ',' << ope.back().auc << ','
          << ope.back().mean_iou;
    if (restart) {
      auto rt = make_tracker(seq);
      const RestartResult rr = run_restart(*rt, seq, cfg.eval.restart);
      failures += rr.failures;
      accuracy += rr.accuracy / static_cast<double>(seqs.size());
      write_frame_csv(dir / "frames" / (seq.name + "_restart.csv"), rr, seq.boxes, traj);
      table << ',' << rr.failures << ',' << rr.accuracy;
    }
    table << '\n';
  }
  const OpeResult avg = average_ope(ope);
  std::vector<SummaryValue> values{{"sequences", static_cast<double>(seqs.size())},
                                   {"precision_at_20", avg.precision_at_20},
                                   {"auc", avg.auc},
                                   {"mean_iou", avg.mean_iou}};
  if (restart) {
    values.push_back({"failures", static_cast<double>(failures)});
    values.push_back({"failures_per_sequence", failures / static_cast<double>(seqs.size())});
    values.push_back({"accuracy", accuracy});
  }
  write_summary(dir / "summary.json", values, {{"protocol", cfg.eval.protocol}});
  plot_ope_curves(dir, {{oracle ? "oracle" : "kpntrack", avg}});
  for (const auto& [k, v] : values) out << k << ' ' << v << '\n';
  return kExitOk;
}

int cmd_sweep(const Common& c, const std::string& checkpoint, const std::string& dataset, int synth,
              std::ostream& out) {
  const RunConfig cfg = resolve(c);
  Model<float> model = load_for_inference(cfg, checkpoint);
  const std::vector<Sequence> seqs = test_sequences(cfg, dataset, synth);
  const fs::path dir = c.out;
  fs::create_directories(dir);
  persist_config(cfg, dir);

  const SweepResult res = grid_search(model, seqs, cfg.track, cfg.eval.sweep_levels == 2);
  std::ofstream table(dir / "sweep.csv");
  table << "level,penalty_k,window_influence,size_lr,score\n" << std::setprecision(10);
  for (const SweepRow& r : res.table) {
    table << r.level << ',' << r.point.penalty_k << ',' << r.point.window_influence << ',' << r.point.size_lr << ','
          << r.score << '\n';
  }
  RunConfig best;
  best.track = res.best;
  std::ofstream hyper(dir / "best.cfg");
  hyper << "# mean OPE auc " << res.best_score << '\n';
  for (const char* key : {"track.penalty_k", "track.window_influence", "track.size_lr"}) {
    hyper << key << " = " << best.get(key) << '\n';
    out << key << " = " << best.get(key) << '\n';
  }
  out << "auc " << res.best_score << '\n';
  return kExitOk;
}

std::vector<std::size_t> parse_frames(const std::string& text, std::size_t length) {
  std::vector<std::size_t> frames;
  if (text.empty()) {
    for (int k = 1; k <= 4; ++k) frames.push_back(std::max<std::size_t>(1, (length - 1) * k / 4));
    return frames;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t f = 0;
    try {
      f = std::stoul(item);
    } catch (const std::exception&) {
      throw UsageError("--frames expects comma-separated frame numbers, got '" + item + "'");
    }
    if (f < 2 || f > length) throw UsageError("--frames entries must lie in 2.." + std::to_string(length));
    frames.push_back(f - 1);
  }
  return frames;
}

int cmd_viz(const Common& c, const std::string& checkpoint, const std::string& sequence, const std::string& frames,
            bool labels, const std::string& metrics, std::ostream& out) {
  const RunConfig cfg = resolve(c);
  if (metrics.empty() && (checkpoint.empty() || sequence.empty())) {
    throw UsageError("viz needs --checkpoint and --sequence, or --metrics");
  }
  const fs::path dir = c.out;
  fs::create_directories(dir);
  persist_config(cfg, dir);

  if (!metrics.empty()) {
    std::ifstream in(metrics);
    if (!in) throw std::runtime_error("cannot open " + metrics);
    std::string line;
    std::getline(in, line);
    std::vector<std::string> columns;
    std::stringstream hs(line);
    for (std::string col; std::getline(hs, col, ',');) columns.push_back(col);
    std::vector<double> x;
    std::vector<Series> series;
    for (std::size_t k = 4; k < columns.size(); ++k) series.push_back({columns[k], {}});
    while (std::getline(in, line)) {
      std::stringstream ls(line);
      std::string cell;
      for (std::size_t k = 0; std::getline(ls, cell, ','); ++k) {
        if (k == 0) x.push_back(std::stod(cell));
        if (k >= 4 && k - 4 < series.size()) series[k - 4].y.push_back(std::stod(cell));
      }
    }
    for (Series& s : series) s.y = moving_average(s.y, 50);
    plot_lines(dir / "loss.png", "Training loss (moving average)", "step", x, series);
    out << (dir / "loss.png").string() << '\n';
  }
  if (checkpoint.empty()) return kExitOk;

  Model<float> model = load_for_inference(cfg, checkpoint);
  const LabelConfig label_cfg = label_config_from(read_manifest(CheckpointPaths{checkpoint}.manifest()));
  const Sequence seq = load_sequence_folder(sequence);
  if (seq.size() < 2) throw std::runtime_error("sequence " + sequence + " needs at least 2 frames");
  const std::vector<std::size_t> chosen = parse_frames(frames, seq.size());

  KpnTracker tracker(model, cfg.track);
  tracker.set_keep_debug(true);
  if (!seq.boxes[0]) throw std::runtime_error("sequence " + sequence + " lacks a first-frame box");
  tracker.init(seq.frames[0], *seq.boxes[0]);
  std::vector<Image> rows;
  for (std::size_t f = 1; f <= *std::max_element(chosen.begin(), chosen.end()); ++f) {
    const BoundingBox pred = tracker.update(seq.frames[f]).box;
    if (std::find(chosen.begin(), chosen.end(), f) == chosen.end()) continue;
    const TrackDebug& dbg = tracker.last_debug();
    Image crop = crop_and_resize(seq.frames[f], dbg.search_window);
    const int side = crop.height();
    if (seq.boxes[f]) draw_box(crop, dbg.search_window.to_crop(*seq.boxes[f]), kTruthColor);
    draw_box(crop, dbg.search_window.to_crop(pred), kPredColor, 2);
    std::vector<Image> row{crop};
    for (const PredictionMaps& maps : dbg.stage_maps) row.push_back(heatmap_image(maps, side));
    if (labels && seq.boxes[f]) {
      const BoundingBox in_crop = dbg.search_window.to_crop(*seq.boxes[f]);
      for (int s = 1; s <= model.config().n_stages; ++s) {
        row.push_back(heatmap_image(build_labels(in_crop, s, label_cfg).heatmap, label_cfg.map_size, side));
      }
    }
    rows.push_back(hstack(row));
    save_image(dir / ("frame_" + frame_name(f)), rows.back());
  }
  save_image(dir / "heatmaps.png", vstack(rows));
  out << (dir / "heatmaps.png").string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Siamese keypoint tracker: training, tracking and evaluation", "kpntrack"};
  app.require_subcommand(1);

  Common c_synth, c_train, c_track, c_eval, c_sweep, c_viz;
  int synth_count = 10;
  std::string checkpoint, sequence, dataset, protocol, frames, metrics;
  int synth = 0;
  bool viz = false, heatmaps = false, oracle = false, labels = false;

  auto* s_synth = app.add_subcommand("synth", "generate synthetic sequences in the folder format");
  add_common(s_synth, c_synth, "data/synth");
  s_synth->add_option("--count", synth_count, "number of sequences")->capture_default_str();

  auto* s_train = app.add_subcommand("train", "train a model");
  add_common(s_train, c_train, "runs/train");

  auto* s_track = app.add_subcommand("track", "track one sequence folder");
  add_common(s_track, c_track, "runs/track");
  s_track->add_option("--checkpoint", checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  s_track->add_option("--sequence", sequence, "sequence folder")->required()->check(CLI::ExistingDirectory);
  s_track->add_flag("--viz", viz, "write frames with the predicted box");
  s_track->add_flag("--heatmaps", heatmaps, "add per-stage center-probability panels (implies --viz)");

  auto* s_eval = app.add_subcommand("eval", "evaluate on a dataset");
  add_common(s_eval, c_eval, "runs/eval");
  s_eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->check(CLI::ExistingDirectory);
  s_eval->add_option("--dataset", dataset, "folder of sequence folders")->check(CLI::ExistingDirectory);
  s_eval->add_option("--synth", synth, "evaluate on N synthetic sequences instead");
  s_eval->add_option("--protocol", protocol, "ope or restart (default: eval.protocol)");
  s_eval->add_flag("--oracle", oracle, "replay the ground truth instead of a model");

  auto* s_sweep = app.add_subcommand("sweep", "two-level grid search over tracker hyperparameters");
  add_common(s_sweep, c_sweep, "runs/sweep");
  s_sweep->add_option("--checkpoint", checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  s_sweep->add_option("--dataset", dataset, "folder of sequence folders")->check(CLI::ExistingDirectory);
  s_sweep->add_option("--synth", synth, "search on N synthetic sequences instead");

  auto* s_viz = app.add_subcommand("viz", "render per-stage heatmaps and loss curves");
  add_common(s_viz, c_viz, "runs/viz");
  s_viz->add_option("--checkpoint", checkpoint, "checkpoint directory")->check(CLI::ExistingDirectory);
  s_viz->add_option("--sequence", sequence, "sequence folder")->check(CLI::ExistingDirectory);
  s_viz->add_option("--frames", frames, "comma-separated 1-based frames (default: four spread frames)");
  s_viz->add_flag("--labels", labels, "add the per-stage label heatmaps");
  s_viz->add_option("--metrics", metrics, "metrics.csv of a training run")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s_synth->parsed()) return cmd_synth(c_synth, synth_count, out);
    if (s_train->parsed()) return cmd_train(c_train, out);
    if (s_track->parsed()) return cmd_track(c_track, checkpoint, sequence, viz || heatmaps, heatmaps, out);
    if (s_eval->parsed()) return cmd_eval(c_eval, checkpoint, dataset, synth, protocol, oracle, out);
    if (s_sweep->parsed()) return cmd_sweep(c_sweep, checkpoint, dataset, synth, out);
    if (s_viz->parsed()) return cmd_viz(c_viz, checkpoint, sequence, frames, labels, metrics, out);
  } catch (const ConfigKeyError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigValueError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace kpn
