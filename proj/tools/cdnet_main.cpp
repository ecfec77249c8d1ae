#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdnet/checkpoint.hpp"
#include "cdnet/config.hpp"
#include "cdnet/dataset.hpp"
#include "cdnet/gradcheck_suite.hpp"
#include "cdnet/metrics.hpp"
#include "cdnet/network.hpp"
#include "cdnet/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace cdnet;

namespace {

constexpr const char* kVersion = "cdnet 1.0.0";

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw DataError("cannot create output directory '" + dir + "'");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw DataError("short write to '" + path + "'");
}

// Every run directory receives the tool version (no timestamps, so reruns
// overwrite identically) and, where applicable, the effective config.
void stamp_run_dir(const std::string& dir) {
  write_text(dir + "/VERSION", std::string(kVersion) + "\n");
}

std::string resolve_manifest(const std::string& path) {
  if (fs::is_directory(path)) {
    const std::string m = path + "/manifest.txt";
    if (!fs::exists(m))
      throw DataError("no manifest.txt in directory '" + path + "'");
    return m;
  }
  if (!fs::exists(path)) throw DataError("no such manifest '" + path + "'");
  return path;
}

// Duplicates the training step log to stdout and the on-disk log file.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return c;
    const int r1 = a_->sputc(static_cast<char>(c));
    const int r2 = b_->sputc(static_cast<char>(c));
    return (r1 == traits_type::eof() || r2 == traits_type::eof())
               ? traits_type::eof()
               : c;
  }
  int sync() override {
    const int r1 = a_->pubsync(), r2 = b_->pubsync();
    return (r1 == 0 && r2 == 0) ? 0 : -1;
  }

 private:
  std::streambuf *a_, *b_;
};

struct SynthArgs {
  std::string out;
  int n = 8;
  int64_t size = 64;
  uint64_t seed = 7;
};

int cmd_synth(const SynthArgs& a) {
  if (a.size < 64 || a.size % 64 != 0)
    throw ShapeError(
        "--size must be a positive multiple of 64 (the encoder halves the "
        "input five times starting from stride-4 patches); got " +
        std::to_string(a.size));
  ensure_dir(a.out);
  const auto samples = synth_dataset(a.n, a.size, a.seed);
  const std::string manifest = save_dataset(a.out, samples);
  stamp_run_dir(a.out);
  std::cout << "wrote " << samples.size() << " sample pairs, manifest "
            << manifest << "\n";
  return 0;
}

struct TileArgs {
  std::string in, out;
  int64_t size = 256;
};

int cmd_tile(const TileArgs& a) {
  const auto dataset = load_dataset(resolve_manifest(a.in));
  std::vector<SamplePair> tiles;
  for (const auto& pair : dataset) {
    auto t = tile(pair, a.size);
    if (t.empty())
      std::cerr << "warning: '" << pair.id << "' is smaller than "
                << a.size << "x" << a.size << ", dropped\n";
    tiles.insert(tiles.end(), t.begin(), t.end());
  }
  ensure_dir(a.out);
  const std::string manifest = save_dataset(a.out, tiles);
  stamp_run_dir(a.out);
  std::cout << "wrote " << tiles.size() << " tiles from " << dataset.size()
            << " pairs, manifest " << manifest << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
  std::vector<std::string> sets;
  int64_t max_steps = -1;
  bool augment = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg =
      a.config.empty() ? RunConfig{} : load_config_file(a.config);
  if (!a.data.empty()) cfg.paths.data = a.data;
  if (!a.out.empty()) cfg.paths.out = a.out;
  for (const auto& s : a.sets) apply_override(cfg, s);
  cfg.validate();
  if (cfg.paths.data.empty()) throw DataError("no dataset: pass --data");
  if (cfg.paths.out.empty()) throw DataError("no run directory: pass --out");

  const auto dataset = load_dataset(resolve_manifest(cfg.paths.data));
  if (dataset.empty()) throw DataError("dataset is empty");

  ensure_dir(cfg.paths.out);
  write_text(cfg.paths.out + "/config.txt", echo_config(cfg));
  stamp_run_dir(cfg.paths.out);

  ChangeNet model(cfg.model, cfg.train.seed);
  Trainer trainer(model, cfg.train, cfg.loss);

  std::ofstream log_file(cfg.paths.out + "/train_log.txt", std::ios::binary);
  if (!log_file) throw DataError("cannot open train_log.txt for writing");
  TeeBuf tee(log_file.rdbuf(), std::cout.rdbuf());
  std::ostream log(&tee);

  const TrainResult result =
      trainer.train(dataset, a.max_steps, &log, a.augment);
  log.flush();

  const std::string ckpt = cfg.paths.out + "/model.ckpt";
  save_checkpoint(ckpt, model.params(), cfg.train, trainer.step());
  std::cout << "trained " << result.steps << " steps; checkpoint " << ckpt
            << "\n";
  return 0;
}

struct PredictArgs {
  std::string ckpt, config, data, out;
  double threshold = 0.5;
};

int cmd_predict(const PredictArgs& a) {
  std::string cfg_path = a.config;
  if (cfg_path.empty()) {
    cfg_path = (fs::path(a.ckpt).parent_path() / "config.txt").string();
    if (!fs::exists(cfg_path))
      throw DataError("no config.txt next to checkpoint; pass --config");
  }
  RunConfig cfg = load_config_file(cfg_path);
  cfg.paths.data = a.data;
  cfg.paths.out = a.out;
  cfg.paths.ckpt = a.ckpt;
  cfg.validate();

  ChangeNet model(cfg.model, cfg.train.seed);
  load_checkpoint(a.ckpt, model.params());

  const auto dataset = load_dataset(resolve_manifest(a.data));
  ensure_dir(a.out);
  write_text(a.out + "/config.txt", echo_config(cfg));
  stamp_run_dir(a.out);

  const auto preds = predict(model, dataset, a.threshold);
  for (const auto& p : preds) {
    const int64_t h = p.prob.dim(2), w = p.prob.dim(3);
    ImageU8 prob_img = ImageU8::make(h, w, 1);
    std::vector<float> raw(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) {
      const double v = p.prob[i];
      prob_img.data[static_cast<size_t>(i)] =
          static_cast<uint8_t>(std::lround(v * 255.0));
      raw[static_cast<size_t>(i)] = static_cast<float>(v);
    }
    ImageU8 bin = p.binary;
    for (auto& b : bin.data) b = b ? 255 : 0;
    write_pgm(a.out + "/" + p.id + "_prob.pgm", prob_img);
    write_f32_raw(a.out + "/" + p.id + "_prob.f32", raw);
    write_pgm(a.out + "/" + p.id + "_pred.pgm", bin);
  }
  std::cout << "wrote probability and binary maps for " << preds.size()
            << " pairs to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string pred, gt, out;
};

// Maps sample id -> mask path. Recognizes <id>_pred.pgm, <id>_mask.pgm and
// bare <id>.pgm; `prefer` ranks the suffixes when one id has several files.
std::map<std::string, std::string> scan_masks(
    const std::string& dir, const std::vector<std::string>& prefer) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: '" + dir + "'");
  std::map<std::string, std::pair<size_t, std::string>> best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() < 4 || name.substr(name.size() - 4) != ".pgm") continue;
    std::string stem = name.substr(0, name.size() - 4);
    if (stem.size() >= 5 && stem.substr(stem.size() - 5) == "_prob") continue;
    size_t rank = prefer.size();  // bare <id>.pgm ranks last
    std::string id = stem;
    for (size_t i = 0; i < prefer.size(); ++i) {
      const auto& suf = prefer[i];
      if (stem.size() > suf.size() &&
          stem.substr(stem.size() - suf.size()) == suf) {
        rank = i;
        id = stem.substr(0, stem.size() - suf.size());
        break;
      }
    }
    const auto it = best.find(id);
    if (it == best.end() || rank < it->second.first)
      best[id] = {rank, entry.path().string()};
  }
  std::map<std::string, std::string> out;
  for (const auto& [id, v] : best) out[id] = v.second;
  return out;
}

Tensor mask_file_to_tensor(const std::string& path) {
  ImageU8 img = read_pgm(path);
  ImageU8 bin = img;
  for (auto& v : bin.data) v = v > 127 ? 1 : 0;
  return mask_to_tensor(bin);
}

int cmd_eval(const EvalArgs& a) {
  const auto preds = scan_masks(a.pred, {"_pred", "_mask"});
  const auto gts = scan_masks(a.gt, {"_mask", "_pred"});
  std::vector<std::string> ids;
  for (const auto& [id, path] : preds)
    if (gts.count(id)) ids.push_back(id);
  if (ids.empty())
    throw DataError("no overlapping sample ids between '" + a.pred +
                    "' and '" + a.gt + "'");

  ConfusionCounts pooled;
  double mba_sum = 0.0;
  std::vector<double> prob_all, gt_all;
  for (const auto& id : ids) {
    const Tensor pred = mask_file_to_tensor(preds.at(id));
    const Tensor gt = mask_file_to_tensor(gts.at(id));
    if (pred.shape() != gt.shape())
      throw DataError("extent mismatch for id '" + id + "'");
    pooled += confusion(pred, gt);
    mba_sum += mba(pred, gt);

    // Lossless probabilities when the sidecar exists; else the binary map.
    const std::string raw_path = a.pred + "/" + id + "_prob.f32";
    const size_t n = static_cast<size_t>(pred.numel());
    if (fs::exists(raw_path)) {
      const auto raw = read_f32_raw(raw_path, n);
      for (float v : raw) prob_all.push_back(static_cast<double>(v));
    } else {
      for (int64_t i = 0; i < pred.numel(); ++i) prob_all.push_back(pred[i]);
    }
    for (int64_t i = 0; i < gt.numel(); ++i) gt_all.push_back(gt[i]);
  }

  MetricsReport rep = report_from_counts(pooled);
  rep.mba = mba_sum / static_cast<double>(ids.size());
  const auto thresholds = default_thresholds();
  const Tensor prob_t({static_cast<int64_t>(prob_all.size())}, prob_all);
  const Tensor gt_t({static_cast<int64_t>(gt_all.size())}, gt_all);
  rep.roc = roc_curve(prob_t, gt_t, thresholds);

  ensure_dir(a.out);
  std::ostringstream txt;
  txt << "samples = " << ids.size() << "\n"
      << "tp = " << rep.counts.tp << "\n"
      << "fp = " << rep.counts.fp << "\n"
      << "tn = " << rep.counts.tn << "\n"
      << "fn = " << rep.counts.fn << "\n"
      << "precision = " << fmt17(rep.precision) << "\n"
      << "recall = " << fmt17(rep.recall) << "\n"
      << "f1 = " << fmt17(rep.f1) << "\n"
      << "iou = " << fmt17(rep.iou) << "\n"
      << "oa = " << fmt17(rep.oa) << "\n"
      << "mba = " << fmt17(rep.mba) << "\n"
      << "roc.count = " << rep.roc.size() << "\n";
  for (size_t i = 0; i < rep.roc.size(); ++i) {
    txt << "roc." << i << ".threshold = " << fmt17(thresholds[i]) << "\n"
        << "roc." << i << ".fpr = " << fmt17(rep.roc[i].first) << "\n"
        << "roc." << i << ".tpr = " << fmt17(rep.roc[i].second) << "\n";
  }
  write_text(a.out + "/metrics.txt", txt.str());

  nlohmann::json j;
  j["samples"] = ids.size();
  j["counts"] = {{"tp", rep.counts.tp},
                 {"fp", rep.counts.fp},
                 {"tn", rep.counts.tn},
                 {"fn", rep.counts.fn}};
  j["precision"] = rep.precision;
  j["recall"] = rep.recall;
  j["f1"] = rep.f1;
  j["iou"] = rep.iou;
  j["oa"] = rep.oa;
  j["mba"] = rep.mba;
  j["roc"] = nlohmann::json::array();
  for (size_t i = 0; i < rep.roc.size(); ++i)
    j["roc"].push_back({{"threshold", thresholds[i]},
                        {"fpr", rep.roc[i].first},
                        {"tpr", rep.roc[i].second}});
  write_text(a.out + "/metrics.json", j.dump(2) + "\n");
  stamp_run_dir(a.out);

  std::cout << "samples " << ids.size() << "  precision " << rep.precision
            << "  recall " << rep.recall << "  f1 " << rep.f1 << "  iou "
            << rep.iou << "  oa " << rep.oa << "  mba " << rep.mba << "\n";
  return 0;
}

struct GradcheckArgs {
  std::string config;
  double tol = 1e-4;
  int instances = 5;
  uint64_t seed = 99;
  bool no_e2e = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  SuiteOptions opt;
  opt.tol = a.tol;
  opt.instances = a.instances;
  opt.seed = a.seed;
  opt.end_to_end = !a.no_e2e;
  if (!a.config.empty()) {
    const RunConfig cfg = load_config_file(a.config);
    cfg.validate();
    opt.seed = cfg.train.seed;
  }
  const auto results = run_gradcheck_suite(opt);
  double worst = 0.0;
  std::string worst_comp;
  for (const auto& r : results) {
    std::cout << format_suite_result(r) << "\n";
    if (r.max_rel_err >= worst) {
      worst = r.max_rel_err;
      worst_comp = r.component;
    }
  }
  const bool ok = suite_passes(results);
  std::cout << (ok ? "OK" : "BREACH") << ": worst relative error " << worst
            << " in '" << worst_comp << "'\n";
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "cdnet: bi-temporal change detection (synthesis, tiling, training, "
      "prediction, evaluation, gradient checking).\n"
      "Exit codes: 0 success, 1 usage error, 2 data/config error, "
      "3 numeric failure."};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
  s->add_option("--out", synth.out, "Output dataset directory")->required();
  s->add_option("--n", synth.n, "Number of sample pairs")
      ->capture_default_str();
  s->add_option("--size", synth.size, "Square image size (multiple of 64)")
      ->capture_default_str();
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();

  TileArgs tiling;
  auto* t = app.add_subcommand("tile", "Cut a dataset into square tiles");
  t->add_option("--in", tiling.in, "Input manifest (or its directory)")
      ->required();
  t->add_option("--out", tiling.out, "Output dataset directory")->required();
  t->add_option("--size", tiling.size, "Tile side length")
      ->capture_default_str();

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", train.config, "Config file (defaults apply)");
  tr->add_option("--data", train.data, "Dataset manifest (or its directory)");
  tr->add_option("--out", train.out, "Run directory");
  tr->add_option("--set", train.sets, "Override a config key (key=value)");
  tr->add_option("--max-steps", train.max_steps,
                 "Stop after this many optimizer steps (-1 = full epochs)")
      ->capture_default_str();
  tr->add_flag("--augment", train.augment,
               "Random rotation/flip augmentation during training");

  PredictArgs pred;
  auto* p = app.add_subcommand("predict", "Run inference on a dataset");
  p->add_option("--ckpt", pred.ckpt, "Checkpoint file")->required();
  p->add_option("--config", pred.config,
                "Config file (default: config.txt next to the checkpoint)");
  p->add_option("--data", pred.data, "Dataset manifest (or its directory)")
      ->required();
  p->add_option("--out", pred.out, "Output directory")->required();
  p->add_option("--threshold", pred.threshold,
                "Change threshold (prob >= t is change)")
      ->capture_default_str();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score predictions against masks");
  e->add_option("--pred", eval.pred, "Directory of predicted masks")
      ->required();
  e->add_option("--gt", eval.gt, "Directory of ground-truth masks")
      ->required();
  e->add_option("--out", eval.out, "Output directory for metrics")->required();

  GradcheckArgs gc;
  auto* g = app.add_subcommand(
      "gradcheck", "Verify analytic gradients against finite differences");
  g->add_option("--config", gc.config, "Config file (only the seed is used)");
  g->add_option("--tol", gc.tol, "Relative-error tolerance")
      ->capture_default_str();
  g->add_option("--instances", gc.instances, "Random instances per component")
      ->capture_default_str();
  g->add_option("--seed", gc.seed, "Suite seed")->capture_default_str();
  g->add_flag("--no-e2e", gc.no_e2e, "Skip the whole-network spot check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_tile(tiling);
    if (tr->parsed()) return cmd_train(train);
    if (p->parsed()) return cmd_predict(pred);
    if (e->parsed()) return cmd_eval(eval);
    if (g->parsed()) return cmd_gradcheck(gc);
  } catch (const ShapeError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const DataError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return 3;
  }
  return 0;
}
