// rmau: command-line front end.
//
// Exit codes: 0 ok, 1 usage error, 2 data error, 3 runtime error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <map>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "image_io.hpp"
#include "rmau/band_engineering.hpp"
#include "rmau/eval_post.hpp"
#include "rmau/tile_io.hpp"
#include "rmau/trainer.hpp"

#ifndef RMAU_VERSION
#define RMAU_VERSION "0.0.0"
#endif

namespace {

using namespace rmau;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool force = false;
};

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !force)
    throw UsageError("output directory " + dir.string() + " exists; pass --force to reuse it");
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// --data (a manifest or a directory holding one), falling back to
/// $RMAU_DATA_DIR/manifest.csv.
fs::path resolve_data(const std::string& data) {
  if (!data.empty()) return fs::is_directory(data) ? fs::path(data) / "manifest.csv" : fs::path(data);
  if (const char* env = std::getenv("RMAU_DATA_DIR"); env && *env) return fs::path(env) / "manifest.csv";
  throw UsageError("--data is required (or set RMAU_DATA_DIR)");
}

std::vector<double> parse_taus(const std::string& text) {
  std::vector<double> taus;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      taus.push_back(parse_double("--taus", item));
      check_threshold(taus.back());
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (taus.empty()) throw UsageError("--taus needs at least one value");
  return taus;
}

std::string seg_line(const SegMetrics& m) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << "F1 " << m.f1 * 100 << "  precision " << m.precision * 100
      << "  recall " << m.recall * 100 << "  mIoU " << m.miou * 100;
  return out.str();
}

std::string det_line(const DetMetrics& m) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << "F1 " << m.f1 * 100 << "  accuracy " << m.accuracy * 100
      << "  precision " << m.precision * 100 << "  recall " << m.recall * 100;
  return out.str();
}

// ---------------------------------------------------------------------------
// import

struct ImportOptions {
  std::string dataset;
  std::string src;
  std::string out;
  int size = 128;
  double ratio = -1.0;
};

void save_pair(Manifest& m, const fs::path& out, int index, const Tile& tile, const std::optional<MaskImage>& mask,
               std::optional<ImageLabel> label, Split split) {
  char name[32];
  std::snprintf(name, sizeof(name), "%05d", index);
  SampleRecord r;
  r.tile_path = std::string("tiles/tile_") + name + ".rst";
  save_tile(tile, out / r.tile_path);
  if (mask) {
    r.mask_path = std::string("masks/mask_") + name + ".rst";
    save_mask(*mask, out / *r.mask_path);
    r.image_label = mask->positives() > 0 ? ImageLabel::landslide : ImageLabel::none;
  }
  if (label) r.image_label = label;
  r.split = split;
  m.records.push_back(std::move(r));
}

Tile rgb_tile(const cli::Raster8& img, int size, const std::string& id) {
  std::vector<float> values(img.values.begin(), img.values.end());
  Tile t(id, size, size, 3, rgb_band_names());
  t.data = cli::resize_bilinear(values, img.height, img.width, 3, size);
  return t;
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

int run_import(const ImportOptions& o, const Globals& g) {
  const fs::path src(o.src), out(o.out);
  if (!fs::is_directory(src)) throw Error(Errc::IoFailure, "source directory " + src.string() + " not found");
  prepare_out_dir(out, g.force);
  fs::create_directories(out / "tiles");
  fs::create_directories(out / "masks");
  Manifest m{{}, o.dataset, out};
  int index = 0;

  if (o.dataset == "landslide4sense") {
    // img/image_N.h5 (dataset "img", H x W x 14) with mask/mask_N.h5 (dataset "mask", H x W)
    for (const auto& img_path : sorted_files(src / "img", ".h5")) {
      std::vector<hsize_t> dims;
      const auto values = cli::read_h5<float>(img_path, "img", dims);
      if (dims.size() != 3) throw Error(Errc::ShapeMismatch, img_path.string() + " is not H x W x C");
      const int h = static_cast<int>(dims[0]), w = static_cast<int>(dims[1]), c = static_cast<int>(dims[2]);
      Tile tile(img_path.stem().string(), o.size, o.size, c, default_band_names(c));
      tile.data = cli::resize_bilinear(values, h, w, c, o.size);
      std::string stem = img_path.stem().string();
      if (stem.rfind("image", 0) == 0) stem = "mask" + stem.substr(5);
      const fs::path mask_path = src / "mask" / (stem + ".h5");
      std::optional<MaskImage> mask;
      if (fs::exists(mask_path)) {
        std::vector<hsize_t> mdims;
        const auto mv = cli::read_h5<std::uint8_t>(mask_path, "mask", mdims);
        mask = cli::resize_nearest(mv, static_cast<int>(mdims[0]), static_cast<int>(mdims[1]), o.size);
      }
      validate_tile(tile);
      save_pair(m, out, index++, tile, mask, std::nullopt, Split::train);
    }
  } else if (o.dataset == "bijie") {
    // landslide/image/*.png + landslide/mask/*.png, non-landslide/image/*.png
    for (const auto& p : sorted_files(src / "landslide" / "image", ".png")) {
      const Tile tile = rgb_tile(cli::read_png(p, false), o.size, p.stem().string());
      std::optional<MaskImage> mask;
      const fs::path mp = src / "landslide" / "mask" / p.filename();
      if (fs::exists(mp)) {
        const auto mr = cli::read_png(mp, true);
        mask = cli::resize_nearest(mr.values, mr.height, mr.width, o.size);
      }
      save_pair(m, out, index++, tile, mask, ImageLabel::landslide, Split::train);
    }
    for (const auto& p : sorted_files(src / "non-landslide" / "image", ".png")) {
      const Tile tile = rgb_tile(cli::read_png(p, false), o.size, p.stem().string());
      save_pair(m, out, index++, tile, MaskImage(o.size, o.size), ImageLabel::none, Split::train);
    }
  } else if (o.dataset == "nepal") {
    // {train,val,test}/images/*.png with {train,val,test}/masks/*.png
    for (const auto& [dir, split] : {std::pair{"train", Split::train}, {"val", Split::val}, {"test", Split::test}}) {
      for (const auto& p : sorted_files(src / dir / "images", ".png")) {
        const Tile tile = rgb_tile(cli::read_png(p, false), o.size, p.stem().string());
        std::optional<MaskImage> mask;
        const fs::path mp = src / dir / "masks" / p.filename();
        if (fs::exists(mp)) {
          const auto mr = cli::read_png(mp, true);
          mask = cli::resize_nearest(mr.values, mr.height, mr.width, o.size);
        }
        save_pair(m, out, index++, tile, mask, std::nullopt, split);
      }
    }
  } else {
    throw UsageError("--dataset must be landslide4sense, bijie or nepal");
  }
  if (m.empty()) throw Error(Errc::EmptyManifest, "no samples found under " + src.string());

  if (o.dataset != "nepal") {
    const double ratio = o.ratio > 0.0 ? o.ratio : (o.dataset == "bijie" ? 0.7 : 0.8);
    auto [train, test] = split_dataset(m, ratio, g.seed);
    Manifest merged{{}, m.source_name, out};
    // keep the original record order
    std::map<std::string, Split> split_of;
    for (const auto& r : train.records) split_of[r.tile_path] = Split::train;
    for (const auto& r : test.records) split_of[r.tile_path] = Split::test;
    for (auto r : m.records) {
      r.split = split_of.at(r.tile_path);
      merged.records.push_back(std::move(r));
    }
    m = std::move(merged);
  }
  write_manifest(m, out / "manifest.csv");
  std::cout << "imported " << m.size() << " samples (" << m.count(Split::train) << " train, " << m.count(Split::val)
            << " val, " << m.count(Split::test) << " test) into " << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth, split, bands

int run_synth(int n, int channels, int size, double margin, const std::string& out, const Globals& g) {
  prepare_out_dir(out, g.force);
  SyntheticOptions opt;
  opt.size = size;
  opt.margin = margin;
  const Manifest m = generate_synthetic_dataset(n, channels, g.seed, out, opt);
  std::cout << "wrote " << m.size() << " synthetic samples to " << out << "\n";
  return kExitOk;
}

int run_split(const std::string& data, double ratio, const std::string& out, const Globals& g) {
  const Manifest m = read_manifest(resolve_data(data));
  const auto [train, test] = split_dataset(m, ratio, g.seed);
  Manifest merged{{}, m.source_name, m.base_dir};
  std::map<std::string, Split> split_of;
  for (const auto& r : train.records) split_of[r.tile_path] = Split::train;
  for (const auto& r : test.records) split_of[r.tile_path] = Split::test;
  for (auto r : m.records) {
    r.split = split_of.at(r.tile_path);
    merged.records.push_back(std::move(r));
  }
  const fs::path out_path(out);
  if (fs::exists(out_path) && !g.force) throw UsageError(out_path.string() + " exists; pass --force to overwrite");
  // Records stay relative to the source directory.
  for (auto& r : merged.records) {
    r.tile_path = fs::absolute(m.resolve(r.tile_path)).string();
    if (r.mask_path) r.mask_path = fs::absolute(m.resolve(*r.mask_path)).string();
  }
  write_manifest(merged, out_path);
  std::cout << train.size() << " train / " << test.size() << " test -> " << out_path.string() << "\n";
  return kExitOk;
}

int run_bands(const std::string& data, const std::string& recipe_name, const std::string& out, const Globals& g) {
  const Manifest m = read_manifest(resolve_data(data));
  const BandRecipe recipe = make_recipe(recipe_name);
  const fs::path dir(out);
  prepare_out_dir(dir, g.force);
  fs::create_directories(dir / "tiles");
  Manifest expanded{{}, m.source_name, dir};
  for (std::size_t i = 0; i < m.size(); ++i) {
    SampleRecord r = m.records[i];
    const Tile t = expand_bands(load_tile(m.resolve(r.tile_path)), recipe);
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu", i);
    const std::string rel = std::string("tiles/tile_") + name + ".rst";
    save_tile(t, dir / rel);
    r.tile_path = rel;
    if (r.mask_path) r.mask_path = fs::absolute(m.resolve(*r.mask_path)).string();
    expanded.records.push_back(std::move(r));
  }
  write_manifest(expanded, dir / "manifest.csv");
  std::cout << "expanded " << expanded.size() << " tiles with recipe " << recipe.name << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train, eval, predict, sweep

TrainConfig load_config(const std::string& path, const Globals& g) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : TrainConfig::from_text(read_text(path));
  if (g.seed_given) cfg.seed = g.seed;
  return cfg;
}

int run_train(const std::string& config, const std::string& data, const std::string& out, bool select_on_test,
              bool quiet, const Globals& g) {
  TrainConfig cfg = load_config(config, g);
  if (select_on_test) cfg.select_on_test = true;
  const Manifest m = read_manifest(resolve_data(data));
  const fs::path dir(out);
  prepare_out_dir(dir, g.force);
  TrainHooks hooks;
  if (!quiet)
    hooks.on_epoch = [&](int epoch, double loss) {
      std::cout << "epoch " << epoch << "/" << cfg.epochs << "  loss " << std::setprecision(6) << loss << std::endl;
    };
  const TrainResult result = train(m, cfg, dir, hooks);
  write_text(dir / "report.txt", result.report.to_text());
  write_text(dir / "loss_curve.csv", result.report.loss_curve_csv());
  if (result.report.segmentation) std::cout << "segmentation  " << seg_line(*result.report.segmentation) << "\n";
  if (result.report.detection) std::cout << "detection     " << det_line(*result.report.detection) << "\n";
  std::cout << "checkpoint " << result.report.checkpoint_path << "\n";
  return kExitOk;
}

int run_eval(const std::string& model, const std::string& data, const std::string& out, const std::string& split_name,
             double tau, int overlays, const Globals& g) {
  const ModelState<float> state = load_checkpoint<float>(model);
  const Manifest m = read_manifest(resolve_data(data));
  const Split split = parse_split(split_name);
  TrainConfig cfg;
  cfg.tau = tau;
  cfg.model = state.config;
  const RunReport report = evaluate_split(state, m, split, cfg);
  const fs::path dir(out);
  prepare_out_dir(dir, g.force);
  write_text(dir / "report.txt", report.to_text());
  {
    std::ostringstream csv;
    csv << "split,tau,seg_f1,seg_precision,seg_recall,seg_miou,det_f1,det_accuracy,det_precision,det_recall\n";
    csv << split_name << ',' << tau;
    auto put = [&](std::optional<double> v) {
      csv << ',';
      if (v) csv << *v * 100.0;
    };
    const auto& s = report.segmentation;
    const auto& d = report.detection;
    put(s ? std::optional(s->f1) : std::nullopt);
    put(s ? std::optional(s->precision) : std::nullopt);
    put(s ? std::optional(s->recall) : std::nullopt);
    put(s ? std::optional(s->miou) : std::nullopt);
    put(d ? std::optional(d->f1) : std::nullopt);
    put(d ? std::optional(d->accuracy) : std::nullopt);
    put(d ? std::optional(d->precision) : std::nullopt);
    put(d ? std::optional(d->recall) : std::nullopt);
    csv << "\n";
    write_text(dir / "metrics.csv", csv.str());
  }
  if (overlays > 0) {
    fs::create_directories(dir / "overlays");
    int written = 0;
    for (const auto& r : m.records) {
      if (r.split != split || written >= overlays) continue;
      const LoadedSample s = load_sample(m, r);
      const Prediction p = predict(state, s.tile, tau);
      const RgbImage img = render_overlay(s.tile, p.mask, s.has_mask ? &s.mask : nullptr);
      cli::write_png(dir / "overlays" / (fs::path(r.tile_path).stem().string() + ".png"), img);
      ++written;
    }
  }
  std::cout << report.evaluated_images << " " << split_name << " images at tau " << tau << "\n";
  if (report.segmentation) std::cout << "segmentation  " << seg_line(*report.segmentation) << "\n";
  if (report.detection) std::cout << "detection     " << det_line(*report.detection) << "\n";
  return kExitOk;
}

int run_predict(const std::string& model, const std::string& tile_path, const std::string& mask_path,
                const std::string& out, double tau, const Globals& g) {
  const ModelState<float> state = load_checkpoint<float>(model);
  const Tile tile = load_tile(tile_path);
  std::optional<MaskImage> gt;
  if (!mask_path.empty()) gt = load_mask(mask_path);
  const Prediction p = predict(state, tile, tau);
  const fs::path dir(out);
  prepare_out_dir(dir, g.force);
  save_mask(p.mask, dir / "mask.rst");
  {
    Tile prob("probability", p.prob.height, p.prob.width, 1, {"P"});
    prob.data = p.prob.values;
    save_tile(prob, dir / "probability.rst");
  }
  cli::write_png(dir / "overlay.png", render_overlay(tile, p.mask, gt ? &*gt : nullptr));
  std::ostringstream txt;
  txt << "tile=" << tile_path << "\ntau=" << tau << "\ndetect_prob=" << p.detect_prob
      << "\npositive_pixels=" << p.mask.positives() << "\n";
  write_text(dir / "prediction.txt", txt.str());
  std::cout << "detect_prob " << p.detect_prob << ", " << p.mask.positives() << " positive pixels\n";
  return kExitOk;
}

int run_sweep(const std::string& model, const std::string& data, const std::string& split_name,
              const std::string& taus_text, const std::string& out, const Globals& g) {
  const ModelState<float> state = load_checkpoint<float>(model);
  const Manifest m = read_manifest(resolve_data(data));
  const Split split = parse_split(split_name);
  const auto taus = parse_taus(taus_text);
  auto records = records_of(m, split);
  if (records.empty()) throw Error(Errc::EmptyTestSplit, m.source_name + " has no " + split_name + " records");
  const EvalOutputs e = infer_records(state, m, records);
  std::vector<ProbMap> probs;
  std::vector<MaskImage> gts;
  for (std::size_t i = 0; i < e.probs.size(); ++i)
    if (e.has_mask[i]) {
      probs.push_back(e.probs[i]);
      gts.push_back(e.masks[i]);
    }
  if (probs.empty()) throw Error(Errc::EmptyTestSplit, "no " + split_name + " records carry masks");
  const auto rows = threshold_sweep(probs, gts, taus);
  const fs::path dir(out);
  prepare_out_dir(dir, g.force);
  std::ofstream csv(dir / "sweep.csv");
  write_sweep_csv(csv, rows);
  std::cout << "  tau      F1    mIoU\n" << std::fixed;
  for (const auto& r : rows)
    std::cout << std::setprecision(2) << std::setw(5) << r.tau << "  " << std::setw(6) << r.f1 * 100 << "  "
              << std::setw(6) << r.miou * 100 << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Landslide segmentation and detection with an attention residual U-Net"};
  app.set_version_flag("--version", RMAU_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);

  Globals g;
  app.add_option("--seed", g.seed, "Random seed (threaded to every random stream)")
      ->each([&](const std::string&) { g.seed_given = true; });
  app.add_flag("--force", g.force, "Allow writing into an existing output location");

  ImportOptions imp;
  auto* import_cmd = app.add_subcommand("import", "Convert a public dataset into tiles and a manifest");
  import_cmd->add_option("--dataset", imp.dataset, "landslide4sense | bijie | nepal")->required()
      ->check(CLI::IsMember({"landslide4sense", "bijie", "nepal"}));
  import_cmd->add_option("--src", imp.src, "Extracted dataset directory")->required();
  import_cmd->add_option("--out", imp.out, "Output directory")->required();
  import_cmd->add_option("--size", imp.size, "Tile edge after resampling")->check(CLI::PositiveNumber);
  import_cmd->add_option("--ratio", imp.ratio, "Train fraction (default 0.8, Bijie 0.7)")->check(CLI::Range(0.0, 1.0));

  int synth_n = 16, synth_channels = 14, synth_size = 128;
  double synth_margin = 0.15;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic tile/mask dataset");
  synth_cmd->add_option("--n", synth_n, "Number of samples")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--channels", synth_channels, "3 (RGB) or 14 (multispectral)")->check(CLI::IsMember({3, 14}));
  synth_cmd->add_option("--size", synth_size, "Tile edge")->check(CLI::Range(2, 4096));
  synth_cmd->add_option("--margin", synth_margin, "Spectral offset inside landslide regions");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();

  std::string data, out, config, model, tile, mask, recipe = "b15-23", split_name = "test",
                                                    taus = "0.4,0.5,0.6,0.75,0.85,0.9,0.95,0.99";
  double ratio = 0.8, tau = 0.5;
  int overlays = 8;
  bool select_on_test = false, quiet = false;

  auto* split_cmd = app.add_subcommand("split", "Assign train/test splits to a manifest");
  split_cmd->add_option("--data", data, "Manifest CSV");
  split_cmd->add_option("--ratio", ratio, "Train fraction")->check(CLI::Range(0.0, 1.0));
  split_cmd->add_option("--out", out, "Output manifest path")->required();

  auto* bands_cmd = app.add_subcommand("bands", "Write band-expanded copies of every tile");
  bands_cmd->add_option("--data,--in", data, "Manifest CSV or the directory holding manifest.csv");
  bands_cmd->add_option("--recipe", recipe, "none | b15-17 | b15-21 | b15-23 | b15-25 | b15-26");
  bands_cmd->add_option("--out", out, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config, "key=value configuration file");
  train_cmd->add_option("--data", data, "Manifest CSV");
  train_cmd->add_option("--out", out, "Run directory")->required();
  train_cmd->add_flag("--select-on-test", select_on_test, "Pick the best checkpoint on the test split");
  train_cmd->add_flag("--quiet", quiet, "No per-epoch output");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--model", model, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data, "Manifest CSV");
  eval_cmd->add_option("--split", split_name, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--tau", tau, "Probability threshold")->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--overlays", overlays, "Overlay PNGs to write")->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--out", out, "Output directory")->required();

  auto* predict_cmd = app.add_subcommand("predict", "Predict one tile");
  predict_cmd->add_option("--model", model, "Checkpoint file")->required();
  predict_cmd->add_option("--tile", tile, "Tile file")->required();
  predict_cmd->add_option("--mask", mask, "Optional ground-truth mask for the overlay");
  predict_cmd->add_option("--tau", tau, "Probability threshold")->check(CLI::Range(0.0, 1.0));
  predict_cmd->add_option("--out", out, "Output directory")->required();

  auto* sweep_cmd = app.add_subcommand("sweep-threshold", "F1 and mIoU over a list of thresholds");
  sweep_cmd->add_option("--model", model, "Checkpoint file")->required();
  sweep_cmd->add_option("--data", data, "Manifest CSV");
  sweep_cmd->add_option("--split", split_name, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  sweep_cmd->add_option("--taus", taus, "Comma-separated thresholds");
  sweep_cmd->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // A missing required option is checked before unknown arguments; name the
    // stray flag instead when there is one.
    if (const auto extra = app.remaining(true); dynamic_cast<const CLI::RequiredError*>(&e) && !extra.empty()) {
      CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
      return app.exit(CLI::ExtrasError(sub->get_display_name(), extra)) == 0 ? kExitOk : kExitUsage;
    }
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*import_cmd) return run_import(imp, g);
    if (*synth_cmd) return run_synth(synth_n, synth_channels, synth_size, synth_margin, synth_out, g);
    if (*split_cmd) return run_split(data, ratio, out, g);
    if (*bands_cmd) return run_bands(data, recipe, out, g);
    if (*train_cmd) return run_train(config, data, out, select_on_test, quiet, g);
    if (*eval_cmd) return run_eval(model, data, out, split_name, tau, overlays, g);
    if (*predict_cmd) return run_predict(model, tile, mask, out, tau, g);
    if (*sweep_cmd) return run_sweep(model, data, split_name, taus, out, g);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_data_error() ? kExitData : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
