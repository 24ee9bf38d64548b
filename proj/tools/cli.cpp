#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "lpr/checkpoint.hpp"
#include "lpr/dataset.hpp"
#include "lpr/pipeline.hpp"
#include "lpr/platelang.hpp"
#include "lpr/train.hpp"

namespace lpr {

namespace {

namespace fs = std::filesystem;

// One output line of `key=value` pairs. Values containing spaces, quotes or
// '=' are double-quoted with backslash escapes.
class Record {
 public:
  Record& operator()(const std::string& key, const std::string& value) {
    if (!line_.empty()) line_ += ' ';
    line_ += key + '=' + quote(value);
    return *this;
  }
  Record& operator()(const std::string& key, const char* value) {
    return (*this)(key, std::string(value));
  }
  Record& operator()(const std::string& key, double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);  // shortest roundtrip form
    return (*this)(key, std::string(buf, end));
  }
  Record& operator()(const std::string& key, std::size_t value) {
    return (*this)(key, std::to_string(value));
  }
  Record& operator()(const std::string& key, bool value) {
    return (*this)(key, value ? "true" : "false");
  }
  void emit(std::ostream& out) const { out << line_ << '\n' << std::flush; }

 private:
  static std::string quote(const std::string& v) {
    if (!v.empty() && v.find_first_of(" \t\"=\\") == std::string::npos) return v;
    std::string q = "\"";
    for (char c : v) {
      if (c == '"' || c == '\\') q += '\\';
      q += c;
    }
    return q + '"';
  }
  std::string line_;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Reads `key=value` lines; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(number) +
                               ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.starts_with("--")) key.erase(0, 2);
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

// Splices `--config FILE` entries into the argument list as `--key=value`
// unless the command line already sets that key, so flags win over the file.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::optional<std::string> file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    if (args[i].starts_with("--config=")) file = args[i].substr(9);
  }
  if (!file || args.empty()) return args;
  std::set<std::string> given;
  for (const std::string& a : args) {
    if (!a.starts_with("--")) continue;
    given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
  }
  std::vector<std::string> out(args.begin(), args.begin() + 1);  // the subcommand
  for (const auto& [key, value] : read_config(*file)) {
    if (key == "config" || given.count(key)) continue;
    out.push_back("--" + key + "=" + value);
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

struct ModelOptions {
  double width = 1.0;
  std::string alphabet = Alphabet::plates().symbols();
};

void add_model_options(CLI::App* cmd, ModelOptions& m) {
  cmd->add_option("--width", m.width, "Channel multiplier of the recognizer")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--alphabet", m.alphabet, "Output symbols; the blank is implicit")
      ->capture_default_str();
}

struct OptimOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double final_lr_fraction = 1.0;
  bool no_dropout = false;
  bool augment = false;
  double time_budget = 0.0;
};

void add_optim_options(CLI::App* cmd, OptimOptions& o) {
  cmd->add_option("--epochs", o.epochs)->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--lr", o.lr, "Learning rate")->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd->add_option("--beta1", o.beta1)->check(CLI::Range(0.0, 0.999999))->capture_default_str();
  cmd->add_option("--beta2", o.beta2)->check(CLI::Range(0.0, 0.999999))->capture_default_str();
  cmd->add_option("--final-lr-fraction", o.final_lr_fraction,
                  "Cosine-decay the learning rate to this fraction by the last epoch")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_flag("--no-dropout", o.no_dropout, "Disable dropout");
  cmd->add_flag("--augment", o.augment, "Redraw augmentation every epoch");
  cmd->add_option("--time-budget", o.time_budget, "Stop after this many seconds (0: none)")
      ->capture_default_str();
}

TrainConfig make_train_config(const OptimOptions& o, std::uint64_t seed, std::ostream& out) {
  TrainConfig c;
  c.epochs = o.epochs;
  c.batch_size = o.batch_size;
  c.adam.learning_rate = o.lr;
  c.adam.beta1 = o.beta1;
  c.adam.beta2 = o.beta2;
  c.final_lr_fraction = o.final_lr_fraction;
  c.dropout = !o.no_dropout;
  c.seed = seed;
  c.time_budget_seconds = o.time_budget;
  if (o.augment) {
    c.augment = AugmentConfig{};
    c.augment->seed = seed;
  }
  c.on_epoch = [&out](const EpochStats& s) {
    Record r;
    r("event", "epoch")("epoch", s.epoch)("train_loss", s.train_loss);
    if (!std::isnan(s.heldout_accuracy)) r("heldout_accuracy", s.heldout_accuracy);
    r("seconds", s.seconds).emit(out);
  };
  return c;
}

std::vector<LabeledImage> load_labeled(const fs::path& manifest) {
  std::vector<LabeledImage> out;
  for (const ManifestEntry& e : load_manifest(manifest)) {
    if (!e.label_valid) {
      throw ManifestError(manifest.string() + ":" + std::to_string(e.line) + ": label '" +
                          e.label + "' matches no plate template");
    }
    out.push_back({read_pnm(e.image), e.label});
  }
  return out;
}

std::vector<EvalItem> load_items(const fs::path& manifest) {
  std::vector<EvalItem> out;
  for (const ManifestEntry& e : load_manifest(manifest))
    out.push_back({e.image.string(), read_pnm(e.image), e.label, e.group});
  return out;
}

Quad parse_quad(const std::string& text) {
  std::istringstream in(text);
  std::vector<double> v;
  double x;
  while (in >> x) v.push_back(x);
  if (v.size() != 8 || !in.eof()) {
    throw std::invalid_argument("--quad needs 8 numbers: x1 y1 x2 y2 x3 y3 x4 y4");
  }
  return Quad{Point{v[0], v[1]}, Point{v[2], v[3]}, Point{v[4], v[5]}, Point{v[6], v[7]}};
}

std::string quad_string(const Quad& q) {
  std::ostringstream s;
  s.precision(6);
  for (std::size_t i = 0; i < 4; ++i) s << (i ? " " : "") << q[i].x << ' ' << q[i].y;
  return s.str();
}

std::string index_name(std::size_t i) {
  std::ostringstream s;
  s << std::setw(6) << std::setfill('0') << i << ".ppm";
  return s.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"License-plate recognition: corpus fabrication, training, inference and evaluation",
               "lpr"};
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  std::uint64_t seed = 1;
  std::string config_file;
  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
    cmd->add_option("--config", config_file, "File of key=value lines; flags override it");
  };

  // fabricate
  auto* fab = app.add_subcommand("fabricate", "Write a synthetic plate corpus and its manifest");
  std::size_t fab_count = 100, fab_group = 1, fab_length = 0;
  std::string fab_out, fab_letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ", fab_digits = "0123456789";
  std::string fab_glyphs;
  bool fab_augment = false, fab_tilt = false;
  common(fab);
  fab->add_option("--count", fab_count, "Number of distinct plates")->capture_default_str();
  fab->add_option("--out", fab_out, "Output directory")->required();
  fab->add_option("--length", fab_length, "Only templates with this many characters (0: all)")
      ->check(CLI::IsMember({0, 4, 5, 6, 7}));
  fab->add_option("--letters", fab_letters)->capture_default_str();
  fab->add_option("--digits", fab_digits)->capture_default_str();
  fab->add_option("--glyphs", fab_glyphs, "Directory of <SYMBOL>.pgm glyphs (default: built-in font)");
  fab->add_flag("--augment", fab_augment, "Blur, noise, lighting and geometric jitter");
  fab->add_flag("--tilt", fab_tilt, "Tilt plates inside the crop and record their corners");
  fab->add_option("--group-size", fab_group, "Augmented views per plate, sharing a group id")
      ->check(CLI::PositiveNumber);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Autoencoder pretraining of the recognizer encoder");
  ModelOptions pre_model;
  OptimOptions pre_opt;
  std::string pre_manifest, pre_out;
  common(pre);
  add_model_options(pre, pre_model);
  add_optim_options(pre, pre_opt);
  pre->add_option("--manifest", pre_manifest, "Images to reconstruct (labels ignored)")->required();
  pre->add_option("--out", pre_out, "Recognizer weights with the pretrained encoder")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train the recognizer with CTC loss");
  ModelOptions tr_model;
  OptimOptions tr_opt;
  std::string tr_manifest, tr_heldout, tr_out, tr_init;
  common(tr);
  add_model_options(tr, tr_model);
  add_optim_options(tr, tr_opt);
  tr->add_option("--manifest", tr_manifest, "Labeled training manifest")->required();
  tr->add_option("--heldout", tr_heldout, "Labeled manifest scored after every epoch");
  tr->add_option("--init", tr_init, "Start from these weights (e.g. a pretrained encoder)");
  tr->add_option("--out", tr_out, "Output weights")->required();

  // train-corners
  auto* tc = app.add_subcommand("train-corners", "Train the corner regressor used for rectification");
  OptimOptions tc_opt;
  std::string tc_manifest, tc_out;
  common(tc);
  add_optim_options(tc, tc_opt);
  tc->add_option("--manifest", tc_manifest, "Manifest whose entries carry corners")->required();
  tc->add_option("--out", tc_out, "Output weights")->required();

  // recognize
  auto* rec = app.add_subcommand("recognize", "Read plates from images");
  std::string rec_weights, rec_corners, rec_manifest;
  std::vector<std::string> rec_images;
  std::size_t rec_beam = 1;
  common(rec);
  rec->add_option("--weights", rec_weights, "Recognizer weights")->required();
  rec->add_option("--corners", rec_corners, "Corner model weights; enables rectification");
  rec->add_option("--manifest", rec_manifest, "Images to read (labels optional)");
  rec->add_option("--beam", rec_beam, "Beam width (1: greedy)")->check(CLI::PositiveNumber);
  rec->add_option("images", rec_images, "Image files");

  // rectify
  auto* rect = app.add_subcommand("rectify", "Warp a plate quad onto the 128x32 frontal frame");
  std::string rect_image, rect_out, rect_quad, rect_corners;
  common(rect);
  rect->add_option("--image", rect_image)->required();
  rect->add_option("--out", rect_out, "Output PGM/PPM")->required();
  auto* quad_opt = rect->add_option("--quad", rect_quad, "Corners TL TR BR BL: \"x1 y1 ... x4 y4\"");
  rect->add_option("--corners", rect_corners, "Corner model weights")->excludes(quad_opt);

  // eval
  auto* ev = app.add_subcommand("eval", "Score a labeled manifest");
  std::string ev_weights, ev_corners, ev_manifest;
  std::size_t ev_beam = 1;
  bool ev_failures = false;
  common(ev);
  ev->add_option("--weights", ev_weights)->required();
  ev->add_option("--corners", ev_corners, "Corner model weights; enables rectification");
  ev->add_option("--manifest", ev_manifest)->required();
  ev->add_option("--beam", ev_beam)->check(CLI::PositiveNumber);
  ev->add_flag("--failures", ev_failures, "Also list every misread image");

  // bench
  auto* be = app.add_subcommand("bench", "Recognition throughput (images in memory)");
  std::string be_weights, be_corners, be_manifest;
  std::size_t be_n = 100, be_repeats = 5, be_synthetic = 16;
  common(be);
  be->add_option("--weights", be_weights)->required();
  be->add_option("--corners", be_corners, "Corner model weights; enables rectification");
  be->add_option("--manifest", be_manifest, "Images to cycle through (default: synthetic plates)");
  be->add_option("--n", be_n, "Images per timed repeat")->check(CLI::PositiveNumber)->capture_default_str();
  be->add_option("--repeats", be_repeats)->check(CLI::PositiveNumber)->capture_default_str();
  be->add_option("--synthetic", be_synthetic, "Synthetic plates when no manifest is given")
      ->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const CLI::App* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* target = &app;
    for (const CLI::App* sub : app.get_subcommands()) target = sub;
    err << target->help();
    return e.get_exit_code() ? e.get_exit_code() : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (fab->parsed()) {
      fs::create_directories(fab_out);
      SynthOptions opts;
      if (fab_length) opts.fabricate.templates = templates_with_length(fab_length);
      opts.fabricate.letters = fab_letters;
      opts.fabricate.digits = fab_digits;
      AugmentConfig aug;
      aug.seed = seed;
      if (fab_augment && fab_group == 1) opts.augment = aug;
      GlyphSet glyphs = fab_glyphs.empty()
                            ? GlyphSet::builtin()
                            : GlyphSet::load_directory(fab_glyphs, fab_letters + fab_digits + "-");
      std::mt19937_64 rng(seed);
      std::vector<ManifestEntry> entries;
      for (std::size_t i = 0; i < fab_count; ++i) {
        const SynthPlate plate = synthesize_plate(rng, glyphs, opts);
        for (std::size_t k = 0; k < fab_group; ++k) {
          Image img = plate.image;
          if (fab_augment && fab_group > 1) img = augment(img, aug, rng);
          ManifestEntry e;
          e.label = plate.label.text;
          if (fab_tilt) {
            TiltedPlate t = tilt_plate(img, rng);
            img = std::move(t.image);
            e.corners = t.corners;
          }
          if (fab_group > 1) e.group = "g" + std::to_string(i);
          e.image = fs::path(fab_out) / index_name(entries.size());
          write_pnm(img, e.image);
          entries.push_back(std::move(e));
        }
      }
      const fs::path manifest = fs::path(fab_out) / "manifest.tsv";
      write_manifest(entries, manifest);
      Record()("event", "fabricate")("images", entries.size())("plates", fab_count)(
          "manifest", manifest.string())("seed", std::to_string(seed))
          .emit(out);
    } else if (pre->parsed()) {
      const Alphabet alphabet(pre_model.alphabet);
      RecognizerConfig rc;
      rc.width = pre_model.width;
      rc.num_classes = std::size_t(alphabet.num_classes());
      rc.seed = seed;
      RecognizerModel model(rc);
      AutoencoderDecoder decoder(rc, seed + 1);
      std::vector<Image> images;
      for (const ManifestEntry& e : load_manifest(pre_manifest)) images.push_back(read_pnm(e.image));
      const TrainResult r =
          pretrain_autoencoder(model, decoder, images, make_train_config(pre_opt, seed, out));
      save_weights(model, alphabet, pre_out);
      Record()("event", "pretrain")("epochs", r.epochs.size())(
          "final_loss", r.epochs.empty() ? 0.0 : r.epochs.back().train_loss)(
          "reconstruction_mse", reconstruction_error(model, decoder, images))(
          "seconds", r.seconds)("weights", pre_out)
          .emit(out);
    } else if (tr->parsed()) {
      std::optional<LoadedRecognizer> init;
      if (!tr_init.empty()) init.emplace(load_recognizer(tr_init));
      const Alphabet alphabet = init ? init->alphabet : Alphabet(tr_model.alphabet);
      RecognizerConfig rc;
      rc.width = init ? init->model.config().width : tr_model.width;
      rc.num_classes = std::size_t(alphabet.num_classes());
      rc.seed = seed;
      RecognizerModel model(rc);
      // A pretraining checkpoint contributes its encoder only.
      if (init) transfer_encoder(init->model, model);
      const auto train = load_labeled(tr_manifest);
      std::vector<LabeledImage> heldout;
      if (!tr_heldout.empty()) heldout = load_labeled(tr_heldout);
      const TrainResult r = train_recognizer(model, alphabet, train,
                                             heldout.empty() ? nullptr : &heldout,
                                             make_train_config(tr_opt, seed, out));
      save_weights(model, alphabet, tr_out);
      Record rr;
      rr("event", "train")("epochs", r.epochs.size())(
          "final_loss", r.epochs.empty() ? 0.0 : r.epochs.back().train_loss);
      if (!heldout.empty()) rr("heldout_accuracy", recognizer_accuracy(model, alphabet, heldout));
      rr("seconds", r.seconds)("weights", tr_out).emit(out);
    } else if (tc->parsed()) {
      std::vector<CornerSample> samples;
      for (const ManifestEntry& e : load_manifest(tc_manifest))
        if (e.corners) samples.push_back({read_pnm(e.image), *e.corners});
      if (samples.empty()) throw TrainingDataError(tc_manifest + " has no entries with corners");
      CornerModel model(seed);
      const TrainResult r = train_corner_model(model, samples, make_train_config(tc_opt, seed, out));
      save_weights(model, tc_out);
      Record()("event", "train-corners")("epochs", r.epochs.size())(
          "mean_corner_error_px", mean_corner_error(model, samples))("seconds", r.seconds)(
          "weights", tc_out)
          .emit(out);
    } else if (rec->parsed()) {
      LoadedRecognizer loaded = load_recognizer(rec_weights);
      std::optional<CornerModel> corners;
      if (!rec_corners.empty()) corners.emplace(load_corner_model(rec_corners));
      RecognizeOptions o;
      o.beam_width = rec_beam;
      o.rectify = corners.has_value();
      o.corner_model = corners ? &*corners : nullptr;
      std::vector<std::pair<std::string, std::string>> jobs;  // path, truth
      if (!rec_manifest.empty())
        for (const ManifestEntry& e : load_manifest(rec_manifest)) jobs.emplace_back(e.image.string(), e.label);
      for (const std::string& p : rec_images) jobs.emplace_back(p, "");
      if (jobs.empty()) throw std::invalid_argument("recognize: no images given");
      for (const auto& [path, truth] : jobs) {
        const Recognition r = recognize(loaded.model, loaded.alphabet, read_pnm(path), o);
        Record line;
        line("image", path)("text", r.text)("confidence", r.confidence)("grammar_ok", r.grammar_ok);
        if (!truth.empty()) line("truth", truth)("correct", r.text == truth);
        if (r.corners) line("corners", quad_string(*r.corners));
        line.emit(out);
      }
    } else if (rect->parsed()) {
      const Image img = read_pnm(rect_image);
      Quad q;
      if (!rect_quad.empty()) {
        q = parse_quad(rect_quad);
      } else if (!rect_corners.empty()) {
        CornerModel cm = load_corner_model(rect_corners);
        q = denormalize_corners(cm.predict(to_two_channel(img)), img.width, img.height);
      } else {
        throw std::invalid_argument("rectify: give --quad or --corners");
      }
      write_pnm(rectify_plate(img, q, kPlateWidth, kPlateHeight), rect_out);
      Record()("event", "rectify")("image", rect_image)("corners", quad_string(q))("out", rect_out)
          .emit(out);
    } else if (ev->parsed()) {
      LoadedRecognizer loaded = load_recognizer(ev_weights);
      std::optional<CornerModel> corners;
      if (!ev_corners.empty()) corners.emplace(load_corner_model(ev_corners));
      RecognizeOptions o;
      o.beam_width = ev_beam;
      o.rectify = corners.has_value();
      o.corner_model = corners ? &*corners : nullptr;
      const auto items = load_items(ev_manifest);
      for (const EvalItem& it : items)
        if (it.truth.empty()) throw ManifestError("eval: " + it.name + " has no label");
      const EvalReport r = evaluate(loaded.model, loaded.alphabet, items, o);
      if (ev_failures) {
        for (const EvalFailure& f : r.failures)
          Record()("event", "failure")("image", f.name)("truth", f.truth)("prediction", f.prediction)
              .emit(out);
      }
      Record line;
      line("event", "eval")("total", r.total)("correct", r.correct)("plate_accuracy", r.plate_accuracy)(
          "char_accuracy", r.char_accuracy);
      if (r.groups) line("groups", r.groups)("groups_correct", r.groups_correct)("group_accuracy", r.group_accuracy);
      line("images_per_second", r.images_per_second)("rectify", o.rectify).emit(out);
    } else if (be->parsed()) {
      LoadedRecognizer loaded = load_recognizer(be_weights);
      std::optional<CornerModel> corners;
      if (!be_corners.empty()) corners.emplace(load_corner_model(be_corners));
      RecognizeOptions o;
      o.rectify = corners.has_value();
      o.corner_model = corners ? &*corners : nullptr;
      std::vector<Image> images;
      if (!be_manifest.empty()) {
        for (const ManifestEntry& e : load_manifest(be_manifest)) images.push_back(read_pnm(e.image));
      } else {
        std::mt19937_64 rng(seed);
        const GlyphSet glyphs = GlyphSet::builtin();
        for (std::size_t i = 0; i < be_synthetic; ++i)
          images.push_back(synthesize_plate(rng, glyphs).image);
      }
      const FpsReport f = bench_fps(loaded.model, loaded.alphabet, images, be_n, o, be_repeats);
      Record line;
      line("event", "bench")("n", be_n)("repeats", be_repeats)("fps_mean", f.mean)("fps_stdev", f.stdev);
      for (std::size_t i = 0; i < f.repeats.size(); ++i) line("fps_" + std::to_string(i + 1), f.repeats[i]);
      line("rectify", o.rectify).emit(out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace lpr
