#include "udet/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "udet/data.hpp"
#include "udet/gemm.hpp"
#include "udet/gradsuite.hpp"
#include "udet/model.hpp"
#include "udet/overlay.hpp"
#include "udet/train.hpp"

namespace udet {

namespace {

namespace fs = std::filesystem;

/// Raised when a self-check (gradcheck, params) fails.
struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_stamp(const fs::path& dir, const std::string& command, std::uint64_t seed,
                 std::uint64_t config_hash) {
  fs::create_directories(dir);
  std::ofstream out(dir / "stamp.txt");
  if (!out) throw DataError("cannot write stamp in " + dir.string());
  out << "command = " << command << '\n'
      << "seed = " << seed << '\n'
      << "config_hash = " << hex64(config_hash) << '\n'
      << "version = " << kVersion << '\n';
}

fs::path manifest_path(const fs::path& data) {
  if (fs::is_directory(data)) return data / "manifest.csv";
  return data;
}

std::string opt_text(const std::optional<double>& v) { return v ? format_value(*v) : ""; }
std::string opt_text(const std::optional<bool>& v) { return v ? (*v ? "1" : "0") : ""; }

void check_size(const UDetModel<float>& model, const Image& image, const std::string& id) {
  const std::size_t s = model.graph().input_size;
  if (image.height != s || image.width != s)
    throw DataError(id + " is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                    " but the checkpoint expects " + std::to_string(s) + "x" + std::to_string(s));
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  std::size_t count = 0;
  std::size_t size = 128;
  std::uint64_t seed = 0;
  double attached_fraction = 0.25;
  // 0 picks 4/128 and 10/128 of the image side.
  double radius_min = 0;
  double radius_max = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.count == 0) throw std::invalid_argument("--count must be at least 1");
  if (!(a.attached_fraction >= 0 && a.attached_fraction <= 1))
    throw std::invalid_argument("--attached-fraction must be in [0, 1]");
  fs::create_directories(a.out / "images");
  fs::create_directories(a.out / "masks");
  std::vector<ManifestRow> rows;
  for (std::size_t i = 0; i < a.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "phantom_%04zu", i);
    Rng rng(derive_seed(a.seed, {i}));
    NoduleSpec spec;
    const double side = static_cast<double>(a.size);
    spec.radius_min = a.radius_min > 0 ? a.radius_min : side * 4.0 / 128.0;
    spec.radius_max = a.radius_max > 0 ? a.radius_max : side * 10.0 / 128.0;
    spec.attach_to_wall = uniform01(rng) < a.attached_fraction;
    const Sample s = generate_phantom(rng, a.size, spec, id);
    ManifestRow row{id, a.out / "images" / (std::string(id) + ".mhd"),
                    a.out / "masks" / (std::string(id) + ".mhd"), s.meta.diameter_mm, s.meta.attached};
    write_mhd(volume_from_image(s.image, kPhantomSpacingMm), row.image_path);
    write_mhd(volume_from_mask(s.mask, kPhantomSpacingMm), row.mask_path);
    rows.push_back(std::move(row));
  }
  write_manifest(rows, a.out / "manifest.csv");
  std::ostringstream key;
  key << "count=" << a.count << ";size=" << a.size << ";attached=" << a.attached_fraction
      << ";rmin=" << a.radius_min << ";rmax=" << a.radius_max;
  write_stamp(a.out, "synth", a.seed, fnv1a(key.str()));
  out << "wrote " << a.count << " samples to " << a.out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path data;
  fs::path config;
  fs::path out;
  std::optional<std::size_t> folds;
};

void write_fold_table(const fs::path& path, const std::vector<FoldResult>& folds) {
  std::ofstream o(path);
  o << "fold,best_epoch,epochs_run,stopped_early,val_loss,dsc,sen,ppv\n";
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& r = folds[f];
    o << f << ',' << r.best_epoch << ',' << r.history.size() << ',' << (r.stopped_early ? 1 : 0) << ','
      << format_value(r.best_val_loss) << ',' << format_value(r.best_val.dsc) << ','
      << format_value(r.best_val.sen) << ',' << format_value(r.best_val.ppv) << '\n';
  }
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = TrainConfig::load(a.config);
  const std::size_t folds = a.folds.value_or(cfg.folds);
  if (folds == 0) throw std::invalid_argument("--folds must be at least 1");
  if (folds >= 2) cfg.folds = folds;
  cfg.validate();

  const auto samples = load_dataset(manifest_path(a.data));
  if (samples.empty()) throw DataError("manifest lists no samples");
  fs::create_directories(a.out);
  write_stamp(a.out, "train", cfg.seed, cfg.hash());
  {
    std::ofstream c(a.out / "config.txt");
    c << cfg.to_text();
  }
  MetricsLog log(a.out / "metrics.csv");

  if (folds == 1) {
    // One model; the non-test samples serve for both fitting and monitoring.
    std::vector<Sample> train;
    if (cfg.test_fraction > 0) {
      const auto split = split_dataset(samples.size(), cfg.test_fraction, 2, cfg.seed);
      for (std::size_t i : split.train) train.push_back(samples[i]);
    } else {
      train = samples;
    }
    TrainOutputs o;
    o.log = &log;
    o.checkpoint_dir = a.out;
    std::vector<FoldResult> runs;
    runs.push_back(train_fold(train, train, cfg, o));
    write_fold_table(a.out / "folds.csv", runs);
    const FoldResult& r = runs.front();
    out << "best epoch " << r.best_epoch << " of " << r.history.size() << ", val loss "
        << format_value(r.best_val_loss) << ", DSC " << format_value(r.best_val.dsc) << '\n';
    return kExitOk;
  }

  const CrossValidationResult cv = cross_validate(samples, cfg, &log, a.out);
  write_fold_table(a.out / "folds.csv", cv.folds);
  {
    std::ofstream s(a.out / "summary.csv");
    s << "metric,mean,sd,count,excluded\n";
    const std::pair<const char*, const Summary*> rows[] = {{"dsc", &cv.dsc}, {"sen", &cv.sen}, {"ppv", &cv.ppv}};
    for (const auto& [name, sm] : rows)
      s << name << ',' << format_value(sm->mean) << ',' << format_value(sm->sd) << ',' << sm->count << ','
        << sm->excluded << '\n';
  }
  {
    std::ofstream s(a.out / "split.csv");
    s << "id,role,fold\n";
    for (std::size_t i : cv.split.test) s << samples[i].meta.id << ",test,\n";
    for (std::size_t f = 0; f < cv.split.folds.size(); ++f)
      for (std::size_t i : cv.split.folds[f]) s << samples[i].meta.id << ",train," << f << '\n';
  }
  char line[160];
  std::snprintf(line, sizeof line, "cross-validation over %zu folds: DSC %.4f +/- %.4f, SEN %.4f +/- %.4f, PPV %.4f +/- %.4f\n",
                cv.folds.size(), cv.dsc.mean, cv.dsc.sd, cv.sen.mean, cv.sen.sd, cv.ppv.mean, cv.ppv.sd);
  out << line;
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  fs::path data;
  std::optional<fs::path> ckpt;
  std::optional<fs::path> pred;  // directory of <id>.mhd or <id>_pred.mhd masks
  fs::path out;
  double diameter_mm = 6.0;
  std::size_t bins = 10;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.bins == 0) throw std::invalid_argument("--bins must be at least 1");
  if (a.ckpt.has_value() == a.pred.has_value()) throw std::invalid_argument("eval needs exactly one of --ckpt and --pred");
  std::optional<UDetModel<float>> model;
  if (a.ckpt) model.emplace(load_checkpoint<float>(*a.ckpt));
  const auto rows = read_manifest(manifest_path(a.data));
  if (rows.empty()) throw DataError("manifest lists no samples");

  std::vector<MetricsRecord> records;
  std::vector<SampleMeta> metas;
  for (const auto& row : rows) {
    const Sample s = load_sample(row);
    if (model) {
      check_size(*model, s.image, s.meta.id);
      records.push_back(evaluate_sample(*model, s, ClassWeight{1.0}).record);
    } else {
      fs::path file = *a.pred / (s.meta.id + ".mhd");
      if (!fs::exists(file)) file = *a.pred / (s.meta.id + "_pred.mhd");
      const BinaryMask pred = mask_from_volume(read_mhd(file));
      if (pred.height != s.mask.height || pred.width != s.mask.width)
        throw DataError(s.meta.id + ": predicted mask size differs from the ground truth");
      MetricsRecord r = evaluate_masks(s.meta.id, s.mask, pred);
      const std::vector<double> p(pred.values.begin(), pred.values.end()), y(s.mask.values.begin(), s.mask.values.end());
      r.loss = binary_cross_entropy(p, y);
      records.push_back(std::move(r));
    }
    metas.push_back(s.meta);
  }

  fs::create_directories(a.out);
  std::ostringstream key;
  key << (a.ckpt ? "ckpt=" + fs::absolute(*a.ckpt).string() : "pred=" + fs::absolute(*a.pred).string())
      << ";diameter=" << a.diameter_mm << ";bins=" << a.bins;
  write_stamp(a.out, "eval", 0, fnv1a(key.str()));
  {
    std::ofstream o(a.out / "per_sample.csv");
    o << "id,loss,dsc,sen,ppv,diameter_mm,attached\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      o << r.tag << ',' << format_value(r.loss) << ',' << format_value(r.dsc) << ',' << format_value(r.sen)
        << ',' << format_value(r.ppv) << ',' << opt_text(metas[i].diameter_mm) << ','
        << opt_text(metas[i].attached) << '\n';
    }
  }

  auto summary_of = [&](const std::vector<std::size_t>& idx, auto field) {
    std::vector<std::optional<double>> v;
    for (std::size_t i : idx) v.push_back(records[i].*field);
    return summarize(v);
  };
  std::vector<std::size_t> all(records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  {
    std::ofstream o(a.out / "aggregate.csv");
    o << "metric,mean,sd,count,excluded\n";
    std::vector<double> losses;
    for (const auto& r : records) losses.push_back(r.loss);
    const Summary ls = summarize(losses);
    o << "loss," << format_value(ls.mean) << ',' << format_value(ls.sd) << ',' << ls.count << ",0\n";
    for (auto [name, field] : {std::pair{"dsc", &MetricsRecord::dsc}, std::pair{"sen", &MetricsRecord::sen},
                               std::pair{"ppv", &MetricsRecord::ppv}}) {
      const Summary s = summary_of(all, field);
      o << name << ',' << format_value(s.mean) << ',' << format_value(s.sd) << ',' << s.count << ','
        << s.excluded << '\n';
    }
  }
  write_histogram_csv(dsc_histogram(records, a.bins), a.out / "histogram.csv");

  struct Group {
    std::string name;
    std::vector<std::size_t> idx;
  };
  char threshold[32];
  std::snprintf(threshold, sizeof threshold, "%g", a.diameter_mm);
  std::vector<Group> groups{{"all", all},
                            {std::string("diameter < ") + threshold + " mm", {}},
                            {std::string("diameter >= ") + threshold + " mm", {}},
                            {"attached", {}},
                            {"not attached", {}}};
  for (std::size_t i = 0; i < metas.size(); ++i) {
    if (metas[i].diameter_mm) groups[*metas[i].diameter_mm < a.diameter_mm ? 1 : 2].idx.push_back(i);
    if (metas[i].attached) groups[*metas[i].attached ? 3 : 4].idx.push_back(i);
  }
  {
    std::ofstream o(a.out / "stratified.csv");
    o << "group,count,dsc_mean,dsc_sd,sen_mean,sen_sd,ppv_mean,ppv_sd\n";
    for (const auto& g : groups) {
      o << g.name << ',' << g.idx.size();
      for (auto field : {&MetricsRecord::dsc, &MetricsRecord::sen, &MetricsRecord::ppv}) {
        const Summary s = summary_of(g.idx, field);
        if (s.count == 0) o << ",nan,nan";
        else o << ',' << format_value(s.mean) << ',' << format_value(s.sd);
      }
      o << '\n';
    }
  }

  char line[200];
  std::snprintf(line, sizeof line, "%-22s %6s %18s %18s %18s\n", "group", "n", "DSC", "SEN", "PPV");
  out << line;
  for (const auto& g : groups) {
    std::string cells[3];
    int k = 0;
    for (auto field : {&MetricsRecord::dsc, &MetricsRecord::sen, &MetricsRecord::ppv}) {
      const Summary s = summary_of(g.idx, field);
      char c[40];
      if (s.count == 0) std::snprintf(c, sizeof c, "-");
      else std::snprintf(c, sizeof c, "%.2f%% +/- %.2f", 100 * s.mean, 100 * s.sd);
      cells[k++] = c;
    }
    std::snprintf(line, sizeof line, "%-22s %6zu %18s %18s %18s\n", g.name.c_str(), g.idx.size(),
                  cells[0].c_str(), cells[1].c_str(), cells[2].c_str());
    out << line;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  fs::path image;
  fs::path ckpt;
  fs::path out;
  std::optional<fs::path> mask;
  double threshold = 0.5;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  if (!(a.threshold > 0 && a.threshold < 1)) throw std::invalid_argument("--threshold must be in (0, 1)");
  const auto model = load_checkpoint<float>(a.ckpt);
  const MhdVolume vol = read_mhd(a.image);
  const Image image = image_from_volume(vol);
  const std::string stem = a.image.stem().string();
  check_size(model, image, stem);
  std::optional<BinaryMask> truth;
  if (a.mask) {
    truth = mask_from_volume(read_mhd(*a.mask));
    if (truth->height != image.height || truth->width != image.width)
      throw DataError("ground-truth mask size differs from the image");
  }

  const auto probs = predict_image(model, image);
  const BinaryMask pred = binarize(probs, image.height, image.width, a.threshold);
  fs::create_directories(a.out);
  MhdVolume mv = volume_from_mask(pred, 1.0);
  mv.spacing.assign(vol.spacing.begin(), vol.spacing.begin() + 2);
  write_mhd(mv, a.out / (stem + "_pred.mhd"));
  write_ppm(a.out / (stem + "_overlay.ppm"), image.height, image.width,
            render_overlay(image, truth ? &*truth : nullptr, pred));
  std::ostringstream key;
  key << "ckpt=" << fs::absolute(a.ckpt).string() << ";threshold=" << a.threshold;
  write_stamp(a.out, "predict", 0, fnv1a(key.str()));

  out << "predicted " << pred.count() << " foreground pixels";
  if (truth) {
    const auto r = evaluate_masks(stem, *truth, pred);
    out << "; DSC " << format_value(r.dsc) << " SEN " << format_value(r.sen) << " PPV " << format_value(r.ppv);
  }
  out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  bool skip_end_to_end = false;
  std::optional<fs::path> out;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  SuiteOptions opts;
  opts.seed = a.seed;
  opts.end_to_end = !a.skip_end_to_end;
  std::ostringstream report;
  std::size_t failed = 0;
  const auto results = run_gradient_suite(opts, [&](const SuiteCase& c) {
    char line[240];
    std::snprintf(line, sizeof line, "%-36s %-4s max rel err %.3e (tol %.0e, %zu elements)%s%s\n",
                  c.name.c_str(), c.passed ? "ok" : "FAIL", c.max_rel_error, c.tolerance, c.checked,
                  c.detail.empty() ? "" : ": ", c.detail.c_str());
    out << line << std::flush;
    report << line;
    if (!c.passed) ++failed;
  });
  if (a.out) {
    write_stamp(*a.out, "gradcheck", a.seed, fnv1a(opts.end_to_end ? "full" : "ops"));
    std::ofstream(*a.out / "gradcheck.txt") << report.str();
  }
  out << results.size() - failed << '/' << results.size() << " cases passed\n";
  if (failed) throw CheckFailure(std::to_string(failed) + " gradient checks failed");
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ParamsArgs {
  std::string variant = "udet";
  std::size_t size = 512;
  std::size_t width_divisor = 1;
  std::optional<fs::path> out;
};

int cmd_params(const ParamsArgs& a, std::ostream& out) {
  const ModelGraph g = build(VariantSpec::from_name(a.variant), a.size, a.width_divisor);
  const AuditTable t = audit_parameters(g);
  const BifpnCensus c = bifpn_census(g);
  std::ostringstream text;
  text << "variant " << g.variant.name() << ", input " << a.size << ", width 1/" << a.width_divisor << "\n"
       << format_audit(t) << "bifpn census: depthwise " << c.depthwise << ", batch norm " << c.batch_norm
       << ", relu " << c.relu << ", maxpool " << c.maxpool << ", lateral conv " << c.lateral_conv << '\n';
  out << text.str();
  if (a.out) {
    std::ostringstream key;
    key << a.variant << ';' << a.size << ';' << a.width_divisor;
    write_stamp(*a.out, "params", 0, fnv1a(key.str()));
    std::ofstream(*a.out / "params.txt") << text.str();
  }
  if (!t.ok()) throw CheckFailure("parameter counts differ from the reference table beyond tolerance");
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"U-Det lung nodule segmentation", "udet"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "write synthetic phantom slices and a manifest");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--count", synth.count, "number of samples")->required();
  s->add_option("--size", synth.size, "image side in pixels");
  s->add_option("--seed", synth.seed, "random seed");
  s->add_option("--attached-fraction", synth.attached_fraction, "share of wall-attached nodules");
  s->add_option("--radius-min", synth.radius_min, "smallest nodule semi-axis (pixels)");
  s->add_option("--radius-max", synth.radius_max, "largest nodule semi-axis (pixels)");

  TrainArgs train;
  std::size_t folds = 0;
  auto* t = app.add_subcommand("train", "train with cross-validation (or a single run with --folds 1)");
  t->add_option("--data", train.data, "dataset directory or manifest")->required();
  t->add_option("--config", train.config, "key = value config file")->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "output directory")->required();
  auto* folds_opt = t->add_option("--folds", folds, "number of folds (default from config)");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "score a checkpoint (or precomputed masks) on a dataset");
  e->add_option("--data", eval.data, "dataset directory or manifest")->required();
  auto* ckpt_opt = e->add_option("--ckpt", eval.ckpt, "checkpoint file");
  e->add_option("--pred", eval.pred, "directory of predicted masks named <id>.mhd or <id>_pred.mhd")
      ->excludes(ckpt_opt);
  e->add_option("--out", eval.out, "output directory")->required();
  e->add_option("--diameter-mm", eval.diameter_mm, "stratification threshold");
  e->add_option("--bins", eval.bins, "DSC histogram bins");

  PredictArgs predict;
  std::string mask_path;
  auto* p = app.add_subcommand("predict", "segment one slice and write mask and overlay");
  p->add_option("--image", predict.image, "input .mhd slice")->required();
  p->add_option("--ckpt", predict.ckpt, "checkpoint file")->required();
  p->add_option("--out", predict.out, "output directory")->required();
  auto* mask_opt = p->add_option("--mask", mask_path, "ground-truth .mhd mask for the overlay");
  p->add_option("--threshold", predict.threshold, "probability threshold");

  GradcheckArgs grad;
  std::string grad_out;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", grad.seed, "random seed");
  gc->add_flag("--skip-end-to-end", grad.skip_end_to_end, "only the op-level cases");
  auto* grad_out_opt = gc->add_option("--out", grad_out, "directory for the report and stamp");

  ParamsArgs params;
  std::string params_out;
  auto* pa = app.add_subcommand("params", "parameter audit against the reference table");
  pa->add_option("--variant", params.variant, "udet, udet-relu, unet, unet-mish, encoder-bifpn, encoder-bifpn-mish");
  pa->add_option("--size", params.size, "input side");
  pa->add_option("--width-divisor", params.width_divisor, "channel divisor (1, 2, 4, 8)");
  auto* params_out_opt = pa->add_option("--out", params_out, "directory for the report and stamp");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    configure_threads_from_env();
    if (*s) return cmd_synth(synth, out);
    if (*t) {
      if (*folds_opt) train.folds = folds;
      return cmd_train(train, out);
    }
    if (*e) return cmd_eval(eval, out);
    if (*p) {
      if (*mask_opt) predict.mask = fs::path(mask_path);
      return cmd_predict(predict, out);
    }
    if (*gc) {
      if (*grad_out_opt) grad.out = fs::path(grad_out);
      return cmd_gradcheck(grad, out);
    }
    if (*pa) {
      if (*params_out_opt) params.out = fs::path(params_out);
      return cmd_params(params, out);
    }
  } catch (const CheckFailure& ex) {
    err << "check failed: " << ex.what() << '\n';
    return kExitCheck;
  } catch (const std::invalid_argument& ex) {
    err << "usage error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace udet
