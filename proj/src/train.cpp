#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "udet/train.hpp"

namespace udet {

// ---------------------------------------------------------------------------
// Config

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
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

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument("config: " + key + " needs a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("config: " + key + " needs a non-negative integer, got '" + v + "'");
  return std::stoull(v);
}

struct AugmentFlag {
  const char* name;
  bool AugmentSpec::*field;
};

constexpr AugmentFlag kAugmentFlags[] = {
    {"flip_h", &AugmentSpec::flip_h}, {"flip_v", &AugmentSpec::flip_v},
    {"shift", &AugmentSpec::shift},   {"rotate", &AugmentSpec::rotate},
    {"zoom", &AugmentSpec::zoom},     {"shear", &AugmentSpec::shear},
    {"elastic", &AugmentSpec::elastic}, {"salt_pepper", &AugmentSpec::salt_pepper},
};

std::string augment_list(const AugmentSpec& a) {
  std::string out;
  for (const auto& f : kAugmentFlags)
    if (a.*(f.field)) out += (out.empty() ? "" : ",") + std::string(f.name);
  return out.empty() ? "none" : out;
}

AugmentSpec parse_augment_list(AugmentSpec base, const std::string& v) {
  for (const auto& f : kAugmentFlags) base.*(f.field) = false;
  if (v == "none" || v.empty()) return base;
  if (v == "all") {
    for (const auto& f : kAugmentFlags) base.*(f.field) = true;
    return base;
  }
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    auto it = std::find_if(std::begin(kAugmentFlags), std::end(kAugmentFlags),
                           [&](const AugmentFlag& f) { return item == f.name; });
    if (it == std::end(kAugmentFlags)) throw std::invalid_argument("config: unknown augmentation '" + item + "'");
    base.*(it->field) = true;
  }
  return base;
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  require(lr0 > 0, "lr0 must be positive");
  require(0 < beta1 && beta1 < beta2 && beta2 < 1, "need 0 < beta1 < beta2 < 1");
  require(decay >= 0, "decay must be non-negative");
  require(adam_eps > 0, "adam_eps must be positive");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(early_stop_patience >= 1 && plateau_patience >= 1, "patiences must be at least 1");
  require(plateau_factor > 0 && plateau_factor <= 1, "plateau_factor must be in (0, 1]");
  require(max_epochs >= 1, "max_epochs must be at least 1");
  require(!omega_p || *omega_p > 0, "omega_p must be positive");
  require(folds >= 2, "folds must be at least 2");
  require(test_fraction >= 0 && test_fraction < 1, "test_fraction must be in [0, 1)");
  require(loader_threads >= 1, "loader_threads must be at least 1");
  VariantSpec::from_name(variant);
  augment.validate();
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o << "lr0 = " << fmt_double(lr0) << '\n'
    << "beta1 = " << fmt_double(beta1) << '\n'
    << "beta2 = " << fmt_double(beta2) << '\n'
    << "decay = " << fmt_double(decay) << '\n'
    << "adam_eps = " << fmt_double(adam_eps) << '\n'
    << "batch_size = " << batch_size << '\n'
    << "early_stop_patience = " << early_stop_patience << '\n'
    << "plateau_factor = " << fmt_double(plateau_factor) << '\n'
    << "plateau_patience = " << plateau_patience << '\n'
    << "max_epochs = " << max_epochs << '\n'
    << "seed = " << seed << '\n'
    << "omega_p = " << (omega_p ? fmt_double(*omega_p) : std::string("auto")) << '\n'
    << "variant = " << variant << '\n'
    << "width_divisor = " << width_divisor << '\n'
    << "input_size = " << input_size << '\n'
    << "folds = " << folds << '\n'
    << "test_fraction = " << fmt_double(test_fraction) << '\n'
    << "augment = " << augment_list(augment) << '\n'
    << "augment_probability = " << fmt_double(augment.probability) << '\n'
    << "loader_threads = " << loader_threads << '\n';
  return o.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"lr0", [](TrainConfig& c, auto& k, auto& v) { c.lr0 = parse_double(k, v); }},
      {"beta1", [](TrainConfig& c, auto& k, auto& v) { c.beta1 = parse_double(k, v); }},
      {"beta2", [](TrainConfig& c, auto& k, auto& v) { c.beta2 = parse_double(k, v); }},
      {"decay", [](TrainConfig& c, auto& k, auto& v) { c.decay = parse_double(k, v); }},
      {"adam_eps", [](TrainConfig& c, auto& k, auto& v) { c.adam_eps = parse_double(k, v); }},
      {"batch_size", [](TrainConfig& c, auto& k, auto& v) { c.batch_size = parse_uint(k, v); }},
      {"early_stop_patience", [](TrainConfig& c, auto& k, auto& v) { c.early_stop_patience = parse_uint(k, v); }},
      {"plateau_factor", [](TrainConfig& c, auto& k, auto& v) { c.plateau_factor = parse_double(k, v); }},
      {"plateau_patience", [](TrainConfig& c, auto& k, auto& v) { c.plateau_patience = parse_uint(k, v); }},
      {"max_epochs", [](TrainConfig& c, auto& k, auto& v) { c.max_epochs = parse_uint(k, v); }},
      {"seed", [](TrainConfig& c, auto& k, auto& v) { c.seed = parse_uint(k, v); }},
      {"omega_p", [](TrainConfig& c, auto& k, auto& v) {
         if (v == "auto") c.omega_p.reset();
         else c.omega_p = parse_double(k, v);
       }},
      {"variant", [](TrainConfig& c, auto&, auto& v) { c.variant = v; }},
      {"width_divisor", [](TrainConfig& c, auto& k, auto& v) { c.width_divisor = parse_uint(k, v); }},
      {"input_size", [](TrainConfig& c, auto& k, auto& v) { c.input_size = parse_uint(k, v); }},
      {"folds", [](TrainConfig& c, auto& k, auto& v) { c.folds = parse_uint(k, v); }},
      {"test_fraction", [](TrainConfig& c, auto& k, auto& v) { c.test_fraction = parse_double(k, v); }},
      {"augment", [](TrainConfig& c, auto&, auto& v) { c.augment = parse_augment_list(c.augment, v); }},
      {"augment_probability", [](TrainConfig& c, auto& k, auto& v) { c.augment.probability = parse_double(k, v); }},
      {"loader_threads", [](TrainConfig& c, auto& k, auto& v) { c.loader_threads = parse_uint(k, v); }},
  };

  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(c, key, value);
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint64_t TrainConfig::hash() const { return fnv1a(to_text()); }

// ---------------------------------------------------------------------------
// Optimiser

double decayed_lr(double lr, double decay, std::uint64_t t) {
  return lr / (1.0 + decay * static_cast<double>(t));
}

OptimizerState OptimizerState::create(const ParameterSet<float>& params, const TrainConfig& cfg) {
  OptimizerState s;
  for (const auto& e : params.entries()) {
    if (e.kind != ParamKind::trainable) continue;
    s.m.emplace_back(e.value.numel(), 0.f);
    s.v.emplace_back(e.value.numel(), 0.f);
  }
  s.lr = cfg.lr0;
  return s;
}

void adam_step(ParameterSet<float>& params, OptimizerState& state, const TrainConfig& cfg) {
  std::vector<ParameterSet<float>::Entry*> trainable;
  for (auto& e : params.entries())
    if (e.kind == ParamKind::trainable) trainable.push_back(&e);
  if (trainable.size() != state.m.size())
    throw std::invalid_argument("adam_step: optimizer state does not match the parameter set");

  for (std::size_t p = 0; p < trainable.size(); ++p) {
    const auto& e = *trainable[p];
    if (state.m[p].size() != e.value.numel())
      throw std::invalid_argument("adam_step: moment shape mismatch for " + e.name);
    for (float g : e.value.grad())
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + e.name);
  }

  const double lr_t = decayed_lr(state.lr, cfg.decay, state.t);
  const double step = static_cast<double>(state.t + 1);
  const double bc1 = 1.0 - std::pow(cfg.beta1, step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, step);
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);

  for (std::size_t p = 0; p < trainable.size(); ++p) {
    auto& t = trainable[p]->value;
    auto w = t.data();
    auto g = t.grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float gi = g.empty() ? 0.f : g[i];
      m[i] = b1 * m[i] + (1.f - b1) * gi;
      v[i] = b2 * v[i] + (1.f - b2) * gi * gi;
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      w[i] -= static_cast<float>(lr_t * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
  ++state.t;
}

PlateauMonitor::PlateauMonitor(std::size_t early_stop_patience, std::size_t plateau_patience)
    : stop_patience_(early_stop_patience),
      plateau_patience_(plateau_patience),
      best_(std::numeric_limits<double>::infinity()) {}

PlateauMonitor::Decision PlateauMonitor::observe(double loss) {
  Decision d;
  if (loss < best_) {
    best_ = loss;
    stale_ = 0;
    plateau_wait_ = 0;
    d.improved = true;
    return d;
  }
  ++stale_;
  if (++plateau_wait_ >= plateau_patience_) {
    d.reduce_lr = true;
    plateau_wait_ = 0;
  }
  d.stop = stale_ >= stop_patience_;
  return d;
}

// ---------------------------------------------------------------------------
// Initialisation

void init_weights(const ModelGraph& graph, ParameterSet<float>& params, std::uint64_t seed) {
  for (const auto& l : graph.layers.layers()) {
    std::size_t fan_in = 0, fan_out = 0;
    bool relu = false;
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::conv2d_transpose: {
        const std::size_t area = l.conv.kernel_h * l.conv.kernel_w;
        fan_in = l.conv.in_channels * area;
        fan_out = l.conv.out_channels * area;
        relu = l.activation == ActivationKind::relu;
        break;
      }
      case LayerKind::depthwise_conv:
        fan_in = fan_out = 9;
        relu = true;  // always followed by BN then ReLU
        break;
      case LayerKind::batch_norm: {
        for (float& v : params.get(l.name + ".gamma").data()) v = 1.f;
        for (float& v : params.get(l.name + ".beta").data()) v = 0.f;
        for (float& v : params.get(l.name + ".running_mean").data()) v = 0.f;
        for (float& v : params.get(l.name + ".running_var").data()) v = 1.f;
        continue;
      }
      case LayerKind::fuse:
        for (float& v : params.get(l.name + ".weight").data()) v = 1.f;
        continue;
      default: continue;
    }
    const double limit = relu ? std::sqrt(6.0 / static_cast<double>(fan_in))
                              : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    const std::string wname = l.name + ".weight";
    Rng rng(derive_seed(seed, {fnv1a(wname)}));
    for (float& v : params.get(wname).data()) v = static_cast<float>(uniform(rng, -limit, limit));
    if (params.contains(l.name + ".bias"))
      for (float& v : params.get(l.name + ".bias").data()) v = 0.f;
  }
}

// ---------------------------------------------------------------------------
// Batching and evaluation

namespace {

void check_square(const std::vector<Sample>& samples, std::size_t size) {
  for (const auto& s : samples)
    if (s.image.height != size || s.image.width != size || s.mask.height != size || s.mask.width != size)
      throw DataError("sample " + s.meta.id + " is " + std::to_string(s.image.height) + "x" +
                      std::to_string(s.image.width) + ", expected " + std::to_string(size) + "x" +
                      std::to_string(size));
}

MetricsRecord pooled_record(std::string tag, double loss, const std::vector<BinaryMask>& gt,
                            const std::vector<BinaryMask>& sv) {
  std::vector<MetricsRecord> per;
  for (std::size_t i = 0; i < gt.size(); ++i) per.push_back(evaluate_masks("", gt[i], sv[i]));
  MetricsRecord r = mean_record(std::move(tag), per);
  r.loss = loss;
  return r;
}

}  // namespace

Tensor<float> stack_images(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("stack_images: empty batch");
  const auto& first = samples.at(indices[0]).image;
  Tensor<float> out(Shape{indices.size(), 1, first.height, first.width});
  auto d = out.data();
  const std::size_t plane = first.height * first.width;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& img = samples.at(indices[b]).image;
    if (img.pixels.size() != plane) throw std::invalid_argument("stack_images: mixed sizes");
    std::copy(img.pixels.begin(), img.pixels.end(), d.begin() + static_cast<std::ptrdiff_t>(b * plane));
  }
  return out;
}

Tensor<float> stack_masks(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("stack_masks: empty batch");
  const auto& first = samples.at(indices[0]).mask;
  Tensor<float> out(Shape{indices.size(), 1, first.height, first.width});
  auto d = out.data();
  const std::size_t plane = first.size();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& m = samples.at(indices[b]).mask;
    if (m.size() != plane) throw std::invalid_argument("stack_masks: mixed sizes");
    for (std::size_t i = 0; i < plane; ++i) d[b * plane + i] = static_cast<float>(m.values[i]);
  }
  return out;
}

std::vector<float> predict_image(const UDetModel<float>& model, const Image& image) {
  Tensor<float> x(Shape{1, 1, image.height, image.width}, image.pixels);
  const auto y = model.predict(x);
  return {y.data().begin(), y.data().end()};
}

SampleEvaluation evaluate_sample(const UDetModel<float>& model, const Sample& sample,
                                 ClassWeight weight) {
  const auto probs = predict_image(model, sample.image);
  SampleEvaluation ev;
  ev.prediction = binarize(probs, sample.image.height, sample.image.width);
  ev.record = evaluate_masks(sample.meta.id, sample.mask, ev.prediction);
  Tape<float> tape;
  tape.set_enabled(false);
  const std::vector<std::size_t> one{0};
  const std::vector<Sample> single{sample};
  ev.record.loss = weighted_bce(tape, Tensor<float>(Shape{1, 1, sample.image.height, sample.image.width}, probs),
                                stack_masks(single, one), weight)
                       .item();
  return ev;
}

MetricsRecord mean_record(std::string tag, std::span<const MetricsRecord> records) {
  std::vector<std::optional<double>> d, s, p;
  std::vector<double> loss;
  for (const auto& r : records) {
    d.push_back(r.dsc);
    s.push_back(r.sen);
    p.push_back(r.ppv);
    loss.push_back(r.loss);
  }
  MetricsRecord out;
  out.tag = std::move(tag);
  out.loss = summarize(loss).mean;
  auto mean_of = [](std::span<const std::optional<double>> v) -> std::optional<double> {
    const Summary sm = summarize(v);
    if (sm.count == 0) return std::nullopt;
    return sm.mean;
  };
  out.dsc = mean_of(d);
  out.sen = mean_of(s);
  out.ppv = mean_of(p);
  return out;
}

std::vector<MetricsRecord> evaluate_samples(const UDetModel<float>& model,
                                            const std::vector<Sample>& samples, ClassWeight weight) {
  std::vector<MetricsRecord> out;
  for (const auto& s : samples) out.push_back(evaluate_sample(model, s, weight).record);
  out.push_back(mean_record("aggregate", out));
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Augmented copies of the training set for one epoch. Each sample draws from
// its own stream, so the worker count never changes the result.
std::vector<Sample> augmented_epoch(const std::vector<Sample>& train, const TrainConfig& cfg,
                                    std::size_t epoch) {
  if (!cfg.augment.any_enabled()) return train;
  std::vector<Sample> out(train.size());
  auto work = [&](std::size_t worker) {
    for (std::size_t i = worker; i < train.size(); i += cfg.loader_threads) {
      Rng rng(derive_seed(cfg.seed, {0x617567ULL, epoch, i}));
      out[i] = augment(train[i], cfg.augment, rng);
    }
  };
  if (cfg.loader_threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < cfg.loader_threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

MetricsRecord validate_model(const UDetModel<float>& model, const std::vector<Sample>& val,
                             ClassWeight weight) {
  std::vector<MetricsRecord> per;
  for (const auto& s : val) per.push_back(evaluate_sample(model, s, weight).record);
  return mean_record("val", per);
}

}  // namespace

FoldResult train_fold(const std::vector<Sample>& train, const std::vector<Sample>& val,
                      const TrainConfig& cfg, const TrainOutputs& outputs) {
  cfg.validate();
  if (train.empty()) throw TrainingError("training set is empty");
  if (val.empty()) throw TrainingError("validation set is empty");
  const std::size_t size = cfg.input_size ? cfg.input_size : train.front().image.height;
  check_square(train, size);
  check_square(val, size);

  ClassWeight weight;
  if (cfg.omega_p) {
    weight.positive = *cfg.omega_p;
  } else {
    std::vector<BinaryMask> masks;
    for (const auto& s : train) masks.push_back(s.mask);
    weight = estimate_class_weight(masks);
    if (!(weight.positive > 0)) throw TrainingError("training masks contain no background voxels");
  }

  const ModelGraph graph = build(VariantSpec::from_name(cfg.variant), size, cfg.width_divisor);
  UDetModel<float> model(graph);
  init_weights(graph, model.params(), cfg.seed);
  UDetModel<float> best(graph);
  copy_parameters(model.params(), best.params());

  OptimizerState opt = OptimizerState::create(model.params(), cfg);
  PlateauMonitor monitor(cfg.early_stop_patience, cfg.plateau_patience);
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  MetricsRecord best_val;
  bool stopped = false;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const std::vector<Sample> data = augmented_epoch(train, cfg, epoch);
    const auto order = shuffled(data.size(), derive_seed(cfg.seed, {0x73687566ULL, epoch}));
    const double lr_epoch = decayed_lr(opt.lr, cfg.decay, opt.t);

    double loss_sum = 0;
    std::size_t voxel_count = 0;
    std::vector<BinaryMask> gts, preds;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(cfg.batch_size, order.size() - start));
      const Tensor<float> x = stack_images(data, idx);
      const Tensor<float> y = stack_masks(data, idx);
      Tape<float> tape;
      Rng drop_rng(derive_seed(cfg.seed, {0x64726f70ULL, epoch, batch}));
      const Tensor<float> p = model.forward(tape, x, Mode::train, drop_rng);
      const Tensor<float> loss = weighted_bce(tape, p, y, weight);
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
      model.params().zero_grads();
      tape.backward(loss);
      adam_step(model.params(), opt, cfg);

      loss_sum += lv * static_cast<double>(y.numel());
      voxel_count += y.numel();
      const std::size_t plane = size * size;
      for (std::size_t b = 0; b < idx.size(); ++b) {
        gts.push_back(data[idx[b]].mask);
        preds.push_back(binarize(p.data().subspan(b * plane, plane), size, size));
      }
    }
    for (auto& e : model.params().entries()) e.value.drop_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_epoch;
    rec.train = pooled_record("train", loss_sum / static_cast<double>(voxel_count), gts, preds);
    rec.val = validate_model(model, val, weight);
    if (!std::isfinite(rec.val.loss)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    history.push_back(rec);
    if (outputs.log) {
      outputs.log->append(static_cast<int>(epoch), outputs.fold, "train", rec.train);
      outputs.log->append(static_cast<int>(epoch), outputs.fold, "val", rec.val);
    }

    const auto decision = monitor.observe(rec.val.loss);
    if (decision.improved) {
      copy_parameters(model.params(), best.params());
      best_epoch = epoch;
      best_val = rec.val;
    }
    if (decision.reduce_lr) opt.lr *= cfg.plateau_factor;
    if (decision.stop) {
      stopped = epoch < cfg.max_epochs;
      break;
    }
    if (outputs.on_epoch && !outputs.on_epoch(rec)) break;
  }

  if (outputs.checkpoint_dir) {
    std::filesystem::create_directories(*outputs.checkpoint_dir);
    save_checkpoint(best, *outputs.checkpoint_dir / "best.ckpt");
  }
  return FoldResult{std::move(history), best_epoch, monitor.best(), stopped, best_val, std::move(best)};
}

CrossValidationResult cross_validate(const std::vector<Sample>& samples, const TrainConfig& cfg,
                                     MetricsLog* log,
                                     const std::optional<std::filesystem::path>& checkpoint_root) {
  cfg.validate();
  CrossValidationResult result;
  result.split = split_dataset(samples.size(), cfg.test_fraction, cfg.folds, cfg.seed);
  std::vector<std::optional<double>> dsc, sen, ppv;
  for (std::size_t f = 0; f < result.split.folds.size(); ++f) {
    std::vector<Sample> train, val;
    for (std::size_t g = 0; g < result.split.folds.size(); ++g)
      for (std::size_t i : result.split.folds[g]) (g == f ? val : train).push_back(samples[i]);
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, {f});
    TrainOutputs out;
    out.log = log;
    out.fold = static_cast<int>(f);
    if (checkpoint_root) out.checkpoint_dir = *checkpoint_root / ("fold" + std::to_string(f));
    FoldResult r = train_fold(train, val, fold_cfg, out);
    dsc.push_back(r.best_val.dsc);
    sen.push_back(r.best_val.sen);
    ppv.push_back(r.best_val.ppv);
    result.folds.push_back(std::move(r));
  }
  result.dsc = summarize(dsc);
  result.sen = summarize(sen);
  result.ppv = summarize(ppv);
  return result;
}

}  // namespace udet
