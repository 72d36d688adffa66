#include "udet/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace udet {

namespace {

constexpr std::array<std::size_t, 5> kEncoderChannels{64, 128, 256, 512, 1024};
constexpr std::size_t kBifpnWidth = 64;
constexpr double kDropoutRate = 0.5;

struct VariantName {
  const char* name;
  VariantSpec spec;
};

constexpr std::array<VariantName, 6> kVariants{{
    {"udet", {true, true, true}},
    {"udet-relu", {false, true, true}},
    {"unet", {false, false, true}},
    {"unet-mish", {true, false, true}},
    {"encoder-bifpn", {false, true, false}},
    {"encoder-bifpn-mish", {true, true, false}},
}};

std::string enc(std::size_t depth, const char* part) {
  return "enc" + std::to_string(depth) + "." + part;
}
std::string dec(std::size_t stage, const char* part) {
  return "dec" + std::to_string(stage) + "." + part;
}

}  // namespace

std::string VariantSpec::name() const {
  for (const auto& v : kVariants)
    if (v.spec == *this) return v.name;
  return "invalid";
}

VariantSpec VariantSpec::from_name(const std::string& name) {
  for (const auto& v : kVariants)
    if (name == v.name) return v.spec;
  throw std::invalid_argument("unknown variant: " + name);
}

std::vector<std::string> VariantSpec::names() {
  std::vector<std::string> out;
  for (const auto& v : kVariants) out.emplace_back(v.name);
  return out;
}

ModelGraph build(const VariantSpec& variant, std::size_t input_size, std::size_t width_divisor) {
  if (input_size == 0 || input_size % 16 != 0)
    throw std::invalid_argument("input size " + std::to_string(input_size) +
                                " is not divisible by 16");
  if (width_divisor != 1 && width_divisor != 2 && width_divisor != 4 && width_divisor != 8)
    throw std::invalid_argument("width scale 1/" + std::to_string(width_divisor) +
                                " unsupported (1, 1/2, 1/4, 1/8)");
  if (!variant.use_bifpn && !variant.use_expansion_path)
    throw std::invalid_argument("variant needs a Bi-FPN or an expansion path");

  ModelGraph g;
  g.variant = variant;
  g.input_size = input_size;
  g.width_divisor = width_divisor;
  for (std::size_t i = 0; i < 5; ++i) g.encoder_channels[i] = kEncoderChannels[i] / width_divisor;
  g.bifpn.entry_channels.assign(g.encoder_channels.begin(), g.encoder_channels.end());
  g.bifpn.width = kBifpnWidth / width_divisor;

  const ActivationKind act = variant.backbone_activation();
  LayerList& L = g.layers;

  std::size_t in = 1;
  for (std::size_t d = 1; d <= 5; ++d) {
    const std::size_t c = g.encoder_channels[d - 1];
    L.add(conv_layer(enc(d, "conv1"), Section::contraction, in, c, 3, true, act));
    L.add(activation_layer(enc(d, "act1"), Section::contraction, act));
    L.add(conv_layer(enc(d, "conv2"), Section::contraction, c, c, 3, true, act));
    L.add(activation_layer(enc(d, "act2"), Section::contraction, act));
    if (d == 5)
      L.add(dropout_layer(enc(d, "dropout"), Section::contraction, kDropoutRate));
    else
      L.add(simple_layer(enc(d, "pool"), Section::contraction, LayerKind::maxpool));
    in = c;
  }

  if (variant.use_bifpn) append_bifpn_layers(L, g.bifpn);

  std::size_t head_in = g.bifpn.width;
  if (variant.use_expansion_path) {
    std::size_t prev = g.encoder_channels[4];
    for (std::size_t s = 4; s >= 1; --s) {
      const std::size_t c = g.encoder_channels[s - 1];
      const std::size_t skip = variant.use_bifpn ? g.bifpn.width : c;
      L.add(transposed_conv_layer(dec(s, "up"), Section::expansion, prev, c, act));
      L.add(activation_layer(dec(s, "up_act"), Section::expansion, act));
      L.add(simple_layer(dec(s, "concat"), Section::expansion, LayerKind::concat));
      L.add(conv_layer(dec(s, "conv1"), Section::expansion, c + skip, c, 3, true, act));
      L.add(activation_layer(dec(s, "act1"), Section::expansion, act));
      L.add(conv_layer(dec(s, "conv2"), Section::expansion, c, c, 3, true, act));
      L.add(activation_layer(dec(s, "act2"), Section::expansion, act));
      prev = c;
    }
    head_in = g.encoder_channels[0];
  }
  L.add(conv_layer("head.conv", Section::expansion, head_in, 1, 1, true, ActivationKind::sigmoid));
  L.add(activation_layer("head.sigmoid", Section::expansion, ActivationKind::sigmoid));
  return g;
}

std::array<std::array<std::size_t, 3>, 5> encoder_feature_shapes(const ModelGraph& graph) {
  std::array<std::array<std::size_t, 3>, 5> out{};
  std::size_t s = graph.input_size;
  for (std::size_t d = 0; d < 5; ++d, s /= 2) out[d] = {graph.encoder_channels[d], s, s};
  return out;
}

bool AuditRow::ok() const {
  return std::abs(static_cast<double>(computed) - reference) <= tolerance;
}

bool AuditTable::ok() const {
  for (const auto& r : rows)
    if (!r.ok()) return false;
  return true;
}

AuditTable audit_parameters(const ModelGraph& graph) {
  const LayerList& L = graph.layers;
  const std::string act = graph.variant.use_mish ? ", Mish" : ", ReLU";
  auto label = [](const char* kind, std::size_t n, const std::string& suffix) {
    return std::string(kind) + " x" + std::to_string(n) + suffix;
  };

  AuditTable t;
  // References carry 4 significant figures; one unit in the last place is the
  // tolerance for those rows. The lateral row allows 0.5% for its rounding.
  t.rows.push_back({label("Conv2D", L.count(Section::contraction, LayerKind::conv2d), act),
                    L.params(Section::contraction, LayerKind::conv2d), 1.884e7, 1e4});
  t.rows.push_back({label("Conv2D", L.count(Section::bifpn, LayerKind::conv2d), ""),
                    L.params(Section::bifpn, LayerKind::conv2d), 1.269e5, 0.005 * 1.269e5});
  t.rows.push_back({label("BatchNormalization", L.count(Section::bifpn, LayerKind::batch_norm), ""),
                    L.params(Section::bifpn, LayerKind::batch_norm), 3072, 0});
  t.rows.push_back({label("DepthwiseConv", L.count(Section::bifpn, LayerKind::depthwise_conv), ""),
                    L.params(Section::bifpn, LayerKind::depthwise_conv), 4032, 0});
  t.rows.push_back({label("Conv2D", L.count(Section::expansion, LayerKind::conv2d), act),
                    L.params(Section::expansion, LayerKind::conv2d), 6.821e6, 1e3});
  t.rows.push_back(
      {label("Conv2DTrans", L.count(Section::expansion, LayerKind::conv2d_transpose), act),
       L.params(Section::expansion, LayerKind::conv2d_transpose), 2.786e6, 1e3});
  for (const auto& r : t.rows) t.total += r.computed;
  t.rows.push_back({"Total parameters", t.total, 2.858e7, 0.001 * 2.858e7});
  t.fusion_scalars = L.params(Section::bifpn, LayerKind::fuse);
  return t;
}

std::string format_audit(const AuditTable& table) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %14s %14s %12s  %s\n", "row", "computed", "reference",
                "diff", "status");
  os << line;
  for (const auto& r : table.rows) {
    std::snprintf(line, sizeof line, "%-28s %14zu %14.4g %+12.0f  %s\n", r.label.c_str(),
                  r.computed, r.reference, static_cast<double>(r.computed) - r.reference,
                  r.ok() ? "ok" : "MISMATCH");
    os << line;
  }
  std::snprintf(line, sizeof line, "%-28s %14zu  (not in the reference total)\n", "fusion weights",
                table.fusion_scalars);
  os << line;
  return os.str();
}

BifpnCensus bifpn_census(const ModelGraph& graph) {
  const LayerList& L = graph.layers;
  BifpnCensus c;
  c.depthwise = L.count(Section::bifpn, LayerKind::depthwise_conv);
  c.batch_norm = L.count(Section::bifpn, LayerKind::batch_norm);
  c.relu = L.count(Section::bifpn, LayerKind::activation, ActivationKind::relu);
  c.maxpool = L.count(Section::bifpn, LayerKind::maxpool);
  c.lateral_conv = L.count(Section::bifpn, LayerKind::conv2d);
  return c;
}

template <typename T>
UDetModel<T>::UDetModel(ModelGraph graph) : graph_(std::move(graph)) {
  allocate_parameters(graph_.layers, params_);
}

template <typename T>
Tensor<T> UDetModel<T>::forward(Tape<T>& tape, const Tensor<T>& x, Mode mode, Rng& rng) const {
  const Shape xs = x.shape();
  const std::size_t s = graph_.input_size;
  if (xs.c != 1 || xs.h != s || xs.w != s)
    throw ShapeError("forward: input " + xs.str() + " does not match (N,1," + std::to_string(s) +
                     "," + std::to_string(s) + ")");
  const LayerRunner<T> run(graph_.layers, params_);
  const VariantSpec& v = graph_.variant;

  PyramidFeatures<T> skips;
  Tensor<T> e = x;
  for (std::size_t d = 1; d <= 5; ++d) {
    e = run.activation(tape, enc(d, "act1"), run.conv(tape, enc(d, "conv1"), e));
    e = run.activation(tape, enc(d, "act2"), run.conv(tape, enc(d, "conv2"), e));
    if (d == 5) e = ops::dropout(tape, e, run.spec(enc(d, "dropout")).rate, mode, rng);
    skips.levels.push_back(e);
    if (d < 5) e = ops::maxpool2d(tape, e);
  }

  PyramidFeatures<T> fused;
  if (v.use_bifpn)
    fused = bifpn_forward(tape, run, graph_.bifpn,
                          lateral_project(tape, run, graph_.bifpn, skips, mode), mode);

  Tensor<T> top;
  if (v.use_expansion_path) {
    Tensor<T> d = skips.levels[4];
    for (std::size_t st = 4; st >= 1; --st) {
      Tensor<T> up = run.activation(tape, dec(st, "up_act"), run.conv(tape, dec(st, "up"), d));
      const Tensor<T>& skip = v.use_bifpn ? fused.levels[st - 1] : skips.levels[st - 1];
      d = ops::concat_channels(tape, up, skip);
      d = run.activation(tape, dec(st, "act1"), run.conv(tape, dec(st, "conv1"), d));
      d = run.activation(tape, dec(st, "act2"), run.conv(tape, dec(st, "conv2"), d));
    }
    top = d;
  } else {
    top = fused.levels[0];
  }
  return run.activation(tape, "head.sigmoid", run.conv(tape, "head.conv", top));
}

template <typename T>
Tensor<T> UDetModel<T>::predict(const Tensor<T>& x) const {
  Tape<T> tape;
  tape.set_enabled(false);
  Rng unused(0);
  return forward(tape, x, Mode::infer, unused);
}

namespace {

constexpr const char* kMagic = "UDET-CHECKPOINT 1";

template <typename T>
const char* dtype_tag() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

template <typename T>
void save_checkpoint(const UDetModel<T>& model, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint layout is little-endian");
  std::ostringstream manifest;
  const ModelGraph& g = model.graph();
  manifest << kMagic << '\n'
           << "variant " << g.variant.name() << '\n'
           << "input_size " << g.input_size << '\n'
           << "width_divisor " << g.width_divisor << '\n'
           << "dtype " << dtype_tag<T>() << '\n'
           << "params " << model.params().size() << '\n';
  std::size_t offset = 0;
  for (const auto& e : model.params().entries()) {
    const Shape s = e.value.shape();
    manifest << e.name << ' ' << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w << ' ' << offset
             << '\n';
    offset += e.value.numel() * sizeof(T);
  }
  manifest << "end\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string text = manifest.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : model.params().entries())
    out.write(reinterpret_cast<const char*>(e.value.data().data()),
              static_cast<std::streamsize>(e.value.numel() * sizeof(T)));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

template <typename T>
UDetModel<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  auto fail = [&](const std::string& why) {
    return std::runtime_error("checkpoint " + path.string() + ": " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw fail("bad magic");

  auto field = [&](const char* key) {
    if (!std::getline(in, line)) throw fail(std::string("missing ") + key);
    std::istringstream ls(line);
    std::string k, v;
    ls >> k >> v;
    if (k != key) throw fail(std::string("expected ") + key + ", got '" + line + "'");
    return v;
  };
  const VariantSpec variant = VariantSpec::from_name(field("variant"));
  const std::size_t input = std::stoul(field("input_size"));
  const std::size_t divisor = std::stoul(field("width_divisor"));
  if (field("dtype") != dtype_tag<T>()) throw fail("dtype does not match");
  const std::size_t count = std::stoul(field("params"));

  UDetModel<T> model(build(variant, input, divisor));
  if (count != model.params().size()) throw fail("parameter count does not match the graph");

  struct Item {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw fail("truncated manifest");
    std::istringstream ls(line);
    Item it;
    if (!(ls >> it.name >> it.shape.n >> it.shape.c >> it.shape.h >> it.shape.w >> it.offset))
      throw fail("malformed manifest line '" + line + "'");
    items.push_back(it);
  }
  if (!std::getline(in, line) || line != "end") throw fail("missing manifest terminator");
  const std::streamoff base = in.tellg();

  for (const auto& it : items) {
    Tensor<T>& t = model.params().get(it.name);
    if (!(t.shape() == it.shape))
      throw fail(it.name + " shape " + it.shape.str() + " vs graph " + t.shape().str());
    in.seekg(base + static_cast<std::streamoff>(it.offset));
    in.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!in) throw fail("truncated data for " + it.name);
  }
  return model;
}

template <typename T>
void copy_parameters(const ParameterSet<T>& from, ParameterSet<T>& to) {
  if (from.size() != to.size()) throw std::invalid_argument("copy_parameters: size mismatch");
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto& a = from.entries()[i];
    auto& b = to.entries()[i];
    if (a.name != b.name || !(a.value.shape() == b.value.shape()))
      throw std::invalid_argument("copy_parameters: mismatch at " + a.name);
    std::copy(a.value.data().begin(), a.value.data().end(), b.value.data().begin());
  }
}

template class UDetModel<float>;
template class UDetModel<double>;
template void save_checkpoint(const UDetModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const UDetModel<double>&, const std::filesystem::path&);
template UDetModel<float> load_checkpoint(const std::filesystem::path&);
template UDetModel<double> load_checkpoint(const std::filesystem::path&);
template void copy_parameters(const ParameterSet<float>&, ParameterSet<float>&);
template void copy_parameters(const ParameterSet<double>&, ParameterSet<double>&);

}  // namespace udet
