#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "udet/data.hpp"

namespace udet {

static_assert(std::endian::native == std::endian::little, "raw buffers are little-endian");

const char* to_string(ElementType type) {
  return type == ElementType::int16 ? "MET_SHORT" : "MET_UCHAR";
}

std::size_t element_size(ElementType type) { return type == ElementType::int16 ? 2 : 1; }

std::size_t MhdVolume::voxel_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

MhdVolume MhdVolume::from_int16(std::vector<std::size_t> dims, std::vector<double> spacing,
                                const std::vector<std::int16_t>& values) {
  MhdVolume v;
  v.dims = std::move(dims);
  v.spacing = std::move(spacing);
  v.type = ElementType::int16;
  if (values.size() != v.voxel_count()) throw DataError("value count does not match DimSize");
  v.raw.resize(values.size() * 2);
  std::memcpy(v.raw.data(), values.data(), v.raw.size());
  return v;
}

MhdVolume MhdVolume::from_uint8(std::vector<std::size_t> dims, std::vector<double> spacing,
                                std::vector<std::uint8_t> values) {
  MhdVolume v;
  v.dims = std::move(dims);
  v.spacing = std::move(spacing);
  v.type = ElementType::uint8;
  if (values.size() != v.voxel_count()) throw DataError("value count does not match DimSize");
  v.raw = std::move(values);
  return v;
}

std::vector<std::int16_t> MhdVolume::int16_values() const {
  if (type != ElementType::int16) throw DataError("volume is not MET_SHORT");
  std::vector<std::int16_t> out(raw.size() / 2);
  std::memcpy(out.data(), raw.data(), out.size() * 2);
  return out;
}

std::vector<double> MhdVolume::slice(std::size_t z) const {
  const std::size_t plane = nx() * ny();
  if (z >= nz()) throw DataError("slice " + std::to_string(z) + " out of range");
  std::vector<double> out(plane);
  if (type == ElementType::uint8) {
    for (std::size_t i = 0; i < plane; ++i) out[i] = raw[z * plane + i];
  } else {
    for (std::size_t i = 0; i < plane; ++i) {
      std::int16_t v;
      std::memcpy(&v, raw.data() + 2 * (z * plane + i), 2);
      out[i] = v;
    }
  }
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_true(const std::string& v) { return v == "True" || v == "true" || v == "1"; }

}  // namespace

MhdVolume read_mhd(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  MhdVolume vol;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    vol.header[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  for (const char* key : {"ObjectType", "NDims", "DimSize", "ElementType", "ElementDataFile"})
    if (!vol.header.count(key)) throw DataError(path.string() + ": missing key " + key);

  const std::size_t ndims = std::stoul(vol.header["NDims"]);
  {
    std::istringstream ds(vol.header["DimSize"]);
    std::size_t d;
    while (ds >> d) vol.dims.push_back(d);
  }
  if (ndims == 0 || vol.dims.size() != ndims)
    throw DataError(path.string() + ": DimSize does not list NDims values");
  vol.spacing.assign(ndims, 1.0);
  if (auto it = vol.header.find("ElementSpacing"); it != vol.header.end()) {
    std::istringstream ss(it->second);
    for (std::size_t i = 0; i < ndims; ++i)
      if (!(ss >> vol.spacing[i])) throw DataError(path.string() + ": short ElementSpacing");
  }

  const std::string& et = vol.header["ElementType"];
  if (et == "MET_SHORT")
    vol.type = ElementType::int16;
  else if (et == "MET_UCHAR")
    vol.type = ElementType::uint8;
  else
    throw DataError(path.string() + ": unsupported ElementType " + et);
  for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB", "CompressedData"})
    if (auto it = vol.header.find(key); it != vol.header.end() && is_true(it->second))
      throw DataError(path.string() + ": " + key + " = True is not supported");

  const std::string data_file = vol.header["ElementDataFile"];
  if (data_file == "LOCAL") throw DataError(path.string() + ": LOCAL data is not supported");
  const auto raw_path = path.parent_path() / data_file;
  std::ifstream rin(raw_path, std::ios::binary);
  if (!rin) throw DataError("cannot open raw file " + raw_path.string());
  vol.raw.assign(std::istreambuf_iterator<char>(rin), std::istreambuf_iterator<char>());
  const std::size_t expected = vol.voxel_count() * element_size(vol.type);
  if (vol.raw.size() != expected)
    throw DataError(path.string() + ": DimSize promises " + std::to_string(expected) +
                    " bytes but " + raw_path.filename().string() + " has " +
                    std::to_string(vol.raw.size()));
  return vol;
}

void write_mhd(const MhdVolume& volume, const std::filesystem::path& path) {
  if (volume.dims.empty() || volume.spacing.size() != volume.dims.size())
    throw DataError("write_mhd: dims/spacing inconsistent");
  if (volume.raw.size() != volume.voxel_count() * element_size(volume.type))
    throw DataError("write_mhd: buffer length does not match DimSize");
  auto raw_path = path;
  raw_path.replace_extension(".raw");

  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "ObjectType = Image\n";
  out << "NDims = " << volume.dims.size() << '\n';
  out << "DimSize =";
  for (auto d : volume.dims) out << ' ' << d;
  out << "\nElementSpacing =";
  char buf[40];
  for (double s : volume.spacing) {
    const auto res = std::to_chars(buf, buf + sizeof buf, s);
    out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
  }
  out << "\nElementType = " << to_string(volume.type) << '\n';
  out << "ElementDataFile = " << raw_path.filename().string() << '\n';

  std::ofstream rout(raw_path, std::ios::binary);
  if (!rout) throw DataError("cannot write " + raw_path.string());
  rout.write(reinterpret_cast<const char*>(volume.raw.data()),
             static_cast<std::streamsize>(volume.raw.size()));
}

Image image_from_volume(const MhdVolume& volume, std::size_t z) {
  const auto values = volume.slice(z);
  Image img(volume.ny(), volume.nx());
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < values.size(); ++i)
    img.pixels[i] = range > 0 ? static_cast<float>((values[i] - *lo) / range) : 0.f;
  return img;
}

BinaryMask mask_from_volume(const MhdVolume& volume, std::size_t z) {
  const auto values = volume.slice(z);
  BinaryMask m(volume.ny(), volume.nx());
  for (std::size_t i = 0; i < values.size(); ++i) m.values[i] = values[i] != 0 ? 1 : 0;
  return m;
}

MhdVolume volume_from_image(const Image& image, double spacing_mm) {
  std::vector<std::int16_t> v(image.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<std::int16_t>(std::lround(1400.0 * std::clamp(image.pixels[i], 0.f, 1.f) - 1000.0));
  return MhdVolume::from_int16({image.width, image.height}, {spacing_mm, spacing_mm}, v);
}

MhdVolume volume_from_mask(const BinaryMask& mask, double spacing_mm) {
  return MhdVolume::from_uint8({mask.width, mask.height}, {spacing_mm, spacing_mm}, mask.values);
}

}  // namespace udet
