#include "opental/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <optional>

#include "opental/error.hpp"

namespace opental::model {

using diff::Shape;
using diff::Tensor;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError(std::string("weights file truncated while reading ") + what);
  }
  return v;
}

std::uint32_t checked_u32(std::size_t v) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw FormatError("value too large for u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_tensors(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kWeightsMagic, sizeof kWeightsMagic);
  for (const auto& [name, t] : tensors) {
    put_u32(out, checked_u32(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, checked_u32(t.rank()));
    for (std::size_t d : t.shape()) put_u32(out, checked_u32(d));
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<NamedTensor> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open weights file " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kWeightsMagic, sizeof magic) != 0) {
    throw FormatError("bad weights magic in " + path.string());
  }
  std::vector<NamedTensor> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::uint32_t len = get_u32(in, "name length");
    if (len == 0 || len > 4096) throw FormatError("implausible tensor name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("weights file truncated in name");
    const std::uint32_t rank = get_u32(in, "rank");
    if (rank > 8) throw FormatError("implausible tensor rank for " + name);
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = get_u32(in, "dims");
      count *= d;
      if (count > (std::size_t{1} << 30)) throw FormatError("tensor too large: " + name);
    }
    std::vector<double> data(count);
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
      throw FormatError("weights file truncated in payload of " + name);
    }
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void save_detector(const Detector& det, const std::filesystem::path& path) {
  const DetectorConfig& c = det.config();
  std::vector<NamedTensor> ts;
  auto meta = [&](const char* key, double v) {
    ts.emplace_back(std::string("meta.") + key, Tensor::scalar(v));
  };
  meta("window_radius", c.window_radius);
  meta("hidden", c.hidden);
  meta("refine_hidden", c.refine_hidden);
  meta("boundary_width", c.boundary_width);
  meta("width_scale", c.width_scale);
  meta("init_half_width", c.init_half_width);
  meta("num_classes", det.num_classes());
  meta("channels", det.channels());
  meta("mode", static_cast<double>(static_cast<int>(c.mode)));
  meta("use_mib", c.use_mib ? 1.0 : 0.0);
  meta("use_actionness", c.use_actionness ? 1.0 : 0.0);
  meta("use_iouc", c.use_iouc ? 1.0 : 0.0);
  for (const Parameter& p : det.parameters()) ts.emplace_back(p.name, p.value);
  write_tensors(ts, path);
}

Detector load_detector(const std::filesystem::path& path) {
  const auto ts = read_tensors(path);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ts) by_name[name] = &t;
  auto meta = [&](const char* key) {
    const auto it = by_name.find(std::string("meta.") + key);
    if (it == by_name.end() || it->second->size() != 1) {
      throw FormatError(std::string("weights file lacks meta.") + key);
    }
    return it->second->item();
  };
  DetectorConfig c;
  c.window_radius = static_cast<int>(meta("window_radius"));
  c.hidden = static_cast<int>(meta("hidden"));
  c.refine_hidden = static_cast<int>(meta("refine_hidden"));
  c.boundary_width = static_cast<int>(meta("boundary_width"));
  c.width_scale = meta("width_scale");
  c.init_half_width = meta("init_half_width");
  const int mode = static_cast<int>(meta("mode"));
  if (mode < 0 || mode > 2) throw FormatError("unknown mode in weights file");
  c.mode = static_cast<Mode>(mode);
  c.use_mib = meta("use_mib") != 0.0;
  c.use_actionness = meta("use_actionness") != 0.0;
  c.use_iouc = meta("use_iouc") != 0.0;
  const int k = static_cast<int>(meta("num_classes"));
  const int d = static_cast<int>(meta("channels"));
  std::optional<Detector> det;
  try {
    det.emplace(c, k, d);
  } catch (const InputError& e) {
    throw FormatError(std::string("inconsistent weights metadata: ") + e.what());
  }
  for (Parameter& p : det->parameters()) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("weights file lacks tensor " + p.name);
    if (it->second->shape() != p.value.shape()) {
      throw FormatError("shape mismatch for " + p.name + ": " + diff::shape_str(it->second->shape()) +
                        " vs " + diff::shape_str(p.value.shape()));
    }
    p.value = *it->second;
  }
  return std::move(*det);
}

}  // namespace opental::model
