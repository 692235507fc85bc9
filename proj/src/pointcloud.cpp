#include "pcdiff/pointcloud.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "pcdiff/error.hpp"
#include "pcdiff/rng.hpp"

namespace pcdiff {

std::vector<std::size_t> apportion(const std::vector<double>& fractions, std::size_t n) {
  std::vector<std::size_t> counts(fractions.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double exact = fractions[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    remainders.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n && !remainders.empty(); ++i, ++assigned) {
    ++counts[remainders[i % remainders.size()].second];
  }
  return counts;
}

void LabeledPointCloud::validate() const {
  if (points.empty()) throw std::invalid_argument("point cloud is empty");
  if (labels.size() != points.size()) {
    throw std::invalid_argument("point cloud has " + std::to_string(points.size()) + " points but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " at point " +
                                  std::to_string(i) + " is not below K=" +
                                  std::to_string(num_classes));
    }
  }
}

// ---------------------------------------------------------------------------
// LPCD

namespace {

constexpr char kMagic[4] = {'L', 'P', 'C', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kRecordBytes = 16;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xffu));
  out.push_back(static_cast<char>((v >> 8) & 0xffu));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    const auto lo = static_cast<unsigned char>(bytes_[pos_]);
    const auto hi = static_cast<unsigned char>(bytes_[pos_ + 1]);
    pos_ += 2;
    return static_cast<std::uint16_t>(lo | (hi << 8));
  }
  float f32() { return std::bit_cast<float>(u32()); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::filesystem::path meta_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string encode_lpcd(const Dataset& dataset) {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, dataset.num_classes);
  put_u32(out, static_cast<std::uint32_t>(dataset.shapes.size()));
  for (const LabeledPointCloud& cloud : dataset.shapes) {
    put_u32(out, static_cast<std::uint32_t>(cloud.size()));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (double c : cloud.points[i]) put_f32(out, static_cast<float>(c));
      put_u16(out, cloud.labels[i]);
      put_u16(out, 0);
    }
  }
  return out;
}

Dataset decode_lpcd(const std::string& bytes) {
  Reader r(bytes);
  if (!r.has(16)) throw FormatError("LPCD header truncated", 0);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad LPCD magic", 0);
  r.u32();
  const std::size_t version_at = r.offset();
  if (const std::uint32_t version = r.u32(); version != kVersion) {
    throw FormatError("unsupported LPCD version " + std::to_string(version),
                      static_cast<std::int64_t>(version_at));
  }
  Dataset ds;
  ds.num_classes = r.u32();
  if (ds.num_classes == 0) throw FormatError("LPCD declares K=0", 8);
  const std::uint32_t count = r.u32();
  ds.shapes.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto shape_at = static_cast<std::int64_t>(r.offset());
    if (!r.has(4)) throw FormatError("truncated shape header for shape " + std::to_string(s), shape_at);
    const std::uint32_t n = r.u32();
    if (n == 0) throw FormatError("shape " + std::to_string(s) + " has no points", shape_at);
    LabeledPointCloud cloud;
    cloud.num_classes = ds.num_classes;
    cloud.points.reserve(n);
    cloud.labels.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto record_at = static_cast<std::int64_t>(r.offset());
      if (!r.has(kRecordBytes)) {
        throw FormatError("truncated record " + std::to_string(i) + " of shape " + std::to_string(s),
                          record_at);
      }
      Vec3 p{};
      for (double& c : p) c = r.f32();
      const Label label = r.u16();
      const std::uint16_t pad = r.u16();
      if (label >= ds.num_classes) {
        throw FormatError("label " + std::to_string(label) + " not below K=" +
                              std::to_string(ds.num_classes),
                          record_at);
      }
      if (pad != 0) throw FormatError("nonzero record padding", record_at);
      cloud.points.push_back(p);
      cloud.labels.push_back(label);
    }
    ds.shapes.push_back(std::move(cloud));
  }
  if (r.has(1)) throw FormatError("trailing bytes after last shape", static_cast<std::int64_t>(r.offset()));
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  Dataset ds = decode_lpcd(read_file(path));
  const auto meta = meta_path(path);
  if (!std::filesystem::exists(meta)) return ds;

  std::istringstream in(read_file(meta));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "category") {
      ds.category = value;
    } else if (key == "level") {
      ds.level = std::stoi(value);
    } else if (key == "splits") {
      ds.splits.clear();
      for (char c : value) {
        if (c == 'r') ds.splits.push_back(Split::Train);
        else if (c == 'e') ds.splits.push_back(Split::Test);
        else throw FormatError("bad split tag '" + std::string(1, c) + "' in " + meta.string());
      }
      if (ds.splits.size() != ds.shapes.size()) {
        throw FormatError("split tag count does not match shape count in " + meta.string());
      }
    }
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  for (const auto& s : dataset.shapes) {
    if (s.num_classes != dataset.num_classes) {
      throw std::invalid_argument("dataset shapes disagree on K");
    }
    s.validate();
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    const std::string bytes = encode_lpcd(dataset);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  const auto meta = meta_path(path);
  if (dataset.category.empty() && dataset.level == 1 && dataset.splits.empty()) {
    std::filesystem::remove(meta);
    return;
  }
  std::ofstream out(meta, std::ios::trunc);
  out << "category=" << dataset.category << "\n";
  out << "level=" << dataset.level << "\n";
  if (!dataset.splits.empty()) {
    out << "splits=";
    for (Split s : dataset.splits) out << (s == Split::Train ? 'r' : 'e');
    out << "\n";
  }
}

Dataset load_dataset_or_dir(const std::filesystem::path& path) {
  if (!std::filesystem::is_directory(path)) return load_dataset(path);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".lpcd") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FormatError("no .lpcd files in " + path.string());
  Dataset merged;
  for (std::size_t i = 0; i < files.size(); ++i) {
    Dataset part = load_dataset(files[i]);
    if (i == 0) {
      merged.num_classes = part.num_classes;
      merged.category = part.category;
      merged.level = part.level;
    } else if (part.num_classes != merged.num_classes) {
      throw FormatError(files[i].string() + " declares K=" + std::to_string(part.num_classes) +
                        ", expected " + std::to_string(merged.num_classes));
    }
    for (auto& s : part.shapes) merged.shapes.push_back(std::move(s));
  }
  return merged;
}

// ---------------------------------------------------------------------------
// Normalization

Normalization normalize(const LabeledPointCloud& cloud) {
  if (cloud.points.empty()) throw std::invalid_argument("normalize: empty cloud");
  Normalization out;
  Vec3 c{0.0, 0.0, 0.0};
  for (const Vec3& p : cloud.points) {
    for (int d = 0; d < 3; ++d) {
      if (!std::isfinite(p[d])) throw std::invalid_argument("normalize: non-finite coordinate");
      c[d] += p[d];
    }
  }
  for (double& v : c) v /= static_cast<double>(cloud.size());

  double max_norm = 0.0;
  for (const Vec3& p : cloud.points) {
    const double dx = p[0] - c[0], dy = p[1] - c[1], dz = p[2] - c[2];
    max_norm = std::max(max_norm, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  out.centroid = c;
  out.scale = max_norm > 0.0 ? max_norm : 1.0;
  out.cloud = cloud;
  for (Vec3& p : out.cloud.points) {
    for (int d = 0; d < 3; ++d) p[d] = (p[d] - c[d]) / out.scale;
  }
  return out;
}

LabeledPointCloud denormalize(const LabeledPointCloud& cloud, const Vec3& centroid, double scale) {
  LabeledPointCloud out = cloud;
  for (Vec3& p : out.points) {
    for (int d = 0; d < 3; ++d) p[d] = p[d] * scale + centroid[d];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

std::uint32_t SyntheticSpec::num_classes() const {
  switch (family) {
    case ShapeFamily::Barbell: return 2;
    case ShapeFamily::Chair: return 3;
    case ShapeFamily::Ring: return ring_parts;
  }
  return 1;
}

std::vector<double> SyntheticSpec::part_fractions() const {
  switch (family) {
    case ShapeFamily::Barbell: return {0.25, 0.75};
    case ShapeFamily::Chair: return {0.40, 0.25, 0.35};
    case ShapeFamily::Ring: return std::vector<double>(ring_parts, 1.0 / ring_parts);
  }
  return {1.0};
}

std::optional<ShapeFamily> parse_family(const std::string& name) {
  if (name == "barbell" || name == "two-part-barbell") return ShapeFamily::Barbell;
  if (name == "chair" || name == "three-part-chair") return ShapeFamily::Chair;
  if (name == "ring" || name == "K-part-ring") return ShapeFamily::Ring;
  return std::nullopt;
}

std::string family_name(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::Barbell: return "barbell";
    case ShapeFamily::Chair: return "chair";
    case ShapeFamily::Ring: return "ring";
  }
  return "?";
}

namespace {

Vec3 on_sphere(Rng& rng, const Vec3& center, double radius) {
  double x, y, z, r;
  do {
    x = rng.normal();
    y = rng.normal();
    z = rng.normal();
    r = std::sqrt(x * x + y * y + z * z);
  } while (r < 1e-12);
  return {center[0] + radius * x / r, center[1] + radius * y / r, center[2] + radius * z / r};
}

Vec3 in_box(Rng& rng, const Vec3& lo, const Vec3& hi) {
  Vec3 p{};
  for (int d = 0; d < 3; ++d) p[d] = lo[d] + (hi[d] - lo[d]) * rng.uniform();
  return p;
}

double jitter(Rng& rng, double base, double rel) { return base * (1.0 + rel * (2.0 * rng.uniform() - 1.0)); }

void barbell_part(Rng& rng, Label part, std::size_t count, const std::array<double, 3>& dims,
                  std::vector<Vec3>& out) {
  const auto [half_len, bar_r, bell_r] = dims;
  for (std::size_t i = 0; i < count; ++i) {
    if (part == 0) {
      const double a = 2.0 * std::numbers::pi * rng.uniform();
      out.push_back({-half_len + 2.0 * half_len * rng.uniform(), bar_r * std::cos(a), bar_r * std::sin(a)});
    } else {
      const double side = (i % 2 == 0) ? -1.0 : 1.0;
      out.push_back(on_sphere(rng, {side * (half_len + bell_r), 0.0, 0.0}, bell_r));
    }
  }
}

void chair_part(Rng& rng, Label part, std::size_t count, const std::array<double, 4>& dims,
                std::vector<Vec3>& out) {
  const auto [half_w, leg_h, back_h, thick] = dims;
  for (std::size_t i = 0; i < count; ++i) {
    if (part == 0) {
      out.push_back(in_box(rng, {-half_w, -thick, -half_w}, {half_w, thick, half_w}));
    } else if (part == 1) {
      const double sx = (i % 2 == 0) ? -1.0 : 1.0;
      const double sz = ((i / 2) % 2 == 0) ? -1.0 : 1.0;
      const double cx = sx * (half_w - thick), cz = sz * (half_w - thick);
      out.push_back(in_box(rng, {cx - thick, -thick - leg_h, cz - thick}, {cx + thick, -thick, cz + thick}));
    } else {
      out.push_back(in_box(rng, {-half_w, thick, -half_w - thick}, {half_w, thick + back_h, -half_w + thick}));
    }
  }
}

void ring_part(Rng& rng, Label part, std::size_t count, std::uint32_t parts, double tube_r,
               std::vector<Vec3>& out) {
  const double span = 2.0 * std::numbers::pi / parts;
  for (std::size_t i = 0; i < count; ++i) {
    // 15% of every arc is left empty so neighbouring parts stay separated.
    const double theta = span * (part + 0.075 + 0.85 * rng.uniform());
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    const double rad = 1.0 + tube_r * std::cos(phi);
    out.push_back({rad * std::cos(theta), tube_r * std::sin(phi), rad * std::sin(theta)});
  }
}

}  // namespace

LabeledPointCloud generate_synthetic(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed) {
  const std::uint32_t k = spec.num_classes();
  if (k == 0) throw std::invalid_argument("synthetic shape needs at least one part");
  if (n < k) {
    throw std::invalid_argument("cannot place " + std::to_string(k) + " parts with only " +
                                std::to_string(n) + " points");
  }
  std::vector<std::size_t> counts = apportion(spec.part_fractions(), n);
  // Every part must be present even when n is tiny.
  for (std::size_t p = 0; p < counts.size(); ++p) {
    if (counts[p] == 0) {
      auto donor = std::max_element(counts.begin(), counts.end());
      --*donor;
      counts[p] = 1;
    }
  }

  Rng rng(seed, {0x5e7});
  LabeledPointCloud cloud;
  cloud.num_classes = k;
  cloud.points.reserve(n);
  cloud.labels.reserve(n);

  const std::array<double, 3> bar{jitter(rng, 0.6, 0.2), jitter(rng, 0.08, 0.2), jitter(rng, 0.35, 0.2)};
  const std::array<double, 4> chair{jitter(rng, 0.5, 0.15), jitter(rng, 0.8, 0.2),
                                    jitter(rng, 0.9, 0.2), 0.05};
  const double tube = jitter(rng, 0.15, 0.3);

  for (Label p = 0; p < k; ++p) {
    switch (spec.family) {
      case ShapeFamily::Barbell: barbell_part(rng, p, counts[p], bar, cloud.points); break;
      case ShapeFamily::Chair: chair_part(rng, p, counts[p], chair, cloud.points); break;
      case ShapeFamily::Ring: ring_part(rng, p, counts[p], k, tube, cloud.points); break;
    }
    cloud.labels.insert(cloud.labels.end(), counts[p], p);
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  LabeledPointCloud shuffled;
  shuffled.num_classes = k;
  shuffled.points.reserve(n);
  shuffled.labels.reserve(n);
  for (std::size_t i : order) {
    shuffled.points.push_back(cloud.points[i]);
    shuffled.labels.push_back(cloud.labels[i]);
  }
  return shuffled;
}

// ---------------------------------------------------------------------------
// PLY

const std::vector<Rgb>& default_palette() {
  // Tableau-20 subset, distinguishable in most viewers.
  static const std::vector<Rgb> palette = {
      {31, 119, 180}, {255, 127, 14}, {44, 160, 44},   {214, 39, 40},
      {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127},
      {188, 189, 34},  {23, 190, 207}, {174, 199, 232}, {255, 187, 120},
      {152, 223, 138}, {255, 152, 150}, {197, 176, 213}, {196, 156, 148},
  };
  return palette;
}

std::string encode_ply(const LabeledPointCloud& cloud, const std::vector<Rgb>& palette) {
  if (cloud.num_classes > palette.size()) {
    throw std::invalid_argument("K=" + std::to_string(cloud.num_classes) + " exceeds palette size " +
                                std::to_string(palette.size()));
  }
  if (cloud.num_classes > 256) throw std::invalid_argument("PLY label column is uchar; K > 256");
  cloud.validate();
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\n"
     << "element vertex " << cloud.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
     << "property uchar label\nend_header\n";
  os << std::setprecision(9);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const Rgb& c = palette[cloud.labels[i]];
    os << static_cast<float>(p[0]) << ' ' << static_cast<float>(p[1]) << ' ' << static_cast<float>(p[2])
       << ' ' << int(c[0]) << ' ' << int(c[1]) << ' ' << int(c[2]) << ' ' << cloud.labels[i] << '\n';
  }
  return os.str();
}

void save_ply(const LabeledPointCloud& cloud, const std::filesystem::path& path,
              const std::vector<Rgb>& palette) {
  const std::string text = encode_ply(cloud, palette);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Splits

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, SplitMode mode, double ratio,
                                          std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0, 1)");
  Dataset train, test;
  for (Dataset* d : {&train, &test}) {
    d->num_classes = dataset.num_classes;
    d->category = dataset.category;
    d->level = dataset.level;
  }

  if (mode == SplitMode::Preset) {
    if (dataset.splits.size() != dataset.shapes.size()) {
      throw std::invalid_argument("preset split requested but the dataset carries no split tags");
    }
    for (std::size_t i = 0; i < dataset.shapes.size(); ++i) {
      Dataset& dst = dataset.splits[i] == Split::Train ? train : test;
      dst.shapes.push_back(dataset.shapes[i]);
      dst.splits.push_back(dataset.splits[i]);
    }
    return {std::move(train), std::move(test)};
  }

  std::vector<std::size_t> order(dataset.shapes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed, {0x5b1175});
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(order.size())));
  for (std::size_t j = 0; j < order.size(); ++j) {
    const bool is_train = j < n_train;
    Dataset& dst = is_train ? train : test;
    dst.shapes.push_back(dataset.shapes[order[j]]);
    dst.splits.push_back(is_train ? Split::Train : Split::Test);
  }
  return {std::move(train), std::move(test)};
}

LabeledPointCloud read_shapenet_part(const std::filesystem::path& pts, const std::filesystem::path& seg,
                                     std::uint32_t num_classes) {
  std::istringstream ps(read_file(pts));
  std::istringstream ss(read_file(seg));
  LabeledPointCloud cloud;
  cloud.num_classes = num_classes;
  Vec3 p{};
  while (ps >> p[0] >> p[1] >> p[2]) {
    long part = 0;
    if (!(ss >> part)) throw FormatError("segmentation file shorter than point file: " + seg.string());
    if (part < 1 || static_cast<std::uint32_t>(part) > num_classes) {
      throw FormatError("part id " + std::to_string(part) + " outside 1.." + std::to_string(num_classes) +
                        " in " + seg.string());
    }
    cloud.points.push_back(p);
    cloud.labels.push_back(static_cast<Label>(part - 1));
  }
  if (cloud.points.empty()) throw FormatError("no points in " + pts.string());
  return cloud;
}

}  // namespace pcdiff
