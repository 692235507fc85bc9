#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pcdiff {

using Vec3 = std::array<double, 3>;
using Label = std::uint16_t;

/// n points with one integer part label each, labels in [0, num_classes).
struct LabeledPointCloud {
  std::vector<Vec3> points;
  std::vector<Label> labels;
  std::uint32_t num_classes = 1;

  std::size_t size() const { return points.size(); }
  /// Throws std::invalid_argument if the invariants do not hold.
  void validate() const;
  friend bool operator==(const LabeledPointCloud&, const LabeledPointCloud&) = default;
};

enum class Split : std::uint8_t { Train, Test };

struct Dataset {
  std::vector<LabeledPointCloud> shapes;
  std::uint32_t num_classes = 1;
  std::string category;
  int level = 1;             // part-annotation granularity, 1..3
  std::vector<Split> splits;  // one tag per shape, or empty when untagged

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// --- LPCD binary format ------------------------------------------------------
//
//   "LPCD" | u32 version=1 | u32 K | u32 shape_count
//   per shape: u32 n | n x (f32 x, f32 y, f32 z, u16 label, u16 0)
//
// Little-endian. Metadata (category, level, split tags) lives in an optional
// "<path>.meta" text sidecar so the binary layout stays fixed.

std::string encode_lpcd(const Dataset& dataset);
Dataset decode_lpcd(const std::string& bytes);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

/// Loads one file, or every *.lpcd in a directory (sorted by name) as one set.
Dataset load_dataset_or_dir(const std::filesystem::path& path);

// --- normalization -----------------------------------------------------------

struct Normalization {
  LabeledPointCloud cloud;
  Vec3 centroid{};
  double scale = 1.0;
};

/// Centers on the centroid and scales to unit max norm. A cloud whose points
/// all coincide gets scale 1 (centroid shift only).
Normalization normalize(const LabeledPointCloud& cloud);
LabeledPointCloud denormalize(const LabeledPointCloud& cloud, const Vec3& centroid, double scale);

// --- synthetic shapes --------------------------------------------------------

enum class ShapeFamily { Barbell, Chair, Ring };

struct SyntheticSpec {
  ShapeFamily family = ShapeFamily::Barbell;
  std::uint32_t ring_parts = 4;  // K for the ring family

  std::uint32_t num_classes() const;
  /// Target share of points per part label.
  std::vector<double> part_fractions() const;
};

std::optional<ShapeFamily> parse_family(const std::string& name);
std::string family_name(ShapeFamily family);

/// Deterministic in (spec, n, seed). Shape proportions are jittered by the
/// seed; per-part point counts follow part_fractions() exactly.
LabeledPointCloud generate_synthetic(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed);

// --- PLY export --------------------------------------------------------------

using Rgb = std::array<std::uint8_t, 3>;
const std::vector<Rgb>& default_palette();

void save_ply(const LabeledPointCloud& cloud, const std::filesystem::path& path,
              const std::vector<Rgb>& palette = default_palette());
std::string encode_ply(const LabeledPointCloud& cloud,
                       const std::vector<Rgb>& palette = default_palette());

// --- splits ------------------------------------------------------------------

enum class SplitMode { Preset, Random };

/// Preset honors the dataset's tags; random shuffles with the seed and puts
/// round(ratio * count) shapes in train.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, SplitMode mode, double ratio,
                                          std::uint64_t seed);

/// ShapeNet-Part style conversion: whitespace-separated "x y z" lines plus a
/// parallel file of 1-based part ids.
LabeledPointCloud read_shapenet_part(const std::filesystem::path& pts,
                                     const std::filesystem::path& seg, std::uint32_t num_classes);

}  // namespace pcdiff
