#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "pcdiff/pointcloud.hpp"

namespace pcdiff {

/// Static 3-d tree over a borrowed point array. The points must outlive the tree.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points, std::size_t leaf_size = 8);

  struct Hit {
    std::size_t index = 0;
    double sq_dist = std::numeric_limits<double>::infinity();
  };

  /// Exact nearest neighbour by squared Euclidean distance. Among equidistant
  /// points the lowest index wins.
  Hit nearest(const Vec3& query) const;

 private:
  struct Node {
    std::size_t begin, end;  // range in order_
    int axis = -1;           // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  void search(std::size_t node, const Vec3& q, Hit& best) const;

  std::span<const Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

inline double sq_dist(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace pcdiff
