#include "pcdiff/kdtree.hpp"

#include <algorithm>

namespace pcdiff {

KdTree::KdTree(std::span<const Vec3> points, std::size_t leaf_size)
    : points_(points), order_(points.size()), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!points_.empty()) build(0, order_.size());
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], points_[order_[i]][d]);
      hi[d] = std::max(hi[d], points_[order_[i]][d]);
    }
  }
  int axis = 0;
  for (int d = 1; d < 3; ++d) {
    if (hi[d] - lo[d] > hi[axis] - lo[axis]) axis = d;
  }
  if (hi[axis] == lo[axis]) return id;  // all coincide

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  Node& n = nodes_[id];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void KdTree::search(std::size_t id, const Vec3& q, Hit& best) const {
  const Node& n = nodes_[id];
  if (n.axis < 0) {
    for (std::size_t i = n.begin; i < n.end; ++i) {
      const std::size_t idx = order_[i];
      const double d = sq_dist(points_[idx], q);
      if (d < best.sq_dist || (d == best.sq_dist && idx < best.index)) best = {idx, d};
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double delta = q[n.axis] - n.split;
  const std::size_t near = delta <= 0.0 ? n.left : n.right;
  const std::size_t far = delta <= 0.0 ? n.right : n.left;
  search(near, q, best);
  if (delta * delta <= best.sq_dist) search(far, q, best);
}

KdTree::Hit KdTree::nearest(const Vec3& query) const {
  Hit best;
  if (!nodes_.empty()) search(0, query, best);
  return best;
}

}  // namespace pcdiff
