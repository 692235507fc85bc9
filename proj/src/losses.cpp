#include "pcdiff/losses.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

#include "pcdiff/error.hpp"
#include "pcdiff/kdtree.hpp"
#include "pcdiff/noising.hpp"

namespace pcdiff {

using grad::Tensor;
using grad::Var;

namespace {

constexpr std::size_t kBruteForcePairs = 1024;

double directed(std::span<const Vec3> from, std::span<const Vec3> to) {
  double total = 0.0;
  if (from.size() * to.size() <= kBruteForcePairs) {
    for (const Vec3& a : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& b : to) best = std::min(best, sq_dist(a, b));
      total += best;
    }
  } else {
    KdTree tree(to);
    for (const Vec3& a : from) total += tree.nearest(a).sq_dist;
  }
  return total / static_cast<double>(from.size());
}

std::string list_labels(const std::vector<Label>& labels) {
  std::string s = "{";
  for (std::size_t i = 0; i < labels.size(); ++i) s += (i ? "," : "") + std::to_string(labels[i]);
  return s + "}";
}

std::map<Label, std::vector<std::size_t>> group(std::span<const Label> labels) {
  std::map<Label, std::vector<std::size_t>> g;
  for (std::size_t i = 0; i < labels.size(); ++i) g[labels[i]].push_back(i);
  return g;
}

void check_n_by(const Tensor& t, std::size_t cols, const char* what) {
  if (t.cols() != cols) {
    throw ShapeError(std::string(what) + " must have " + std::to_string(cols) + " columns, got " +
                     t.shape_str());
  }
}

}  // namespace

GuidedMse guided_mse(const Tensor& e_theta, const Tensor& e_rand) {
  check_n_by(e_theta, 4, "e_theta");
  if (e_rand.rows() != e_theta.rows() || e_rand.cols() < 3) {
    throw ShapeError("e_rand " + e_rand.shape_str() + " does not match e_theta " + e_theta.shape_str());
  }
  GuidedMse out;
  for (std::size_t i = 0; i < e_theta.rows(); ++i) {
    for (std::size_t d = 0; d < 3; ++d) {
      const double diff = e_theta(i, d) - e_rand(i, d);
      out.spatial += diff * diff;
    }
    out.label += e_theta(i, 3) * e_theta(i, 3);
  }
  const double n = static_cast<double>(e_theta.rows());
  out.spatial /= n;
  out.label /= n;
  return out;
}

double global_cd(std::span<const Vec3> p, std::span<const Vec3> q) {
  if (p.empty() || q.empty()) throw std::invalid_argument("global_cd: empty point set");
  return directed(p, q) + directed(q, p);
}

ClassInventory class_inventory(std::span<const Label> p_labels, std::span<const Label> q_labels) {
  std::vector<Label> a(p_labels.begin(), p_labels.end());
  std::vector<Label> b(q_labels.begin(), q_labels.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  ClassInventory inv;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inv.shared));
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inv.only_first));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(inv.only_second));
  return inv;
}

double per_class_cd(std::span<const Vec3> p, std::span<const Label> p_labels, std::span<const Vec3> q,
                    std::span<const Label> q_labels, ClassInventory* inventory) {
  if (p.size() != p_labels.size() || q.size() != q_labels.size()) {
    throw ShapeError("per_class_cd: point and label counts differ");
  }
  ClassInventory inv = class_inventory(p_labels, q_labels);
  if (inv.shared.empty()) {
    throw std::invalid_argument("per_class_cd: no shared class; first has " +
                                list_labels(inv.only_first) + ", second has " +
                                list_labels(inv.only_second));
  }
  const auto gp = group(p_labels);
  const auto gq = group(q_labels);
  double total = 0.0;
  std::vector<Vec3> pc, qc;
  for (Label c : inv.shared) {
    pc.clear();
    qc.clear();
    for (std::size_t i : gp.at(c)) pc.push_back(p[i]);
    for (std::size_t i : gq.at(c)) qc.push_back(q[i]);
    total += global_cd(pc, qc);
  }
  const double classes = static_cast<double>(inv.shared.size());
  if (inventory != nullptr) *inventory = std::move(inv);
  return total / classes;
}

double per_class_cd(const LabeledPointCloud& p, const LabeledPointCloud& q, ClassInventory* inventory) {
  return per_class_cd(p.points, p.labels, q.points, q.labels, inventory);
}

LossBreakdown guided_total(double spatial_mse, double label_mse, double per_class_cd, double kl,
                           double lambda_kl) {
  LossBreakdown b{spatial_mse, label_mse, per_class_cd, kl, 0.0};
  b.total = spatial_mse + label_mse + per_class_cd + lambda_kl * kl;
  return b;
}

std::vector<Vec3> xyz_of(const Tensor& state) {
  if (state.cols() < 3) throw ShapeError("xyz_of: need at least 3 columns, got " + state.shape_str());
  std::vector<Vec3> out(state.rows());
  for (std::size_t i = 0; i < state.rows(); ++i) out[i] = {state(i, 0), state(i, 1), state(i, 2)};
  return out;
}

LossBreakdown guided_total(const Tensor& e_theta, const Tensor& e_rand, const Tensor& noised,
                           const Tensor& x0, std::span<const Label> labels, double kl, double lambda_kl) {
  const GuidedMse mse = guided_mse(e_theta, e_rand);
  if (noised.rows() != e_theta.rows() || x0.rows() != e_theta.rows() || labels.size() != x0.rows()) {
    throw ShapeError("guided_total: row counts disagree");
  }
  std::vector<Vec3> recon(noised.rows());
  for (std::size_t i = 0; i < noised.rows(); ++i) {
    for (std::size_t d = 0; d < 3; ++d) recon[i][d] = noised(i, d) - e_theta(i, d);
  }
  const double cd = per_class_cd(recon, labels, xyz_of(x0), labels);
  return guided_total(mse.spatial, mse.label, cd, kl, lambda_kl);
}

LossBreakdown unguided_total(const Tensor& e_theta, const Tensor& e_rand, double kl, double lambda_kl) {
  check_n_by(e_theta, 4, "e_theta");
  if (e_rand.shape() != e_theta.shape()) {
    throw ShapeError("e_rand " + e_rand.shape_str() + " does not match e_theta " + e_theta.shape_str());
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < e_theta.rows(); ++i) {
    double row = 0.0;
    for (std::size_t d = 0; d < 4; ++d) {
      const double diff = e_theta(i, d) - e_rand(i, d);
      row += diff * diff;
    }
    mse += row;
  }
  mse /= static_cast<double>(e_theta.rows());
  LossBreakdown b;
  b.spatial_mse = mse;
  b.kl = kl;
  b.total = mse + lambda_kl * kl;
  return b;
}

// ---------------------------------------------------------------------------
// Differentiable forms

Var take_columns(Var x, std::size_t first, std::size_t count) {
  grad::Tape& tape = *x.tape;
  const std::size_t cols = tape.value(x).cols();
  if (first + count > cols) throw ShapeError("take_columns: range exceeds " + std::to_string(cols));
  Tensor sel(cols, count);
  for (std::size_t j = 0; j < count; ++j) sel(first + j, j) = 1.0;
  return grad::matmul(x, tape.constant(std::move(sel)));
}

GuidedMseVars guided_mse(Var e_theta, const Tensor& e_rand) {
  grad::Tape& tape = *e_theta.tape;
  const Tensor& e = tape.value(e_theta);
  check_n_by(e, 4, "e_theta");
  Tensor target(e.rows(), 3);
  for (std::size_t i = 0; i < e.rows(); ++i) {
    for (std::size_t d = 0; d < 3; ++d) target(i, d) = e_rand(i, d);
  }
  const double inv_n = 1.0 / static_cast<double>(e.rows());
  Var diff = grad::sub(take_columns(e_theta, 0, 3), tape.constant(std::move(target)));
  Var spatial = grad::scale(grad::sum(grad::square(diff)), inv_n);
  Var label = grad::scale(grad::sum(grad::square(take_columns(e_theta, 3, 1))), inv_n);
  return {spatial, label};
}

Var unguided_mse(Var e_theta, const Tensor& e_rand) {
  grad::Tape& tape = *e_theta.tape;
  const Tensor& e = tape.value(e_theta);
  if (e.shape() != e_rand.shape()) throw ShapeError("unguided_mse: shape mismatch");
  Var diff = grad::sub(e_theta, tape.constant(e_rand));
  return grad::scale(grad::sum(grad::square(diff)), 1.0 / static_cast<double>(e.rows()));
}

Var per_class_cd(Var p, std::span<const Label> p_labels, std::span<const Vec3> q,
                 std::span<const Label> q_labels) {
  grad::Tape& tape = *p.tape;
  const Tensor& pv = tape.value(p);
  check_n_by(pv, 3, "per_class_cd input");
  if (pv.rows() != p_labels.size() || q.size() != q_labels.size()) {
    throw ShapeError("per_class_cd: point and label counts differ");
  }
  const ClassInventory inv = class_inventory(p_labels, q_labels);
  if (inv.shared.empty()) {
    throw std::invalid_argument("per_class_cd: no shared class; first has " +
                                list_labels(inv.only_first) + ", second has " +
                                list_labels(inv.only_second));
  }
  const auto gp = group(p_labels);
  const auto gq = group(q_labels);
  Var ones3 = tape.constant(Tensor(3, 1, 1.0));

  Var total;
  bool first = true;
  for (Label c : inv.shared) {
    const auto& pi = gp.at(c);
    const auto& qi = gq.at(c);
    const std::size_t n = pi.size(), m = qi.size();

    Tensor select(n, pv.rows());
    for (std::size_t r = 0; r < n; ++r) select(r, pi[r]) = 1.0;
    Tensor q_t(3, m);
    Tensor q_sq(1, m);
    for (std::size_t j = 0; j < m; ++j) {
      const Vec3& v = q[qi[j]];
      for (std::size_t d = 0; d < 3; ++d) q_t(d, j) = v[d];
      q_sq(0, j) = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    }

    // |p - q|^2 = |p|^2 + |q|^2 - 2 p.q, laid out n x m.
    Var pc = grad::matmul(tape.constant(std::move(select)), p);
    Var p_sq = grad::matmul(grad::square(pc), ones3);
    Var dist = grad::matmul(p_sq, tape.constant(Tensor(1, m, 1.0)));
    dist = grad::add(dist, tape.constant(std::move(q_sq)));
    dist = grad::add(dist, grad::scale(grad::matmul(pc, tape.constant(std::move(q_t))), -2.0));

    Var neg = grad::scale(dist, -1.0);
    Var q_to_p = grad::scale(grad::mean(grad::max_reduce(neg)), -1.0);
    Var p_to_q = grad::scale(grad::mean(grad::max_reduce(grad::transpose(neg))), -1.0);
    Var cd_c = grad::add(p_to_q, q_to_p);
    total = first ? cd_c : grad::add(total, cd_c);
    first = false;
  }
  return grad::scale(total, 1.0 / static_cast<double>(inv.shared.size()));
}

}  // namespace pcdiff
