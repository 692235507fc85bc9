#include "pcdiff/metrics.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pcdiff/losses.hpp"

namespace pcdiff {

std::vector<Cloud> clouds_of(std::span<const LabeledPointCloud> shapes) {
  std::vector<Cloud> out;
  out.reserve(shapes.size());
  for (const auto& s : shapes) out.push_back(s.points);
  return out;
}

namespace {

std::vector<std::size_t> occupancy_counts(std::span<const Cloud> set, std::size_t resolution) {
  if (resolution < 2) throw std::invalid_argument("jsd grid resolution must be >= 2");
  if (set.empty()) throw std::invalid_argument("jsd: empty cloud set");
  std::vector<std::size_t> counts(resolution * resolution * resolution, 0);
  const auto cell = [resolution](double x) {
    const double f = std::floor((x + 1.0) / 2.0 * static_cast<double>(resolution));
    return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(resolution - 1)));
  };
  std::size_t total = 0;
  for (const Cloud& c : set) {
    for (const Vec3& p : c) {
      ++counts[(cell(p[0]) * resolution + cell(p[1])) * resolution + cell(p[2])];
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("jsd: cloud set has no points");
  return counts;
}

template <typename A, typename B>
double jsd_impl(std::span<const A> p, long double p_total, std::span<const B> q, long double q_total) {
  if (p.size() != q.size()) throw std::invalid_argument("jsd: distributions differ in length");
  long double sum = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double a = static_cast<long double>(p[i]) / p_total;
    const long double b = static_cast<long double>(q[i]) / q_total;
    const long double m = (a + b) / 2.0L;
    const long double ta = a > 0.0L ? a * std::log(a / m) : 0.0L;
    const long double tb = b > 0.0L ? b * std::log(b / m) : 0.0L;
    sum += ta + tb;
  }
  return static_cast<double>(sum / 2.0L);
}

}  // namespace

double jsd_distributions(std::span<const double> p, std::span<const double> q) {
  return jsd_impl(p, 1.0L, q, 1.0L);
}

std::vector<double> occupancy(std::span<const Cloud> set, std::size_t resolution) {
  const auto counts = occupancy_counts(set, resolution);
  std::size_t total = 0;
  for (auto c : counts) total += c;
  std::vector<double> dist(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    dist[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return dist;
}

double jsd(std::span<const Cloud> gen, std::span<const Cloud> ref, std::size_t resolution) {
  const auto p = occupancy_counts(gen, resolution);
  const auto q = occupancy_counts(ref, resolution);
  std::size_t pt = 0, qt = 0;
  for (auto c : p) pt += c;
  for (auto c : q) qt += c;
  return jsd_impl(std::span<const std::size_t>(p), static_cast<long double>(pt), std::span<const std::size_t>(q),
                  static_cast<long double>(qt));
}

std::size_t worker_count() {
  if (const char* env = std::getenv("PCDIFF_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

void parallel_for(std::size_t count, const auto& fn) {
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(count, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  }
}

void require_nonempty(std::span<const Cloud> gen, std::span<const Cloud> ref) {
  if (gen.empty() || ref.empty()) throw std::invalid_argument("metric needs non-empty gen and ref sets");
}

}  // namespace

std::vector<double> cd_matrix(std::span<const Cloud> a, std::span<const Cloud> b) {
  std::vector<double> d(a.size() * b.size());
  parallel_for(d.size(), [&](std::size_t k) { d[k] = global_cd(a[k / b.size()], b[k % b.size()]); });
  return d;
}

double mmd_cd(std::span<const Cloud> gen, std::span<const Cloud> ref) {
  require_nonempty(gen, ref);
  const auto d = cd_matrix(gen, ref);
  double sum = 0.0;
  for (std::size_t r = 0; r < ref.size(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gen.size(); ++g) best = std::min(best, d[g * ref.size() + r]);
    sum += best;
  }
  return sum / static_cast<double>(ref.size());
}

double coverage(std::span<const Cloud> gen, std::span<const Cloud> ref) {
  require_nonempty(gen, ref);
  const auto d = cd_matrix(gen, ref);
  std::vector<bool> hit(ref.size(), false);
  for (std::size_t g = 0; g < gen.size(); ++g) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < ref.size(); ++r) {
      if (d[g * ref.size() + r] < d[g * ref.size() + best]) best = r;
    }
    hit[best] = true;
  }
  return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / static_cast<double>(ref.size());
}

double one_nna(std::span<const Cloud> gen, std::span<const Cloud> ref) {
  const std::size_t n = gen.size() + ref.size();
  if (n < 2) throw std::invalid_argument("1-NNA needs at least two clouds in total");
  std::vector<Cloud> merged(gen.begin(), gen.end());
  merged.insert(merged.end(), ref.begin(), ref.end());

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  std::vector<double> d(n * n, 0.0);
  parallel_for(pairs.size(), [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    d[i * n + j] = global_cd(merged[i], merged[j]);
  });
  for (auto [i, j] : pairs) d[j * n + i] = d[i * n + j];

  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (best == n || d[i * n + j] < d[i * n + best]) best = j;
    }
    if ((i < gen.size()) == (best < gen.size())) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

MetricsReport build_report(std::span<const Cloud> gen, std::span<const Cloud> ref, const ReportConfig& config) {
  MetricsReport r;
  r.jsd = jsd(gen, ref, config.jsd_resolution);
  r.mmd = mmd_cd(gen, ref);
  r.cov = coverage(gen, ref);
  r.one_nna = one_nna(gen, ref);
  return r;
}

double round_half_even(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const int old = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(value * scale) / scale;
  std::fesetround(old);
  return r == 0.0 ? 0.0 : r;
}

std::string format_2dp(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", round_half_even(value, 2));
  return buf;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "metric   raw                    reported\n";
  char line[128];
  const auto row = [&](const char* name, double raw, double scaled, const char* unit) {
    std::snprintf(line, sizeof line, "%-8s %-22.17g %s %s\n", name, raw, format_2dp(scaled).c_str(), unit);
    os << line;
  };
  row("JSD", jsd, jsd_scaled(), "(x10^2)");
  row("MMD", mmd, mmd_scaled(), "(x10^3)");
  row("COV", cov, cov_scaled(), "(%)");
  row("1-NNA", one_nna, one_nna_scaled(), "(%)");
  return os.str();
}

std::string MetricsReport::to_kv() const {
  std::ostringstream os;
  char line[128];
  const auto kv = [&](const char* key, double raw, double scaled) {
    std::snprintf(line, sizeof line, "%s = %.17g\n%s_reported = %s\n", key, raw, key, format_2dp(scaled).c_str());
    os << line;
  };
  kv("jsd", jsd, jsd_scaled());
  kv("mmd", mmd, mmd_scaled());
  kv("cov", cov, cov_scaled());
  kv("one_nna", one_nna, one_nna_scaled());
  return os.str();
}

}  // namespace pcdiff
