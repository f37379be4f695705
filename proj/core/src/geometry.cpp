#include "gaot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gaot/ops.hpp"

namespace gaot {

int geom_stat_dim(int d) { return 3 + 2 * d; }

std::vector<double> symmetric_eigenvalues(std::vector<double> a, int d, double tol) {
  if (static_cast<int>(a.size()) != d * d) throw std::invalid_argument("symmetric_eigenvalues: size mismatch");
  if (d == 1) return {a[0]};

  auto off_norm = [&] {
    double s = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j) s += a[i * d + j] * a[i * d + j];
    return std::sqrt(s);
  };

  // cyclic Jacobi: sweep all (p,q) pairs, rotate each away
  for (int sweep = 0; sweep < 64 && off_norm() > tol; ++sweep) {
    for (int p = 0; p < d - 1; ++p)
      for (int q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (apq == 0.0) continue;
        const double app = a[p * d + p], aqq = a[q * d + q];
        const double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
        const double c = std::cos(theta), s = std::sin(theta);
        for (int k = 0; k < d; ++k) {
          const double akp = a[k * d + p], akq = a[k * d + q];
          a[k * d + p] = c * akp - s * akq;
          a[k * d + q] = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          const double apk = a[p * d + k], aqk = a[q * d + k];
          a[p * d + k] = c * apk - s * aqk;
          a[q * d + k] = s * apk + c * aqk;
        }
      }
  }

  std::vector<double> eig(d);
  for (int i = 0; i < d; ++i) eig[i] = a[i * d + i];
  std::sort(eig.begin(), eig.end(), std::greater<double>());
  return eig;
}

std::vector<double> geometry_stats(const ScaleNeighborhood& nb, int d) {
  const int64_t centers = nb.centers();
  const int dim = geom_stat_dim(d);
  std::vector<double> out(centers * dim, 0.0);

  std::vector<double> cov(d * d);
  for (int64_t c = 0; c < centers; ++c) {
    const int64_t lo = nb.offsets[c], hi = nb.offsets[c + 1];
    const int64_t n = hi - lo;
    double* row = out.data() + c * dim;
    if (n == 0) continue;  // all-zero row

    row[0] = static_cast<double>(n);

    double dist_sum = 0.0, dist_sq_sum = 0.0;
    std::vector<double> centroid(d, 0.0);
    for (int64_t e = lo; e < hi; ++e) {
      double d2 = 0.0;
      for (int a = 0; a < d; ++a) {
        const double x = nb.rel_disp[e * d + a];
        d2 += x * x;
        centroid[a] += x;
      }
      const double dist = std::sqrt(d2);
      dist_sum += dist;
      dist_sq_sum += d2;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    const double d_avg = dist_sum * inv_n;
    row[1] = d_avg;
    row[2] = dist_sq_sum * inv_n - d_avg * d_avg;  // population variance of |disp|
    for (int a = 0; a < d; ++a) {
      centroid[a] *= inv_n;
      row[3 + a] = centroid[a];  // centroid offset from the center point
    }

    if (n >= d) {
      std::fill(cov.begin(), cov.end(), 0.0);
      for (int64_t e = lo; e < hi; ++e)
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j)
            cov[i * d + j] += (nb.rel_disp[e * d + i] - centroid[i]) * (nb.rel_disp[e * d + j] - centroid[j]);
      for (auto& v : cov) v *= inv_n;
      const auto eig = symmetric_eigenvalues(cov, d);
      for (int a = 0; a < d; ++a) row[3 + d + a] = eig[a];
    }
    // n < d leaves the eigenvalue slots zero
  }
  return out;
}

StatNormalizer fit_stat_normalizer(const std::vector<double>& rows, int64_t n, int dim) {
  if (n <= 0 || static_cast<int64_t>(rows.size()) != n * dim)
    throw std::invalid_argument("fit_stat_normalizer: bad row count");
  StatNormalizer nz;
  nz.mean.assign(dim, 0.0);
  nz.stdev.assign(dim, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) nz.mean[j] += rows[i * dim + j];
  for (int j = 0; j < dim; ++j) nz.mean[j] /= static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) {
      const double dlt = rows[i * dim + j] - nz.mean[j];
      nz.stdev[j] += dlt * dlt;
    }
  for (int j = 0; j < dim; ++j) nz.stdev[j] = std::max(std::sqrt(nz.stdev[j] / static_cast<double>(n)), 1e-8);
  return nz;
}

std::vector<double> apply_stat_normalizer(const StatNormalizer& nz, const std::vector<double>& rows, int64_t n) {
  const int dim = static_cast<int>(nz.mean.size());
  if (static_cast<int64_t>(rows.size()) != n * dim)
    throw std::invalid_argument("apply_stat_normalizer: bad row count");
  std::vector<double> out(rows.size());
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) out[i * dim + j] = (rows[i * dim + j] - nz.mean[j]) / nz.stdev[j];
  return out;
}

ad::Tensor StatEmbedding::embed(const std::vector<double>& stats, int64_t centers, size_t scale) const {
  if (scale >= normalizers.size()) throw std::invalid_argument("StatEmbedding: scale index out of range");
  const int dim = static_cast<int>(normalizers[scale].mean.size());
  auto normed = apply_stat_normalizer(normalizers[scale], stats, centers);
  return mlp.apply(ad::constant({centers, dim}, std::move(normed)));
}

ad::Tensor PointNetEmbedding::embed(const ScaleNeighborhood& nb, int d) const {
  const int64_t centers = nb.centers();
  if (nb.edges() == 0) {
    // nothing anywhere: pooled features are all zero
    return post.apply(ad::zeros({centers, point_mlp.out_dim()}));
  }
  ad::Tensor disp = ad::constant({nb.edges(), d}, nb.rel_disp);
  ad::Tensor per_edge = point_mlp.apply(disp);
  ad::Tensor pooled = ad::segment_sum(per_edge, nb.offsets);
  // mean pool: divide by the count, 1 for empty buckets to keep zeros
  std::vector<double> inv(centers);
  for (int64_t c = 0; c < centers; ++c) inv[c] = 1.0 / std::max<int64_t>(nb.count(c), 1);
  pooled = ad::mul(pooled, ad::constant({centers, 1}, std::move(inv)));
  return post.apply(pooled);
}

}  // namespace gaot
