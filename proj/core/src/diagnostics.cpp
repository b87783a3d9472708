#include "vbmis/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vbmis/errors.hpp"
#include "vbmis/special.hpp"

namespace vbmis {

namespace {

Eigen::LLT<Mat> require_spd(const Mat& m, const char* who) {
  if (m.rows() != m.cols() || m.rows() == 0) throw ShapeError(std::string(who) + ": matrix must be square");
  if (!m.allFinite() || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + m.cwiseAbs().maxCoeff())) {
    throw ParameterDomainError(std::string(who) + ": matrix is not symmetric");
  }
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) throw ParameterDomainError(std::string(who) + ": matrix is not positive definite");
  return llt;
}

double log_det(const Eigen::LLT<Mat>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

LimitingNormal make_limit(const Mat& precision, const Vec& theta_star, std::size_t n,
                          const std::optional<Vec>& delta, LimitFlavor flavor) {
  if (n == 0) throw std::invalid_argument("limiting normal: n must be positive");
  if (precision.rows() != theta_star.size()) throw ShapeError("limiting normal: V and theta_star disagree in size");
  LimitingNormal ln;
  ln.flavor = flavor;
  ln.n = n;
  const double nn = static_cast<double>(n);
  ln.center = theta_star;
  if (delta) {
    if (delta->size() != theta_star.size()) throw ShapeError("limiting normal: delta has the wrong length");
    ln.center += *delta / std::sqrt(nn);
  }
  ln.covariance = require_spd(precision, "limiting normal").solve(Mat::Identity(precision.rows(), precision.cols())) / nn;
  ln.covariance = 0.5 * (ln.covariance + ln.covariance.transpose());
  return ln;
}

}  // namespace

std::string_view to_string(LimitFlavor f) { return f == LimitFlavor::Exact ? "exact" : "meanfield"; }

LimitingNormal mean_field_limit(const Mat& V, const Vec& theta_star, std::size_t n, const std::optional<Vec>& delta) {
  require_spd(V, "mean_field_limit");
  const Mat vprime = V.diagonal().asDiagonal();
  return make_limit(vprime, theta_star, n, delta, LimitFlavor::MeanField);
}

LimitingNormal exact_limit(const Mat& V, const Vec& theta_star, std::size_t n, const std::optional<Vec>& delta) {
  return make_limit(V, theta_star, n, delta, LimitFlavor::Exact);
}

double tv_grid(const GridDensity& p, const GridDensity& q) {
  if (p.axes != q.axes || p.size() != q.size()) throw GridMismatch("tv_grid: densities live on different grids");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(std::exp(p.log_values[i]) - std::exp(q.log_values[i]));
  return std::min(1.0, 0.5 * s * p.cell_volume);
}

GridDensity gaussian_on_grid(const Vec& mean, const Mat& cov, const std::vector<GridAxis>& axes) {
  if (mean.size() != static_cast<Eigen::Index>(axes.size()) || cov.rows() != mean.size()) {
    throw ShapeError("gaussian_on_grid: dimensions disagree");
  }
  const Eigen::LLT<Mat> llt = require_spd(cov, "gaussian_on_grid");
  const Mat l_inv = llt.matrixL().solve(Mat::Identity(cov.rows(), cov.cols()));
  GridDensity g = make_grid(axes);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec z = l_inv * (g.point(i) - mean);
    g.log_values[i] = -0.5 * z.squaredNorm();
  }
  g.normalize();
  return g;
}

GridDensity gaussian_on_grid(const MeanFieldGaussian& q, const std::vector<GridAxis>& axes) {
  return gaussian_on_grid(q.mu, Mat(q.sigma().array().square().matrix().asDiagonal()), axes);
}

std::vector<GridAxis> covering_axes(const std::vector<std::pair<Vec, Mat>>& gaussians, int points,
                                    double half_width) {
  if (gaussians.empty()) throw std::invalid_argument("covering_axes: nothing to cover");
  const Eigen::Index d = gaussians.front().first.size();
  std::vector<GridAxis> axes;
  for (Eigen::Index j = 0; j < d; ++j) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [m, c] : gaussians) {
      const double s = std::sqrt(c(j, j));
      lo = std::min(lo, m[j] - half_width * s);
      hi = std::max(hi, m[j] + half_width * s);
    }
    axes.push_back({lo, hi, points});
  }
  return axes;
}

double tv_gaussians(const Vec& mean_a, const Mat& cov_a, const Vec& mean_b, const Mat& cov_b, int points) {
  const Eigen::Index d = mean_a.size();
  if (mean_b.size() != d) throw ShapeError("tv_gaussians: dimensions disagree");
  if (d <= 3) {
    int per_axis = points;
    if (d == 2) per_axis = std::min(points, 701);
    if (d == 3) per_axis = std::min(points, 121);
    const auto axes = covering_axes({{mean_a, cov_a}, {mean_b, cov_b}}, per_axis);
    return tv_grid(gaussian_on_grid(mean_a, cov_a, axes), gaussian_on_grid(mean_b, cov_b, axes));
  }
  double total = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const Vec ma = mean_a.segment(j, 1), mb = mean_b.segment(j, 1);
    const Mat ca = cov_a.block(j, j, 1, 1), cb = cov_b.block(j, j, 1, 1);
    total += tv_gaussians(ma, ca, mb, cb, points);
  }
  return total / static_cast<double>(d);
}

namespace {

// Equal-mass edges of the pooled column: bins - 1 interior cut points.
std::vector<double> pooled_edges(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int bins) {
  std::vector<double> all(a.data(), a.data() + a.size());
  all.insert(all.end(), b.data(), b.data() + b.size());
  std::sort(all.begin(), all.end());
  std::vector<double> edges;
  for (int k = 1; k < bins; ++k) {
    const auto idx = static_cast<std::size_t>(static_cast<double>(k) * static_cast<double>(all.size()) / bins);
    edges.push_back(all[std::min(idx, all.size() - 1)]);
  }
  return edges;
}

int bin_of(const std::vector<double>& edges, double x) {
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin());
}

double binned_tv(const Mat& p, const Mat& q, const std::vector<int>& cols, int bins) {
  std::vector<std::vector<double>> edges;
  for (int c : cols) edges.push_back(pooled_edges(p.col(c), q.col(c), bins));
  std::size_t cells = 1;
  for (std::size_t k = 0; k < cols.size(); ++k) cells *= static_cast<std::size_t>(bins);
  std::vector<double> hp(cells, 0.0), hq(cells, 0.0);
  auto fill = [&](const Mat& m, std::vector<double>& h) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::size_t cell = 0;
      for (std::size_t k = 0; k < cols.size(); ++k) {
        cell = cell * static_cast<std::size_t>(bins) + static_cast<std::size_t>(bin_of(edges[k], m(i, cols[k])));
      }
      h[cell] += 1.0 / static_cast<double>(m.rows());
    }
  };
  fill(p, hp);
  fill(q, hq);
  double s = 0.0;
  for (std::size_t c = 0; c < cells; ++c) s += std::abs(hp[c] - hq[c]);
  return 0.5 * s;
}

}  // namespace

SampleTv tv_samples(const Mat& draws_p, const Mat& draws_q, int bins_per_dim) {
  if (draws_p.rows() < 1000 || draws_q.rows() < 1000) throw InsufficientDraws("tv_samples: need at least 1000 draws");
  if (draws_p.cols() != draws_q.cols()) throw ShapeError("tv_samples: draw sets differ in dimension");
  if (bins_per_dim < 2) throw std::invalid_argument("tv_samples: need at least 2 bins");
  const auto d = static_cast<int>(draws_p.cols());
  SampleTv out;
  if (d == 1) {
    out.value = binned_tv(draws_p, draws_q, {0}, bins_per_dim);
  } else if (d == 2) {
    out.value = binned_tv(draws_p, draws_q, {0, 1}, bins_per_dim);
  } else {
    double total = 0.0;
    for (int j = 0; j < d; ++j) {
      out.per_coordinate.push_back(binned_tv(draws_p, draws_q, {j}, bins_per_dim));
      total += out.per_coordinate.back();
    }
    out.value = total / d;
  }
  return out;
}

double kl_mvn(const Vec& mean_a, const Mat& cov_a, const Vec& mean_b, const Mat& cov_b) {
  if (mean_a.size() != mean_b.size() || cov_a.rows() != mean_a.size() || cov_b.rows() != mean_b.size()) {
    throw ShapeError("kl_mvn: dimensions disagree");
  }
  const auto la = require_spd(cov_a, "kl_mvn");
  const auto lb = require_spd(cov_b, "kl_mvn");
  const Vec diff = mean_b - mean_a;
  const double trace = lb.solve(cov_a).trace();
  const double quad = diff.dot(lb.solve(diff));
  const double kl = 0.5 * (trace + quad - static_cast<double>(mean_a.size()) + log_det(lb) - log_det(la));
  return std::max(0.0, kl);
}

double entropy_gap(const Mat& V) {
  const auto llt = require_spd(V, "entropy_gap");
  return 0.5 * (V.diagonal().array().log().sum() - log_det(llt));
}

GridDensity kde_on_grid(const std::vector<double>& draws, const GridAxis& axis, double bandwidth) {
  if (draws.size() < 2) throw InsufficientDraws("kde_on_grid: need at least two draws");
  double h = bandwidth;
  if (h <= 0.0) {
    const double n = static_cast<double>(draws.size());
    double m = 0.0;
    for (double x : draws) m += x;
    m /= n;
    double v = 0.0;
    for (double x : draws) v += (x - m) * (x - m);
    const double sd = std::sqrt(v / (n - 1.0));
    std::vector<double> s = draws;
    std::sort(s.begin(), s.end());
    const double iqr = s[static_cast<std::size_t>(0.75 * (n - 1))] - s[static_cast<std::size_t>(0.25 * (n - 1))];
    const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    h = 0.9 * spread * std::pow(n, -0.2);
  }
  if (!(h > 0.0)) throw UndefinedStatistic("kde_on_grid: draws have zero spread");
  GridDensity g = make_grid({axis});
  for (int i = 0; i < axis.points; ++i) {
    const double x = axis.at(i);
    double s = 0.0;
    for (double d : draws) {
      const double z = (x - d) / h;
      s += std::exp(-0.5 * z * z);
    }
    g.log_values[static_cast<std::size_t>(i)] = s > 0.0 ? std::log(s) : -std::numeric_limits<double>::infinity();
  }
  g.normalize();
  return g;
}

PredictiveEstimate predictive_density(const ParametricModel& model, const Mat& draws,
                                      const std::vector<Datum>& x_new) {
  if (draws.rows() < 1 || draws.cols() != model.dim()) throw ShapeError("predictive_density: draws must be S x d");
  PredictiveEstimate out;
  out.points = x_new;
  out.draws_used = static_cast<std::size_t>(draws.rows());
  const auto s_count = static_cast<std::size_t>(draws.rows());
  std::vector<double> lp(s_count);
  std::vector<Vec> thetas;
  thetas.reserve(s_count);
  for (Eigen::Index s = 0; s < draws.rows(); ++s) thetas.emplace_back(draws.row(s).transpose());
  const double log_s = std::log(static_cast<double>(s_count));
  for (const Datum& x : x_new) {
    for (std::size_t s = 0; s < s_count; ++s) lp[s] = model.loglik(thetas[s], x);
    const double lse = log_sum_exp(lp);
    if (!std::isfinite(lse)) {
      out.has_zero = true;
      out.log_density.push_back(-std::numeric_limits<double>::infinity());
      out.se.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.log_density.push_back(lse - log_s);
    // Relative spread of the likelihood values, scaled to the mean.
    double sum = 0.0, sum_sq = 0.0;
    const double mx = *std::max_element(lp.begin(), lp.end());
    for (double v : lp) {
      const double w = std::exp(v - mx);
      sum += w;
      sum_sq += w * w;
    }
    const double n = static_cast<double>(s_count);
    const double mean = sum / n;
    const double var = s_count > 1 ? std::max(0.0, (sum_sq / n - mean * mean) * n / (n - 1.0)) : 0.0;
    out.se.push_back(std::sqrt(var / n) / mean);
  }
  return out;
}

double tv_weighted(const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& weights) {
  if (a.size() != b.size() || a.size() != weights.size()) throw GridMismatch("tv_weighted: grids differ in size");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += weights[i] * std::abs(a[i] - b[i]);
  return std::min(1.0, 0.5 * s);
}

MisspecRatio misspec_ratio(const std::vector<double>& vb_pred, const std::vector<double>& exact_pred,
                           const std::vector<double>& p0, const std::vector<double>& weights, double floor) {
  MisspecRatio r;
  r.numerator = tv_weighted(vb_pred, exact_pred, weights);
  r.denominator = tv_weighted(p0, exact_pred, weights);
  if (r.denominator < floor) {
    r.near_well_specified = true;
    r.ratio = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.ratio = r.numerator / r.denominator;
  }
  return r;
}

}  // namespace vbmis
