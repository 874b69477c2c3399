#include "mvbed/deployment.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace mvbed {

WeightedPosterior weight_particles(Matrix particles, const Vector& log_likelihood) {
  if (log_likelihood.size() != particles.rows()) {
    throw ShapeError("weight_particles: " + std::to_string(log_likelihood.size()) + " log-likelihoods for " +
                     std::to_string(particles.rows()) + " particles");
  }
  if (log_likelihood.hasNaN()) throw PosteriorError("snis: NaN log-likelihood");
  const double max = log_likelihood.maxCoeff();
  if (!std::isfinite(max)) {
    throw PosteriorError(max < 0 ? "snis: every particle has zero likelihood (impossible data)"
                                 : "snis: infinite log-likelihood");
  }
  const double lse = max + std::log((log_likelihood.array() - max).exp().sum());
  WeightedPosterior post;
  post.particles = std::move(particles);
  post.log_weights = (log_likelihood.array() - lse).matrix();
  const Vector w = post.weights();
  post.ess = 1.0 / w.squaredNorm();
  return post;
}

RowVector WeightedPosterior::mean() const {
  const Vector w = weights();
  return (particles.array().colwise() * w.array()).colwise().sum().matrix();
}

RowVector WeightedPosterior::stddev() const {
  const Vector w = weights();
  const RowVector mu = mean();
  Matrix centred = particles.rowwise() - mu;
  return (centred.array().square().colwise() * w.array()).colwise().sum().sqrt().matrix();
}

void parallel_for(Index n, unsigned workers, const std::function<void(Index)>& fn) {
  if (n <= 0) return;
  const unsigned threads = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  if (threads == 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (Index i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

MetricSummary summarise(const std::vector<RealisationMetrics>& realisations) {
  std::vector<double> mstar, psi, action, regret, ess;
  MetricSummary s;
  s.n_envs = static_cast<Index>(realisations.size());
  for (const auto& r : realisations) {
    if (r.failed) {
      ++s.failures;
      continue;
    }
    mstar.push_back(r.mse_maxvalue);
    psi.push_back(r.mse_psi);
    action.push_back(r.action_score);
    regret.push_back(r.regret);
    ess.push_back(r.ess);
  }
  s.mse_maxvalue = mean_se(mstar);
  s.mse_psi = mean_se(psi);
  s.action_score = mean_se(action);
  s.regret = mean_se(regret);
  s.ess = mean_se(ess);
  return s;
}

CalibrationSeries calibration_series(const std::vector<RealisationMetrics>& realisations, std::size_t window) {
  CalibrationSeries out;
  out.window = window;
  for (const auto& r : realisations) {
    if (r.failed) continue;
    out.posterior_std.push_back(r.posterior_std);
    out.l2_error.push_back(r.l2_error);
  }
  out.rolling_error = rolling_mean(out.l2_error, window);
  return out;
}

std::string calibration_csv(const CalibrationSeries& series) {
  std::ostringstream os;
  os.precision(17);
  os << "index,posterior_std,l2_error,rolling_l2_error\n";
  for (std::size_t i = 0; i < series.l2_error.size(); ++i) {
    os << i << "," << series.posterior_std[i] << "," << series.l2_error[i] << "," << series.rolling_error[i] << "\n";
  }
  return os.str();
}

}  // namespace mvbed
