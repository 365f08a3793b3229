#include "dragopt/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dragopt/error.hpp"
#include "dragopt/rng.hpp"

namespace dragopt::optimizer {

namespace {

constexpr double kSigmaFloor = 1e-12;

struct EIValue {
  double ei = 0.0;
  Eigen::VectorXd grad;
};

// EI and its gradient for every row of Z from one batched surrogate call.
std::vector<EIValue> evaluate_ei(const surrogate::SSGPModel& model, const Eigen::MatrixXd& Z, const EIState& state) {
  const surrogate::BatchPrediction pred = surrogate::predict_batch(model, Z, true);
  std::vector<EIValue> out(static_cast<std::size_t>(Z.rows()));
  for (Eigen::Index b = 0; b < Z.rows(); ++b) {
    const double var = std::max(pred.variance[b], 0.0);
    const double sigma = std::sqrt(var);
    const double delta = state.f_best - state.xi - pred.mean[b];
    EIValue& v = out[static_cast<std::size_t>(b)];
    if (sigma < kSigmaFloor) {
      v.ei = std::max(delta, 0.0);
      v.grad = delta > 0.0 ? Eigen::VectorXd(-pred.dmean.row(b).transpose()) : Eigen::VectorXd::Zero(Z.cols());
    } else {
      const double u = delta / sigma;
      v.ei = std::max(0.0, delta * normal_cdf(u) + sigma * normal_pdf(u));
      v.grad = -normal_cdf(u) * pred.dmean.row(b).transpose() +
               normal_pdf(u) * pred.dvariance.row(b).transpose() / (2.0 * sigma);
    }
  }
  return out;
}

}  // namespace

double normal_cdf(double u) { return 0.5 * std::erfc(-u / std::numbers::sqrt2); }

double normal_pdf(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

double expected_improvement(double mean, double variance, const EIState& state) {
  if (variance < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative variance");
  const double sigma = std::sqrt(variance);
  const double delta = state.f_best - state.xi - mean;
  if (sigma < kSigmaFloor) return std::max(delta, 0.0);
  const double u = delta / sigma;
  return std::max(0.0, delta * normal_cdf(u) + sigma * normal_pdf(u));
}

Eigen::VectorXd ei_gradient(const surrogate::SSGPModel& model, const Eigen::VectorXd& z, const EIState& state) {
  if (z.size() != model.basis.dim()) throw Error(ErrorCode::kInvalidArgument, "latent dimension mismatch");
  return evaluate_ei(model, z.transpose(), state).front().grad;
}

std::vector<Eigen::VectorXd> sample_starts(const Eigen::MatrixXd& train_mu, const Eigen::MatrixXd& train_logvar,
                                           int count, std::uint64_t seed) {
  if (train_mu.rows() < 1) throw Error(ErrorCode::kInvalidArgument, "empty training set");
  if (train_logvar.rows() != train_mu.rows() || train_logvar.cols() != train_mu.cols()) {
    throw Error(ErrorCode::kInvalidArgument, "mu and logvar shapes differ");
  }
  if (count < 1) throw Error(ErrorCode::kInvalidArgument, "start count must be positive");
  Rng rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, train_mu.rows() - 1);
  std::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> starts;
  starts.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    const Eigen::Index i = pick(rng);
    Eigen::VectorXd z(train_mu.cols());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      z[j] = train_mu(i, j) + std::exp(0.5 * train_logvar(i, j)) * normal(rng);
    }
    starts.push_back(std::move(z));
  }
  return starts;
}

std::vector<AscentResult> multistart_ascent(const surrogate::SSGPModel& model, const std::vector<Eigen::VectorXd>& starts,
                                            const EIState& state, const AscentConfig& cfg) {
  if (starts.empty()) throw Error(ErrorCode::kInvalidArgument, "no start points");
  const Eigen::Index d = model.basis.dim();
  const std::size_t n = starts.size();

  struct Run {
    AscentResult result;
    Eigen::VectorXd grad;
    double step = 0.0;
    bool done = false;
  };
  std::vector<Run> runs(n);

  auto evaluate = [&](const std::vector<std::size_t>& ids, const std::vector<Eigen::VectorXd>& points) {
    std::vector<EIValue> values;
    values.reserve(ids.size());
    const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));
    for (std::size_t lo = 0; lo < ids.size(); lo += batch) {
      const std::size_t hi = std::min(ids.size(), lo + batch);
      Eigen::MatrixXd Z(static_cast<Eigen::Index>(hi - lo), d);
      for (std::size_t k = lo; k < hi; ++k) Z.row(static_cast<Eigen::Index>(k - lo)) = points[k].transpose();
      auto part = evaluate_ei(model, Z, state);
      std::move(part.begin(), part.end(), std::back_inserter(values));
    }
    return values;
  };

  {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    for (const auto& z : starts) {
      if (z.size() != d) throw Error(ErrorCode::kInvalidArgument, "start dimension mismatch");
    }
    const auto values = evaluate(ids, starts);
    for (std::size_t k = 0; k < n; ++k) {
      runs[k].result.z = starts[k];
      runs[k].result.ei = values[k].ei;
      runs[k].result.start_index = static_cast<int>(k);
      runs[k].grad = values[k].grad;
      runs[k].step = cfg.initial_step;
    }
  }

  std::vector<std::size_t> active;
  std::vector<Eigen::VectorXd> trials;
  while (true) {
    active.clear();
    trials.clear();
    for (std::size_t k = 0; k < n; ++k) {
      Run& r = runs[k];
      if (r.done) continue;
      const double gnorm = r.grad.norm();
      if (gnorm < cfg.gradient_tol) {
        r.result.converged = true;
        r.done = true;
        continue;
      }
      // Stop when the iteration budget is spent or the step no longer moves z.
      if (r.result.iterations >= cfg.max_iters ||
          r.step * gnorm <= 1e-15 * std::max(1.0, r.result.z.norm())) {
        r.done = true;
        continue;
      }
      active.push_back(k);
      trials.push_back(r.result.z + r.step * r.grad);
    }
    if (active.empty()) break;
    const auto values = evaluate(active, trials);
    for (std::size_t a = 0; a < active.size(); ++a) {
      Run& r = runs[active[a]];
      if (values[a].ei > r.result.ei) {
        r.result.z = trials[a];
        r.result.ei = values[a].ei;
        r.grad = values[a].grad;
        r.step *= cfg.growth;
        ++r.result.iterations;
      } else {
        r.step *= 0.5;
      }
    }
  }

  std::vector<AscentResult> results;
  results.reserve(n);
  for (auto& r : runs) results.push_back(std::move(r.result));
  std::sort(results.begin(), results.end(), [](const AscentResult& a, const AscentResult& b) {
    if (a.ei != b.ei) return a.ei > b.ei;
    return a.start_index < b.start_index;
  });
  return results;
}

std::vector<AscentResult> select_candidates(const std::vector<AscentResult>& results, int k, double dedup_radius) {
  if (results.empty()) throw Error(ErrorCode::kInvalidArgument, "no ascent results");
  std::vector<const AscentResult*> order;
  for (const auto& r : results) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const AscentResult* a, const AscentResult* b) {
    if (a->ei != b->ei) return a->ei > b->ei;
    return a->start_index < b->start_index;
  });
  std::vector<AscentResult> picked;
  for (const AscentResult* r : order) {
    if (static_cast<int>(picked.size()) >= k) break;
    const bool close = std::any_of(picked.begin(), picked.end(),
                                   [&](const AscentResult& p) { return (p.z - r->z).norm() < dedup_radius; });
    if (!close) picked.push_back(*r);
  }
  return picked;
}

void write_candidates(const std::filesystem::path& path, const std::vector<AscentResult>& candidates) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  char buf[40];
  for (const auto& c : candidates) {
    std::snprintf(buf, sizeof buf, "%.17g", c.ei);
    out << buf;
    for (Eigen::Index j = 0; j < c.z.size(); ++j) {
      std::snprintf(buf, sizeof buf, " %.17g", c.z[j]);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<AscentResult> read_candidates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<AscentResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    AscentResult r;
    if (!(ls >> r.ei)) throw Error(ErrorCode::kFormat, "bad candidate line: " + line);
    std::vector<double> z;
    double x;
    while (ls >> x) z.push_back(x);
    r.z = Eigen::Map<Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
    r.start_index = static_cast<int>(out.size());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dragopt::optimizer
