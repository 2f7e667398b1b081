#include "eivtraj/nuts.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <string>
#include <random>
#include <thread>

#include "eivtraj/types.hpp"

namespace eivtraj {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct PhasePoint {
  Eigen::VectorXd q, p, grad;
  double logp = -kInf;
};

// Dual averaging of log step size toward a target acceptance statistic.
class StepSizeAdaptation {
 public:
  explicit StepSizeAdaptation(double delta) : delta_(delta) {}

  void set_mu(double mu) { mu_ = mu; }
  void restart() {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }
  double learn(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double n = static_cast<double>(counter_);
    const double eta = 1.0 / (n + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(n) / kGamma;
    const double x_eta = std::pow(n, -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }
  double final_step() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kKappa = 0.75;
  static constexpr double kT0 = 10.0;
  double delta_;
  double mu_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  std::size_t counter_ = 0;
};

// Doubling windows for metric estimation inside warmup.
class WindowSchedule {
 public:
  explicit WindowSchedule(std::size_t warmup) : warmup_(warmup) {
    if (warmup < 20) {
      enabled_ = false;
      return;
    }
    if (init_buffer_ + base_window_ + term_buffer_ > warmup) {
      init_buffer_ = static_cast<std::size_t>(0.15 * static_cast<double>(warmup));
      term_buffer_ = static_cast<std::size_t>(0.1 * static_cast<double>(warmup));
      base_window_ = warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  bool in_window() const {
    return enabled_ && counter_ >= init_buffer_ && counter_ < warmup_ - term_buffer_ &&
           counter_ != warmup_;
  }
  bool window_end() const { return enabled_ && counter_ == next_window_ && counter_ != warmup_; }
  void advance() { ++counter_; }

  void compute_next_window() {
    if (next_window_ == warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != warmup_ - term_buffer_ - 1) {
      const std::size_t boundary = next_window_ + 2 * window_size_;
      if (boundary >= warmup_ - term_buffer_) next_window_ = warmup_ - term_buffer_ - 1;
    }
  }

 private:
  std::size_t warmup_;
  bool enabled_ = true;
  std::size_t init_buffer_ = 75;
  std::size_t term_buffer_ = 50;
  std::size_t base_window_ = 25;
  std::size_t window_size_ = 0;
  std::size_t next_window_ = 0;
  std::size_t counter_ = 0;
};

class Welford {
 public:
  explicit Welford(Eigen::Index dim) : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}
  void add(const Eigen::VectorXd& x) {
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(x - mean_);
  }
  std::size_t count() const { return n_; }
  Eigen::VectorXd variance() const { return m2_ / (static_cast<double>(n_) - 1.0); }
  void restart() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }

 private:
  std::size_t n_ = 0;
  Eigen::VectorXd mean_, m2_;
};

struct Transition {
  double accept_stat = 0.0;
  int depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
};

class Chain {
 public:
  Chain(LogDensityGradient target, const SamplerConfig& cfg, std::uint64_t seed, Eigen::Index dim)
      : target_(std::move(target)),
        cfg_(cfg),
        rng_(seed),
        inv_metric_(Eigen::VectorXd::Ones(dim)),
        dim_(dim) {}

  void initialize(std::span<const double> init) {
    std::uniform_real_distribution<double> jitter(-cfg_.init_jitter, cfg_.init_jitter);
    z_.q.resize(dim_);
    z_.p = Eigen::VectorXd::Zero(dim_);
    z_.grad.resize(dim_);
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (Eigen::Index i = 0; i < dim_; ++i) {
        z_.q[i] = init[static_cast<std::size_t>(i)] + (cfg_.init_jitter > 0 ? jitter(rng_) : 0.0);
      }
      z_.logp = target_({z_.q.data(), static_cast<std::size_t>(dim_)},
                        {z_.grad.data(), static_cast<std::size_t>(dim_)});
      if (std::isfinite(z_.logp) && z_.grad.allFinite()) return;
    }
    throw NumericalError("no finite starting point found near the initial values");
  }

  double hamiltonian(const PhasePoint& z) const {
    if (!std::isfinite(z.logp)) return kInf;
    return -z.logp + 0.5 * z.p.dot(inv_metric_.cwiseProduct(z.p));
  }

  void sample_momentum(PhasePoint& z) {
    for (Eigen::Index i = 0; i < dim_; ++i) z.p[i] = normal_(rng_) / std::sqrt(inv_metric_[i]);
  }

  void evolve(PhasePoint& z, double eps) {
    z.logp = leapfrog(target_, z.q, z.p, z.grad, inv_metric_, eps);
  }

  // Step-size heuristic: double or halve until the one-step acceptance
  // crosses 0.8.
  void init_stepsize() {
    const PhasePoint start = z_;
    sample_momentum(z_);
    double h0 = hamiltonian(z_);
    evolve(z_, epsilon_);
    double h = hamiltonian(z_);
    if (std::isnan(h)) h = kInf;
    double delta_h = h0 - h;
    const int direction = delta_h > std::log(0.8) ? 1 : -1;
    for (;;) {
      z_ = start;
      sample_momentum(z_);
      h0 = hamiltonian(z_);
      evolve(z_, epsilon_);
      h = hamiltonian(z_);
      if (std::isnan(h)) h = kInf;
      delta_h = h0 - h;
      if (direction == 1 && !(delta_h > std::log(0.8))) break;
      if (direction == -1 && !(delta_h < std::log(0.8))) break;
      epsilon_ = direction == 1 ? 2.0 * epsilon_ : 0.5 * epsilon_;
      if (epsilon_ > 1e7) throw NumericalError("step size diverged; posterior may be improper");
      if (epsilon_ == 0.0) throw NumericalError("step size collapsed to zero");
    }
    z_ = start;
  }

  Transition transition() {
    Transition t;
    sample_momentum(z_);
    PhasePoint z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;
    const Eigen::VectorXd p_sharp0 = inv_metric_.cwiseProduct(z_.p);
    Eigen::VectorXd p_fwd_fwd = z_.p, p_sharp_fwd_fwd = p_sharp0;
    Eigen::VectorXd p_fwd_bck = z_.p, p_sharp_fwd_bck = p_sharp0;
    Eigen::VectorXd p_bck_fwd = z_.p, p_sharp_bck_fwd = p_sharp0;
    Eigen::VectorXd p_bck_bck = z_.p, p_sharp_bck_bck = p_sharp0;
    Eigen::VectorXd rho = z_.p;
    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(z_);
    int n_leapfrog = 0;
    double sum_metro = 0.0;
    divergent_ = false;
    int depth = 0;

    while (depth < cfg_.max_tree_depth) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(dim_);
      Eigen::VectorXd rho_bck = Eigen::VectorXd::Zero(dim_);
      bool valid = false;
      double lsw_subtree = -kInf;
      if (uniform_(rng_) > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck,
                           p_fwd_fwd, h0, 1.0, n_leapfrog, lsw_subtree, sum_metro);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd,
                           p_bck_bck, h0, -1.0, n_leapfrog, lsw_subtree, sum_metro);
        z_bck = z_;
      }
      if (!valid) break;
      ++depth;
      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform_(rng_) < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }
    t.n_leapfrog = n_leapfrog;
    t.accept_stat = n_leapfrog > 0 ? sum_metro / n_leapfrog : 0.0;
    t.depth = depth;
    t.divergent = divergent_;
    z_ = z_sample;
    return t;
  }

  const PhasePoint& state() const { return z_; }
  double epsilon() const { return epsilon_; }
  void set_epsilon(double e) { epsilon_ = e; }
  Eigen::VectorXd& inv_metric() { return inv_metric_; }

 private:
  static bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
                  Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg,
                  Eigen::VectorXd& p_end, double h0, double sign, int& n_leapfrog,
                  double& log_sum_weight, double& sum_metro) {
    if (depth == 0) {
      evolve(z_, sign * epsilon_);
      ++n_leapfrog;
      double h = hamiltonian(z_);
      if (std::isnan(h)) h = kInf;
      if (h - h0 > cfg_.max_delta_h) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      p_sharp_beg = inv_metric_.cwiseProduct(z_.p);
      p_sharp_end = p_sharp_beg;
      rho += z_.p;
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }

    double lsw_init = -kInf;
    Eigen::VectorXd p_init_end(dim_), p_sharp_init_end(dim_);
    Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(dim_);
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                    p_init_end, h0, sign, n_leapfrog, lsw_init, sum_metro)) {
      return false;
    }

    PhasePoint z_propose_final = z_;
    double lsw_final = -kInf;
    Eigen::VectorXd p_final_beg(dim_), p_sharp_final_beg(dim_);
    Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(dim_);
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                    p_final_beg, p_end, h0, sign, n_leapfrog, lsw_final, sum_metro)) {
      return false;
    }

    const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (uniform_(rng_) < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  LogDensityGradient target_;
  const SamplerConfig& cfg_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  Eigen::VectorXd inv_metric_;
  Eigen::Index dim_;
  PhasePoint z_;
  double epsilon_ = 1.0;
  bool divergent_ = false;
};

struct ChainOutput {
  std::size_t warmup_divergences = 0;
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
};

ChainOutput run_chain(const DensityFactory& factory, const SamplerConfig& cfg,
                      std::span<const double> init, std::size_t index, PosteriorDraws& out) {
  const auto dim = static_cast<Eigen::Index>(init.size());
  Chain chain(factory(), cfg, chain_seed(cfg.seed, index), dim);
  chain.initialize(init);
  chain.init_stepsize();

  StepSizeAdaptation stepsize(cfg.target_accept);
  stepsize.set_mu(std::log(10.0 * chain.epsilon()));
  stepsize.restart();
  WindowSchedule windows(cfg.warmup);
  Welford estimator(dim);

  ChainOutput result;
  for (std::size_t it = 0; it < cfg.warmup; ++it) {
    const Transition t = chain.transition();
    if (t.divergent) ++result.warmup_divergences;
    chain.set_epsilon(stepsize.learn(t.accept_stat));
    if (windows.in_window()) estimator.add(chain.state().q);
    if (windows.window_end()) {
      windows.compute_next_window();
      const double n = static_cast<double>(estimator.count());
      chain.inv_metric() = (n / (n + 5.0)) * estimator.variance().array() + 1e-3 * (5.0 / (n + 5.0));
      estimator.restart();
      chain.init_stepsize();
      stepsize.set_mu(std::log(10.0 * chain.epsilon()));
      stepsize.restart();
    }
    windows.advance();
  }
  if (cfg.warmup > 0) {
    if (result.warmup_divergences == cfg.warmup) {
      throw NumericalError("chain " + std::to_string(index) +
                           ": every warmup transition diverged (final step size " +
                           std::to_string(chain.epsilon()) + ")");
    }
    chain.set_epsilon(stepsize.final_step());
  }

  const std::size_t d = static_cast<std::size_t>(dim);
  for (std::size_t k = 0; k < cfg.draws; ++k) {
    const Transition t = chain.transition();
    const std::size_t row = index * cfg.draws + k;
    const auto& q = chain.state().q;
    std::copy(q.data(), q.data() + d, out.values.begin() + static_cast<std::ptrdiff_t>(row * d));
    out.logp[row] = chain.state().logp;
    out.divergent[row] = t.divergent ? 1 : 0;
    out.tree_depth[row] = t.depth;
    out.n_leapfrog[row] = t.n_leapfrog;
    out.accept_stat[row] = t.accept_stat;
  }
  result.step_size = chain.epsilon();
  result.inv_metric = chain.inv_metric();
  return result;
}

}  // namespace

std::size_t PosteriorDraws::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw StructuralError("no parameter named '" + name + "' in draws");
  return static_cast<std::size_t>(it - names.begin());
}

Eigen::VectorXd PosteriorDraws::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  const std::size_t n = total();
  if (n == 0) return m;
  for (std::size_t k = 0; k < n; ++k) {
    const auto r = row(k);
    for (std::size_t j = 0; j < dim(); ++j) m[static_cast<Eigen::Index>(j)] += r[j];
  }
  return m / static_cast<double>(n);
}

std::size_t PosteriorDraws::divergence_count() const {
  return static_cast<std::size_t>(std::count(divergent.begin(), divergent.end(), 1));
}

void SamplerConfig::validate() const {
  if (chains < 1) throw DomainError("chains must be at least 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw DomainError("target_accept must lie in (0, 1)");
  }
  if (max_tree_depth < 1) throw DomainError("max_tree_depth must be positive");
  if (!(init_jitter >= 0.0)) throw DomainError("init_jitter must be non-negative");
  if (!(max_delta_h > 0.0)) throw DomainError("max_delta_h must be positive");
}

std::uint64_t chain_seed(std::uint64_t seed, std::size_t chain) {
  return splitmix64(splitmix64(seed) ^ splitmix64(0xC0FFEEULL + chain));
}

double leapfrog(const LogDensityGradient& target, Eigen::VectorXd& q, Eigen::VectorXd& p,
                Eigen::VectorXd& grad, const Eigen::VectorXd& inv_metric, double eps) {
  p += 0.5 * eps * grad;
  q += eps * inv_metric.cwiseProduct(p);
  const double logp =
      target({q.data(), static_cast<std::size_t>(q.size())}, {grad.data(), static_cast<std::size_t>(grad.size())});
  if (!std::isfinite(logp)) return -kInf;
  p += 0.5 * eps * grad;
  return logp;
}

PosteriorDraws nuts_sample(const DensityFactory& target, const SamplerConfig& config,
                           std::span<const double> init) {
  config.validate();
  const std::size_t dim = init.size();
  PosteriorDraws out;
  out.chains = config.chains;
  out.draws = config.draws;
  for (std::size_t i = 0; i < dim; ++i) out.names.push_back("x[" + std::to_string(i) + "]");
  const std::size_t rows = config.chains * config.draws;
  out.values.assign(rows * dim, 0.0);
  out.logp.assign(rows, 0.0);
  out.divergent.assign(rows, 0);
  out.tree_depth.assign(rows, 0);
  out.n_leapfrog.assign(rows, 0);
  out.accept_stat.assign(rows, 0.0);

  std::vector<ChainOutput> results(config.chains);
  std::vector<std::exception_ptr> errors(config.chains);
  std::size_t workers = config.threads;
  if (workers == 0) workers = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  workers = std::min(workers, config.chains);

  const auto work = [&](std::size_t first) {
    for (std::size_t c = first; c < config.chains; c += workers) {
      try {
        results[c] = run_chain(target, config, init, c, out);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (const auto& r : results) {
    out.step_sizes.push_back(r.step_size);
    out.inv_metric.push_back(r.inv_metric);
    out.warmup_divergences += r.warmup_divergences;
  }
  return out;
}

}  // namespace eivtraj
