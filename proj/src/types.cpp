#include "eivtraj/types.hpp"

#include <algorithm>
#include <cmath>

namespace eivtraj {

std::size_t PatientData::train_count() const {
  return static_cast<std::size_t>(std::count(train_mask.begin(), train_mask.end(), true));
}

void PatientData::validate() const {
  const std::string who = "patient '" + id + "': ";
  if (outcome.size() != obs_times.size() || outcome.size() != train_mask.size()) {
    throw DomainError(who + "outcome, times and train mask differ in length");
  }
  for (std::size_t i = 0; i < obs_times.size(); ++i) {
    if (!std::isfinite(obs_times[i]) || !std::isfinite(outcome[i])) {
      throw DomainError(who + "non-finite observation at index " + std::to_string(i));
    }
    if (i > 0 && !(obs_times[i] > obs_times[i - 1])) {
      throw DomainError(who + "observation times not strictly increasing at index " +
                        std::to_string(i));
    }
  }
  const std::size_t p = covariate_dim();
  for (std::size_t m = 0; m < events.size(); ++m) {
    const auto& e = events[m];
    if (!std::isfinite(e.observed_time)) {
      throw DomainError(who + "non-finite time for event " + std::to_string(m));
    }
    if (e.covariates.size() != p) {
      throw DomainError(who + "event " + std::to_string(m) + " has inconsistent covariate count");
    }
    for (double x : e.covariates) {
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw DomainError(who + "event " + std::to_string(m) + " has a negative covariate");
      }
    }
  }
}

std::size_t covariate_dim(const std::vector<PatientData>& data) {
  std::size_t p = 0;
  for (const auto& d : data) {
    const std::size_t q = d.covariate_dim();
    if (q == 0) continue;
    if (p != 0 && q != p) throw DomainError("covariate dimension differs between patients");
    p = q;
  }
  return p;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Ind: return "ind";
    case Variant::Hier: return "hier";
    case Variant::HierTime: return "hier+time";
    case Variant::HierTimeCov: return "hier+time+cov";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& s) {
  if (s == "ind") return Variant::Ind;
  if (s == "hier") return Variant::Hier;
  if (s == "hier+time" || s == "hier_time") return Variant::HierTime;
  if (s == "hier+time+cov" || s == "hier_time_cov") return Variant::HierTimeCov;
  throw DomainError("unknown model variant '" + s + "'");
}

void ModelSpec::validate() const {
  const double scales[] = {sigma_x,          sigma_t,           sigma_d,
                           sigma_y_scale,    sigma_h_scale,     sigma_l_scale,
                           beta_tilde_scale, independent_beta_scale, se_amplitude_scale,
                           const_amplitude_scale, se_lengthscale_log_sd, length_scale_floor,
                           length_scale_unit};
  for (double s : scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("model scale parameters must be positive");
  }
  if (inducing_count < 2) throw DomainError("inducing_count must be at least 2");
}

}  // namespace eivtraj
