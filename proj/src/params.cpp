#include "eivtraj/params.hpp"

#include <algorithm>
#include <cmath>

#include "eivtraj/types.hpp"

namespace eivtraj {

std::size_t ParamLayout::add(std::string name, std::size_t size, Transform transform) {
  if (contains(name)) throw StructuralError("duplicate parameter block '" + name + "'");
  blocks_.push_back({std::move(name), dim_, size, transform, false});
  dim_ += size;
  return blocks_.back().offset;
}

std::size_t ParamLayout::add_scalar(std::string name, Transform transform) {
  const std::size_t offset = add(std::move(name), 1, transform);
  blocks_.back().scalar = true;
  return offset;
}

bool ParamLayout::contains(const std::string& name) const {
  return std::any_of(blocks_.begin(), blocks_.end(),
                     [&](const ParamBlock& b) { return b.name == name; });
}

const ParamBlock& ParamLayout::block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw StructuralError("unknown parameter block '" + name + "'");
}

std::vector<std::string> ParamLayout::coordinate_names() const {
  std::vector<std::string> names;
  names.reserve(dim_);
  for (const auto& b : blocks_) {
    if (b.scalar) {
      names.push_back(b.name);
      continue;
    }
    for (std::size_t i = 0; i < b.size; ++i) names.push_back(b.name + "[" + std::to_string(i) + "]");
  }
  return names;
}

namespace {

void check_dim(std::size_t got, std::size_t want) {
  if (got != want) {
    throw StructuralError("parameter vector has " + std::to_string(got) +
                          " entries, layout expects " + std::to_string(want));
  }
}

}  // namespace

Eigen::VectorXd ParamLayout::untransform(std::span<const double> u) const {
  check_dim(u.size(), dim_);
  Eigen::VectorXd out(dim_);
  for (const auto& b : blocks_) {
    for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
      out[i] = b.transform == Transform::Log ? std::exp(u[i]) : u[i];
    }
  }
  return out;
}

Eigen::VectorXd ParamLayout::transform(std::span<const double> c) const {
  check_dim(c.size(), dim_);
  Eigen::VectorXd out(dim_);
  for (const auto& b : blocks_) {
    for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
      if (b.transform == Transform::Log) {
        if (!(c[i] > 0.0)) {
          throw DomainError("parameter '" + b.name + "' must be positive, got " +
                            std::to_string(c[i]));
        }
        out[i] = std::log(c[i]);
      } else {
        out[i] = c[i];
      }
    }
  }
  return out;
}

double ParamLayout::log_jacobian(std::span<const double> u) const {
  check_dim(u.size(), dim_);
  double lj = 0.0;
  for (const auto& b : blocks_) {
    if (b.transform != Transform::Log) continue;
    for (std::size_t i = b.offset; i < b.offset + b.size; ++i) lj += u[i];
  }
  return lj;
}

std::span<const double> ParamVector::view(const std::string& name) const {
  const ParamBlock& b = layout.block(name);
  return {values.data() + b.offset, b.size};
}

}  // namespace eivtraj
