#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace eivtraj {

/// How a block maps unconstrained reals onto its natural domain.
enum class Transform { Identity, Log };

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  Transform transform = Transform::Identity;
  bool scalar = false;  // named without an index suffix
};

/// Ordered named blocks partitioning a flat parameter vector.
class ParamLayout {
 public:
  /// Appends a block and returns its offset. Scalar blocks have size 1.
  std::size_t add(std::string name, std::size_t size, Transform transform);
  std::size_t add_scalar(std::string name, Transform transform);

  std::size_t dim() const { return dim_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  bool contains(const std::string& name) const;
  /// Throws StructuralError for unknown names.
  const ParamBlock& block(const std::string& name) const;

  /// Per-coordinate names, "block[i]" (or "block" for scalar blocks).
  std::vector<std::string> coordinate_names() const;

  /// Unconstrained -> natural domain (exp on log blocks).
  Eigen::VectorXd untransform(std::span<const double> unconstrained) const;
  /// Natural domain -> unconstrained. Throws DomainError for non-positive
  /// values in log blocks.
  Eigen::VectorXd transform(std::span<const double> constrained) const;
  /// log |d constrained / d unconstrained|: the sum of the unconstrained
  /// coordinates of every log block.
  double log_jacobian(std::span<const double> unconstrained) const;

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t dim_ = 0;
};

/// Flat unconstrained values together with their layout.
struct ParamVector {
  Eigen::VectorXd values;
  ParamLayout layout;

  std::span<const double> view(const std::string& block) const;
};

}  // namespace eivtraj
