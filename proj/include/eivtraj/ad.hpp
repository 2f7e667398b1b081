#pragma once

// Minimal reverse-mode automatic differentiation.
//
// A Tape records every operation as a node holding the indices of its
// parents and the local partial derivatives with respect to them. A single
// reverse sweep from an output node accumulates adjoints for every node.
// Constants (index < 0) are never recorded. Operations with many inputs and
// an analytically known gradient can be recorded as one n-ary node.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace eivtraj::ad {

class Tape {
 public:
  Tape() { begin_.push_back(0); }

  /// Independent variable.
  int leaf() { return close_node(); }

  int unary(int a, double da) {
    parent_.push_back(a);
    partial_.push_back(da);
    return close_node();
  }

  int binary(int a, double da, int b, double db) {
    parent_.push_back(a);
    partial_.push_back(da);
    parent_.push_back(b);
    partial_.push_back(db);
    return close_node();
  }

  /// Parents with a negative index are skipped.
  int nary(std::span<const int> parents, std::span<const double> partials);

  void clear() {
    begin_.resize(1);
    parent_.clear();
    partial_.clear();
  }

  std::size_t size() const { return begin_.size() - 1; }

  /// Reverse sweep seeded with d(output)/d(output) = 1. The returned
  /// reference is valid until the next call on this tape.
  const std::vector<double>& gradient(int output);

 private:
  int close_node() {
    begin_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return static_cast<int>(begin_.size()) - 2;
  }

  std::vector<std::uint32_t> begin_;
  std::vector<int> parent_;
  std::vector<double> partial_;
  std::vector<double> adjoint_;
};

class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT: implicit constant lift
  Var(double v, Tape* tape, int index) : value_(v), index_(index), tape_(tape) {}

  static Var independent(double v, Tape& tape) { return {v, &tape, tape.leaf()}; }

  double value() const { return value_; }
  int index() const { return index_; }
  Tape* tape() const { return tape_; }
  bool is_constant() const { return index_ < 0; }

  Var& operator+=(const Var& o);
  Var& operator-=(const Var& o);
  Var& operator*=(const Var& o);
  Var& operator/=(const Var& o);

 private:
  double value_ = 0.0;
  int index_ = -1;
  Tape* tape_ = nullptr;
};

namespace detail {

inline Var unary(double v, const Var& a, double da) {
  if (a.is_constant()) return Var(v);
  return {v, a.tape(), a.tape()->unary(a.index(), da)};
}

inline Var binary(double v, const Var& a, double da, const Var& b, double db) {
  if (a.is_constant()) return unary(v, b, db);
  if (b.is_constant()) return unary(v, a, da);
  return {v, a.tape(), a.tape()->binary(a.index(), da, b.index(), db)};
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(a.value() + b.value(), a, 1.0, b, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(a.value() - b.value(), a, 1.0, b, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(a.value() * b.value(), a, b.value(), b, a.value());
}
inline Var operator/(const Var& a, const Var& b) {
  const double q = a.value() / b.value();
  return detail::binary(q, a, 1.0 / b.value(), b, -q / b.value());
}
inline Var operator-(const Var& a) { return detail::unary(-a.value(), a, -1.0); }

inline Var operator+(const Var& a, double b) { return detail::unary(a.value() + b, a, 1.0); }
inline Var operator+(double a, const Var& b) { return b + a; }
inline Var operator-(const Var& a, double b) { return detail::unary(a.value() - b, a, 1.0); }
inline Var operator-(double a, const Var& b) { return detail::unary(a - b.value(), b, -1.0); }
inline Var operator*(const Var& a, double b) { return detail::unary(a.value() * b, a, b); }
inline Var operator*(double a, const Var& b) { return b * a; }
inline Var operator/(const Var& a, double b) { return detail::unary(a.value() / b, a, 1.0 / b); }
inline Var operator/(double a, const Var& b) {
  const double q = a / b.value();
  return detail::unary(q, b, -q / b.value());
}

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline Var exp(const Var& a) {
  const double e = std::exp(a.value());
  return detail::unary(e, a, e);
}
inline Var log(const Var& a) { return detail::unary(std::log(a.value()), a, 1.0 / a.value()); }
inline Var log1p(const Var& a) {
  return detail::unary(std::log1p(a.value()), a, 1.0 / (1.0 + a.value()));
}
inline Var square(const Var& a) {
  return detail::unary(a.value() * a.value(), a, 2.0 * a.value());
}
inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.value());
  return detail::unary(s, a, 0.5 / s);
}

inline double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline Var softplus(const Var& a) { return detail::unary(softplus(a.value()), a, logistic(a.value())); }

inline double square(double x) { return x * x; }

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

/// sum_i w_i * x_i recorded as a single node.
Var dot(std::span<const Var> x, std::span<const double> w);

}  // namespace eivtraj::ad
