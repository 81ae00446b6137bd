#pragma once

#include <functional>
#include <utility>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "exprb/matfunc.hpp"

namespace exprb {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// A square linear map known only through its action. Large matrices are
/// only ever touched through one of these.
class LinearOperator {
 public:
  using ApplyFn = std::function<void(const Vector& in, Vector& out)>;

  LinearOperator() = default;
  LinearOperator(Index dim, ApplyFn fn) : dim_(dim), fn_(std::move(fn)) {}

  static LinearOperator from_dense(Matrix m);
  static LinearOperator from_sparse(SparseMatrix m);
  static LinearOperator zero(Index dim);

  Index dim() const { return dim_; }
  explicit operator bool() const { return static_cast<bool>(fn_); }

  /// out = Op * in. out is resized to dim().
  void apply(const Vector& in, Vector& out) const;
  Vector operator()(const Vector& in) const {
    Vector out;
    apply(in, out);
    return out;
  }

  /// The operator c * Op.
  LinearOperator scaled(double c) const;

 private:
  Index dim_ = 0;
  ApplyFn fn_;
};

}  // namespace exprb
