#pragma once

// Column-buffer matrix products shared by the convolution kernels. Eigen stays
// private to the library sources.

// Small products would otherwise take Eigen's coefficient-based path, whose
// vectorized inner sums start at the first aligned element; results would then
// depend on where the buffers happen to be allocated. The blocked kernel packs
// its operands first and accumulates in a fixed order.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 1
#include <Eigen/Core>

namespace drnet::detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

// out[Co,P] = W[Co,CK] * cols[CK,P] (+ bias)
inline void gemm_forward(const double* weight, const double* cols, const double* bias, double* out,
                         Eigen::Index co, Eigen::Index ck, Eigen::Index p) {
  ConstRowMap w(weight, co, ck);
  ConstRowMap c(cols, ck, p);
  RowMap y(out, co, p);
  y.noalias() = w * c;
  if (bias) {
    Eigen::Map<const Eigen::VectorXd> b(bias, co);
    y.colwise() += b;
  }
}

// Accumulates dW += dY * cols^T, db += rowsum(dY) and writes dcols = W^T * dY.
// Null targets are skipped.
inline void gemm_backward(const double* weight, const double* cols, const double* dy,
                          double* dweight, double* dbias, double* dcols, Eigen::Index co,
                          Eigen::Index ck, Eigen::Index p) {
  ConstRowMap g(dy, co, p);
  if (dweight) {
    RowMap dw(dweight, co, ck);
    dw.noalias() += g * ConstRowMap(cols, ck, p).transpose();
  }
  if (dbias) {
    // Plain loop: Eigen's vectorized reductions split by buffer alignment,
    // which would make the result depend on the allocation address.
    for (Eigen::Index o = 0; o < co; ++o) {
      const double* row = dy + o * p;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < p; ++i) acc += row[i];
      dbias[o] += acc;
    }
  }
  if (dcols) {
    RowMap dc(dcols, ck, p);
    dc.noalias() = ConstRowMap(weight, co, ck).transpose() * g;
  }
}

}  // namespace drnet::detail
