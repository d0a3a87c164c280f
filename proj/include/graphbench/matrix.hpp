#pragma once

// Small row-major dense matrix of doubles plus the handful of products the
// GNN layers need. Loops accumulate in ascending index order on purpose:
// results must be bit-identical between runs, so no reordering, blocking or
// parallel reductions here. Sizes in this project are a few thousand rows at
// most, plain loops are fast enough.

#include <cassert>
#include <cstddef>
#include <vector>

namespace graphbench {

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// C = A * B
inline Matrix matmul(const Matrix& A, const Matrix& B) {
  assert(A.cols == B.rows);
  Matrix C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    const double* ai = A.row(i);
    double* ci = C.row(i);
    for (int k = 0; k < A.cols; ++k) {
      double v = ai[k];
      if (v == 0.0) continue;
      const double* bk = B.row(k);
      for (int j = 0; j < B.cols; ++j) ci[j] += v * bk[j];
    }
  }
  return C;
}

// C = A^T * B
inline Matrix matmul_tn(const Matrix& A, const Matrix& B) {
  assert(A.rows == B.rows);
  Matrix C(A.cols, B.cols);
  for (int k = 0; k < A.rows; ++k) {
    const double* ak = A.row(k);
    const double* bk = B.row(k);
    for (int i = 0; i < A.cols; ++i) {
      double v = ak[i];
      if (v == 0.0) continue;
      double* ci = C.row(i);
      for (int j = 0; j < B.cols; ++j) ci[j] += v * bk[j];
    }
  }
  return C;
}

// C = A * B^T
inline Matrix matmul_nt(const Matrix& A, const Matrix& B) {
  assert(A.cols == B.cols);
  Matrix C(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i) {
    const double* ai = A.row(i);
    double* ci = C.row(i);
    for (int j = 0; j < B.rows; ++j) {
      const double* bj = B.row(j);
      double s = 0.0;
      for (int k = 0; k < A.cols; ++k) s += ai[k] * bj[k];
      ci[j] = s;
    }
  }
  return C;
}

inline void add_inplace(Matrix& A, const Matrix& B, double scale = 1.0) {
  assert(A.same_shape(B));
  for (std::size_t i = 0; i < A.a.size(); ++i) A.a[i] += scale * B.a[i];
}

inline void scale_inplace(Matrix& A, double s) {
  for (double& v : A.a) v *= s;
}

inline Matrix hadamard(const Matrix& A, const Matrix& B) {
  assert(A.same_shape(B));
  Matrix C(A.rows, A.cols);
  for (std::size_t i = 0; i < A.a.size(); ++i) C.a[i] = A.a[i] * B.a[i];
  return C;
}

}  // namespace graphbench
