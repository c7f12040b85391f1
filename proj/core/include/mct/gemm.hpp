#pragma once

namespace mct {

// C = beta*C + alpha * op(A) * op(B) on row-major buffers with explicit
// leading strides. op(A) is m x k, op(B) is k x n, C is m x n. Strides are
// those of the stored (untransposed) matrices. Single kernel behind all
// dense linear algebra in the model path.
template <typename T>
void gemm(bool trans_a, bool trans_b, long m, long n, long k, T alpha, const T* a, long lda,
          const T* b, long ldb, T beta, T* c, long ldc);

extern template void gemm<float>(bool, bool, long, long, long, float, const float*, long,
                                 const float*, long, float, float*, long);
extern template void gemm<double>(bool, bool, long, long, long, double, const double*, long,
                                  const double*, long, double, double*, long);

}  // namespace mct
