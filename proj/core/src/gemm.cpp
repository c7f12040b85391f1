#include "mct/gemm.hpp"

#include <Eigen/Core>

namespace mct {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, long m, long n, long k, T alpha, const T* a, long lda,
          const T* b, long ldb, T beta, T* c, long ldc) {
  MapC<T> ma(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  MapC<T> mb(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  Map<T> mc(c, m, n, Eigen::OuterStride<>(ldc));
  if (beta == T(0))
    mc.setZero();
  else if (beta != T(1))
    mc *= beta;
  if (trans_a) {
    if (trans_b)
      mc.noalias() += alpha * (ma.transpose() * mb.transpose());
    else
      mc.noalias() += alpha * (ma.transpose() * mb);
  } else {
    if (trans_b)
      mc.noalias() += alpha * (ma * mb.transpose());
    else
      mc.noalias() += alpha * (ma * mb);
  }
}

template void gemm<float>(bool, bool, long, long, long, float, const float*, long, const float*,
                          long, float, float*, long);
template void gemm<double>(bool, bool, long, long, long, double, const double*, long,
                           const double*, long, double, double*, long);

}  // namespace mct
