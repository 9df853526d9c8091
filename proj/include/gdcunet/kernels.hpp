// SPDX-License-Identifier: Apache-2.0
// Dense row-major kernels shared by the differentiable ops. All products
// accumulate into C and run single-threaded through Eigen's blocked GEMM.
#pragma once

#include <Eigen/Core>
#include <cstddef>

namespace gdc::kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;

inline Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

// Eigen evaluates products this small coefficient by coefficient, with a
// scalar head whose length follows the address of C; plain loops instead.
inline bool tiny(std::size_t M, std::size_t N, std::size_t K) { return M + N + K < 20; }

/// C[MxN] += sum_k A(i, k) * B(k, j), element access through strides.
template <class T>
void gemm_loops(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t ai,
                std::size_t ak, const T* B, std::size_t bk, std::size_t bj, T* C) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < K; ++k) acc += A[i * ai + k * ak] * B[k * bk + j * bj];
      C[i * N + j] += acc;
    }
}

/// C[MxN] += A[MxK] * B[KxN]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  if (M == 0 || N == 0 || K == 0) return;
  if (tiny(M, N, K)) return gemm_loops(M, N, K, A, K, 1, B, N, 1, C);
  Map<T>(C, ix(M), ix(N)).noalias() += MapC<T>(A, ix(M), ix(K)) * MapC<T>(B, ix(K), ix(N));
}

/// C[KxN] += A[MxK]^T * B[MxN]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  if (M == 0 || N == 0 || K == 0) return;
  if (tiny(M, N, K)) return gemm_loops(K, N, M, A, 1, K, B, N, 1, C);
  Map<T>(C, ix(K), ix(N)).noalias() +=
      MapC<T>(A, ix(M), ix(K)).transpose() * MapC<T>(B, ix(M), ix(N));
}

/// C[MxN] += A[MxK] * B[NxK]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  if (M == 0 || N == 0 || K == 0) return;
  if (tiny(M, N, K)) return gemm_loops(M, N, K, A, K, 1, B, 1, K, C);
  Map<T>(C, ix(M), ix(N)).noalias() +=
      MapC<T>(A, ix(M), ix(K)) * MapC<T>(B, ix(N), ix(K)).transpose();
}

}  // namespace gdc::kernels
