#pragma once

#include <cstddef>

namespace udet {

/// Row-major C = alpha * op(A) * op(B) + beta * C, backed by BLAS.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

/// Caps BLAS worker threads; 0 leaves the library default.
void set_num_threads(int threads);

/// Applies UDET_THREADS from the environment if set.
void configure_threads_from_env();

}  // namespace udet
