#include "evr/nn/tensor.hpp"
#include "evr/nn/tape.hpp"

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace evr::nn {

namespace {

// The whole pipeline is single-threaded by design; a threaded BLAS would
// reorder reductions and break run-to-run determinism.
void pin_blas_threads() {
    static const bool done = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)done;
}

} // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
    pin_blas_threads();
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    pin_blas_threads();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

std::map<std::string, std::string> read_checkpoint_metadata(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "EVRCKPT1", 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    std::uint8_t width = 0;
    in.read(reinterpret_cast<char*>(&width), 1);
    if (!in) throw IoError("truncated checkpoint: " + path);
    std::uint32_t count = detail::get_u32(in);
    std::map<std::string, std::string> meta;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string key = detail::get_str(in);
        std::string value = detail::get_str(in);
        meta[key] = value;
    }
    return meta;
}

} // namespace evr::nn
