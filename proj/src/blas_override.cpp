// Eigen-backed replacements for the BLAS/LAPACK routines CHOLMOD calls. Some OpenBLAS 0.3.x builds
// pick kernels for recent x86 cores that return wrong products (dgemm), corrupt the heap (dsyrk,
// dtrsm) or wrong factors (dpotrf). Definitions in the linking object take precedence over the
// shared library. The supernodal probe in the linear solver still guards against failures.

#include <Eigen/Dense>

namespace {

using Stride = Eigen::OuterStride<>;
using MatMap = Eigen::Map<Eigen::MatrixXd, 0, Stride>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd, 0, Stride>;

bool is(const char* c, char x) { return (*c | 0x20) == (x | 0x20); }

template <class Tri>
void trsm_apply(bool left, const Tri& tri, MatMap& B) {
    if (left)
        tri.solveInPlace(B);
    else
        tri.template solveInPlace<Eigen::OnTheRight>(B);
}

template <int Lower, int Upper>
void trsm_dispatch(bool left, bool lower, bool trans, const ConstMatMap& A, MatMap& B) {
    // op(A) lower <=> (A lower and not transposed) or (A upper and transposed)
    if (!trans) {
        if (lower) trsm_apply(left, A.triangularView<Lower>(), B);
        else trsm_apply(left, A.triangularView<Upper>(), B);
    } else {
        if (lower) trsm_apply(left, A.transpose().triangularView<Upper>(), B);
        else trsm_apply(left, A.transpose().triangularView<Lower>(), B);
    }
}

// BLAS vector addressing: element i lives at x[i * inc], or x[(n - 1 - i) * |inc|] for inc < 0.
Eigen::VectorXd gather(const double* x, int n, int inc) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = x[inc >= 0 ? i * inc : (n - 1 - i) * -inc];
    return v;
}

void scatter(const Eigen::VectorXd& v, double* x, int inc) {
    const int n = static_cast<int>(v.size());
    for (int i = 0; i < n; ++i) x[inc >= 0 ? i * inc : (n - 1 - i) * -inc] = v[i];
}

}  // namespace

namespace odonto::fem {
void blas_override_anchor() {}
}  // namespace odonto::fem

extern "C" {

__attribute__((visibility("default"), used)) void dsyrk_(const char* uplo, const char* trans, const int* n,
                                                          const int* k, const double* alpha, const double* a,
                                                          const int* lda, const double* beta, double* c,
                                                          const int* ldc) {
    if (*n <= 0) return;
    MatMap C(c, *n, *n, Stride(*ldc));
    const bool lower = is(uplo, 'L');
    if (*beta == 0.0) {
        if (lower) C.triangularView<Eigen::Lower>().setZero();
        else C.triangularView<Eigen::Upper>().setZero();
    } else if (*beta != 1.0) {
        if (lower) C.triangularView<Eigen::Lower>() *= *beta;
        else C.triangularView<Eigen::Upper>() *= *beta;
    }
    if (*k <= 0 || *alpha == 0.0) return;
    const bool t = !is(trans, 'N');
    const ConstMatMap A(a, t ? *k : *n, t ? *n : *k, Stride(*lda));
    if (lower) {
        if (t) C.selfadjointView<Eigen::Lower>().rankUpdate(A.transpose(), *alpha);
        else C.selfadjointView<Eigen::Lower>().rankUpdate(A, *alpha);
    } else {
        if (t) C.selfadjointView<Eigen::Upper>().rankUpdate(A.transpose(), *alpha);
        else C.selfadjointView<Eigen::Upper>().rankUpdate(A, *alpha);
    }
}

__attribute__((visibility("default"), used)) void dtrsm_(const char* side, const char* uplo, const char* transa,
                                                          const char* diag, const int* m, const int* n,
                                                          const double* alpha, const double* a, const int* lda,
                                                          double* b, const int* ldb) {
    if (*m <= 0 || *n <= 0) return;
    MatMap B(b, *m, *n, Stride(*ldb));
    if (*alpha == 0.0) {
        B.setZero();
        return;
    }
    if (*alpha != 1.0) B *= *alpha;
    const bool left = is(side, 'L');
    const int na = left ? *m : *n;
    const ConstMatMap A(a, na, na, Stride(*lda));
    const bool lower = is(uplo, 'L'), trans = !is(transa, 'N');
    if (is(diag, 'U'))
        trsm_dispatch<Eigen::UnitLower, Eigen::UnitUpper>(left, lower, trans, A, B);
    else
        trsm_dispatch<Eigen::Lower, Eigen::Upper>(left, lower, trans, A, B);
}

__attribute__((visibility("default"), used)) void dpotrf_(const char* uplo, const int* n, double* a, const int* lda,
                                                           int* info) {
    *info = 0;
    if (*n <= 0) return;
    MatMap A(a, *n, *n, Stride(*lda));
    Eigen::Index bad;
    if (is(uplo, 'L'))
        bad = Eigen::internal::llt_inplace<double, Eigen::Lower>::blocked(A);
    else
        bad = Eigen::internal::llt_inplace<double, Eigen::Upper>::blocked(A);
    if (bad >= 0) *info = static_cast<int>(bad) + 1;
}

__attribute__((visibility("default"), used)) void dgemm_(const char* transa, const char* transb, const int* m,
                                                          const int* n, const int* k, const double* alpha,
                                                          const double* a, const int* lda, const double* b,
                                                          const int* ldb, const double* beta, double* c,
                                                          const int* ldc) {
    if (*m <= 0 || *n <= 0) return;
    MatMap C(c, *m, *n, Stride(*ldc));
    if (*beta == 0.0) C.setZero();
    else if (*beta != 1.0) C *= *beta;
    if (*k <= 0 || *alpha == 0.0) return;
    const bool ta = !is(transa, 'N'), tb = !is(transb, 'N');
    const ConstMatMap A(a, ta ? *k : *m, ta ? *m : *k, Stride(*lda));
    const ConstMatMap B(b, tb ? *n : *k, tb ? *k : *n, Stride(*ldb));
    if (!ta && !tb) C.noalias() += *alpha * A * B;
    else if (!ta) C.noalias() += *alpha * A * B.transpose();
    else if (!tb) C.noalias() += *alpha * A.transpose() * B;
    else C.noalias() += *alpha * A.transpose() * B.transpose();
}

__attribute__((visibility("default"), used)) void dgemv_(const char* trans, const int* m, const int* n,
                                                          const double* alpha, const double* a, const int* lda,
                                                          const double* x, const int* incx, const double* beta,
                                                          double* y, const int* incy) {
    if (*m <= 0 || *n <= 0) return;
    const bool t = !is(trans, 'N');
    const int ny = t ? *n : *m, nx = t ? *m : *n;
    const Eigen::VectorXd X = gather(x, nx, *incx);
    Eigen::VectorXd Y = gather(y, ny, *incy);
    const ConstMatMap A(a, *m, *n, Stride(*lda));
    if (*beta == 0.0) Y.setZero();
    else if (*beta != 1.0) Y *= *beta;
    if (*alpha != 0.0) {
        if (t) Y.noalias() += *alpha * A.transpose() * X;
        else Y.noalias() += *alpha * A * X;
    }
    scatter(Y, y, *incy);
}

__attribute__((visibility("default"), used)) void dtrsv_(const char* uplo, const char* trans, const char* diag,
                                                          const int* n, const double* a, const int* lda, double* x,
                                                          const int* incx) {
    if (*n <= 0) return;
    Eigen::VectorXd v = gather(x, *n, *incx);
    MatMap B(v.data(), *n, 1, Stride(*n));
    const ConstMatMap A(a, *n, *n, Stride(*lda));
    const bool lower = is(uplo, 'L'), t = !is(trans, 'N');
    if (is(diag, 'U'))
        trsm_dispatch<Eigen::UnitLower, Eigen::UnitUpper>(true, lower, t, A, B);
    else
        trsm_dispatch<Eigen::Lower, Eigen::Upper>(true, lower, t, A, B);
    scatter(v, x, *incx);
}

}  // extern "C"
