#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <vector>

#include "sola/error.hpp"

namespace sola {

/// Dense row-major matrix of 64-bit floats. The one value type everything
/// else in the library is built on.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // rows * cols, row-major

    Mat() = default;
    Mat(int r, int c);  // zero-filled

    static Mat zeros(int r, int c);
    static Mat identity(int n);
    static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);

    double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    double* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

    size_t size() const { return data.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    /// Bitwise equality (distinguishes -0.0 from +0.0; NaN never occurs here).
    bool bit_equal(const Mat& o) const;

    bool all_finite() const;
};

/// Deterministic 64-bit PRNG (splitmix64). Identical seeds produce identical
/// integer streams on every platform; see README for the exact recurrence.
class SeededRng {
  public:
    explicit SeededRng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();
    /// Uniform in [0, 1), 53-bit resolution.
    double next_uniform();
    /// Standard normal via Box-Muller; the pair's second value is cached.
    double next_gaussian();

  private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// One scrambling step used to derive independent child seeds from a root
/// seed plus a stream tag. Documented in the README alongside the PRNG.
uint64_t derive_seed(uint64_t root, uint64_t tag);

/// Standard matrix product with a fixed accumulation order: for each output
/// entry, terms are added in increasing k. Throws ShapeError naming both
/// shapes on a dimension mismatch.
Mat matmul(const Mat& a, const Mat& b);

/// a * b^T without materializing the transpose; same per-entry accumulation
/// order as matmul(a, transpose(b)), hence bit-identical to it.
Mat matmul_nt(const Mat& a, const Mat& b);

Mat transpose(const Mat& m);

/// Entries i.i.d. N(0, std^2) drawn row-major from rng. std must be > 0.
Mat gaussian_init(SeededRng& rng, int rows, int cols, double std);

/// Central-difference gradient of a scalar function of a matrix:
/// g(i,j) = (f(x + eps*E_ij) - f(x - eps*E_ij)) / (2*eps).
Mat finite_diff_grad(const std::function<double(const Mat&)>& f, const Mat& at, double eps);

/// Bitwise equality of two double vectors (memcmp semantics).
bool bits_equal(const std::vector<double>& a, const std::vector<double>& b);

/// Max-subtracted softmax; output sums to 1 within 1e-12.
std::vector<double> softmax(const std::vector<double>& v);

/// -log softmax(logits)[label], computed in stable log-sum-exp form.
double cross_entropy(const std::vector<double>& logits, int label);

}  // namespace sola
