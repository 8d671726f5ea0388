#include "sola/numerics.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace sola {

namespace {

std::string shape_str(const Mat& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

}  // namespace

Mat::Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
    if (r < 0 || c < 0) {
        throw ShapeError("negative matrix dimension " + std::to_string(r) + "x" + std::to_string(c));
    }
}

Mat Mat::zeros(int r, int c) { return Mat(r, c); }

Mat Mat::identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    Mat m(r, c);
    int i = 0;
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != c) {
            throw ShapeError("ragged row in matrix literal");
        }
        int j = 0;
        for (double v : row) {
            m(i, j++) = v;
        }
        ++i;
    }
    return m;
}

bool Mat::bit_equal(const Mat& o) const {
    if (!same_shape(o)) {
        return false;
    }
    return std::memcmp(data.data(), o.data.data(), data.size() * sizeof(double)) == 0;
}

bool Mat::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

// splitmix64 (Steele, Lea, Flood 2014). Constants are part of the published
// recurrence and must not change: every seeded artifact depends on them.
uint64_t SeededRng::next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double SeededRng::next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::next_gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller. u1 is shifted into (0,1] so log(u1) is always finite.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = next_uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

uint64_t derive_seed(uint64_t root, uint64_t tag) {
    SeededRng r(root ^ (tag * 0x9E3779B97F4A7C15ULL));
    return r.next_u64();
}

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul shape mismatch: " + shape_str(a) + " * " + shape_str(b));
    }
    Mat c(a.rows, b.cols);
    // i,k,j order: cache-friendly, and per output entry the terms still
    // accumulate in increasing k, so results match the naive triple loop bit
    // for bit.
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) {
        throw ShapeError("matmul_nt shape mismatch: " + shape_str(a) + " * " + shape_str(b) + "^T");
    }
    Mat c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = b.row(j);
            double sum = 0.0;
            for (int k = 0; k < a.cols; ++k) {
                sum += arow[k] * brow[k];
            }
            crow[j] = sum;
        }
    }
    return c;
}

Mat transpose(const Mat& m) {
    Mat t(m.cols, m.rows);
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            t(j, i) = m(i, j);
        }
    }
    return t;
}

Mat gaussian_init(SeededRng& rng, int rows, int cols, double std) {
    if (!(std > 0.0)) {
        throw ParamError("gaussian_init std must be > 0, got " + std::to_string(std));
    }
    Mat m(rows, cols);
    for (double& v : m.data) {
        v = rng.next_gaussian() * std;
    }
    return m;
}

Mat finite_diff_grad(const std::function<double(const Mat&)>& f, const Mat& at, double eps) {
    if (!(eps > 0.0)) {
        throw ParamError("finite_diff_grad eps must be > 0");
    }
    Mat grad(at.rows, at.cols);
    Mat x = at;
    for (size_t idx = 0; idx < x.data.size(); ++idx) {
        const double orig = x.data[idx];
        x.data[idx] = orig + eps;
        const double fp = f(x);
        x.data[idx] = orig - eps;
        const double fm = f(x);
        x.data[idx] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_diff_grad: non-finite objective value");
        }
        grad.data[idx] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        return false;
    }
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<double> softmax(const std::vector<double>& v) {
    if (v.empty()) {
        throw ParamError("softmax of empty vector");
    }
    double mx = v[0];
    for (double x : v) {
        mx = std::max(mx, x);
    }
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (double& x : out) {
        x /= sum;
    }
    return out;
}

double cross_entropy(const std::vector<double>& logits, int label) {
    if (label < 0 || static_cast<size_t>(label) >= logits.size()) {
        throw IndexError("cross_entropy label " + std::to_string(label) + " out of range for " +
                         std::to_string(logits.size()) + " classes");
    }
    double mx = logits[0];
    for (double x : logits) {
        mx = std::max(mx, x);
    }
    double sum = 0.0;
    for (double x : logits) {
        sum += std::exp(x - mx);
    }
    return -(logits[label] - mx - std::log(sum));
}

}  // namespace sola
