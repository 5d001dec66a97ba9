#include "gnnood/stats.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "gnnood/errors.hpp"

namespace gnnood {

double accuracy(const DenseMatrix& logits, const std::vector<int>& labels,
                const std::vector<index_t>& mask) {
    if (mask.empty()) {
        throw ProtocolError("accuracy: empty mask");
    }
    const index_t c = logits.cols();
    index_t hits = 0;
    for (index_t r : mask) {
        if (r < 0 || r >= logits.rows()) {
            throw ProtocolError("accuracy: masked row " + std::to_string(r) + " out of range");
        }
        const double* z = logits.data() + r * c;
        index_t best = 0;
        for (index_t j = 1; j < c; ++j) {
            if (z[j] > z[best]) {
                best = j;
            }
        }
        if (best == labels[static_cast<std::size_t>(r)]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(mask.size());
}

double gap(double iid_test, double ood_test) {
    return iid_test - ood_test;
}

double mean(const std::vector<double>& xs) {
    double acc = 0.0;
    for (double x : xs) {
        acc += x;
    }
    return xs.empty() ? 0.0 : acc / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) {
        return 0.0;
    }
    const double m = mean(xs);
    double acc = 0.0;
    for (double x : xs) {
        acc += (x - m) * (x - m);
    }
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ProtocolError("paired_t_test: sample lengths differ (" + std::to_string(a.size()) +
                            " vs " + std::to_string(b.size()) + ")");
    }
    const std::size_t n = a.size();
    if (n < 2) {
        throw ProtocolError("paired_t_test: need at least 2 pairs");
    }
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = a[i] - b[i];
    }
    const double md = mean(d);
    const double sd = sample_std(d);
    TTestResult res;
    res.df = static_cast<int>(n) - 1;
    if (sd == 0.0) {
        if (md == 0.0) {
            res.t = 0.0;
            res.p = 1.0;
        } else {
            res.t = md > 0.0 ? std::numeric_limits<double>::max()
                             : -std::numeric_limits<double>::max();
            res.p = 0.0;
        }
        return res;
    }
    res.t = md / (sd / std::sqrt(static_cast<double>(n)));
    // Two-tailed p: I_x(df/2, 1/2) with x = df / (t^2 + df).
    const double x = static_cast<double>(res.df) / (res.t * res.t + static_cast<double>(res.df));
    res.p = regularized_incomplete_beta(x, static_cast<double>(res.df) / 2.0, 0.5);
    return res;
}

Significance significance_color(double t, double p) {
    if (p < 0.05 && t > 0.0) {
        return Significance::Better;
    }
    if (p < 0.05 && t < 0.0) {
        return Significance::Worse;
    }
    return Significance::NotSignificant;
}

const char* to_string(Significance s) {
    switch (s) {
    case Significance::Better:
        return "better";
    case Significance::Worse:
        return "worse";
    default:
        return "not_significant";
    }
}

namespace {

double log_beta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Continued fraction for the incomplete beta (modified Lentz).
double beta_continued_fraction(double x, double a, double b) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    double c = 1.0;
    double d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::fabs(d) < tiny) {
        d = tiny;
    }
    d = 1.0 / d;
    double result = d;
    for (int m = 1; m <= 400; ++m) {
        const double dm = static_cast<double>(m);
        // even term
        double numer = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
        d = 1.0 + numer * d;
        if (std::fabs(d) < tiny) {
            d = tiny;
        }
        c = 1.0 + numer / c;
        if (std::fabs(c) < tiny) {
            c = tiny;
        }
        d = 1.0 / d;
        result *= d * c;
        // odd term
        numer = -(a + dm) * (a + b + dm) * x / ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
        d = 1.0 + numer * d;
        if (std::fabs(d) < tiny) {
            d = tiny;
        }
        c = 1.0 + numer / c;
        if (std::fabs(c) < tiny) {
            c = tiny;
        }
        d = 1.0 / d;
        const double delta = d * c;
        result *= delta;
        if (std::fabs(delta - 1.0) < eps) {
            break;
        }
    }
    return result;
}

} // namespace

double regularized_incomplete_beta(double x, double a, double b) {
    if (!(x >= 0.0 && x <= 1.0) || !(a > 0.0) || !(b > 0.0)) {
        throw NumericalError("regularized_incomplete_beta: invalid arguments");
    }
    if (x == 0.0) {
        return 0.0;
    }
    if (x == 1.0) {
        return 1.0;
    }
    const double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - log_beta(a, b));
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_continued_fraction(x, a, b) / a;
    }
    return 1.0 - std::exp(b * std::log(1.0 - x) + a * std::log(x) - log_beta(b, a)) *
                     beta_continued_fraction(1.0 - x, b, a) / b;
}

double student_t_cdf(double t, int df) {
    if (df < 1) {
        throw ProtocolError("student_t_cdf: df must be >= 1");
    }
    const double v = static_cast<double>(df);
    const double x = v / (t * t + v);
    const double half_tail = 0.5 * regularized_incomplete_beta(x, v / 2.0, 0.5);
    return t >= 0.0 ? 1.0 - half_tail : half_tail;
}

} // namespace gnnood
