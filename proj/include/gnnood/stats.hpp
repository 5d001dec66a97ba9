#pragma once

#include <vector>

#include "gnnood/matrix.hpp"

namespace gnnood {

// Fraction of masked nodes whose argmax logit equals the label; argmax ties
// break toward the lowest class index.
double accuracy(const DenseMatrix& logits, const std::vector<int>& labels,
                const std::vector<index_t>& mask);

// IID/OOD generalization gap: iid_test - ood_test. May be negative.
double gap(double iid_test, double ood_test);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
};

// Paired two-tailed t-test on per-seed values (paired by position). With zero
// sample deviation of the differences the result degenerates to (0, 1) for a
// zero mean and (sign * DBL_MAX, 0) otherwise.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

enum class Significance { Better, Worse, NotSignificant };

// Table-caption rule: better iff p < 0.05 and t > 0, worse iff p < 0.05 and
// t < 0, otherwise not significant.
Significance significance_color(double t, double p);
const char* to_string(Significance s);

// Regularized incomplete beta I_x(a, b) via the modified Lentz continued
// fraction.
double regularized_incomplete_beta(double x, double a, double b);

// CDF of Student's t distribution with df degrees of freedom.
double student_t_cdf(double t, int df);

double mean(const std::vector<double>& xs);
double sample_std(const std::vector<double>& xs); // n-1 normalization, 0 for n < 2

} // namespace gnnood
