#pragma once

// Accountability rescoring: auxiliary judgment factors may raise a candidate's
// ranking score when they agree with its pseudo-label, but they never gate the
// consistency filter, never change the label, and never lower a score.

#include <cstddef>
#include <vector>

#include <difac/error.hpp>
#include <difac/matrix.hpp>

namespace difac {

// Predictions of the auxiliary factors: one class and one confidence (its max
// class probability, in (0,1]) per node per factor.
struct AuxFactorOutput {
    std::size_t n = 0;       // nodes
    std::size_t k_aux = 0;   // auxiliary factor count
    Dense<int> pred;         // n x k_aux predicted classes
    Dense<double> conf;      // n x k_aux confidences

    void validate() const {
        if (pred.rows != n || conf.rows != n || pred.cols != k_aux || conf.cols != k_aux)
            throw DimError("auxiliary factor output shape");
    }
};

// s_tilde = s + lambda_acc * sum over agreeing factors of their confidence.
// Disagreeing factors contribute exactly zero.
inline double accountability_score(double s, int y_hat, const AuxFactorOutput& aux,
                                   std::size_t node, double lambda_acc) {
    double bonus = 0.0;
    for (std::size_t k = 0; k < aux.k_aux; ++k)
        if (aux.pred(node, k) == y_hat) bonus += aux.conf(node, k);
    return s + lambda_acc * bonus;
}

} // namespace difac
