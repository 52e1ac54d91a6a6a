#pragma once

// OmegaMatrix: a row-stochastic friendship-probability matrix over one
// classroom.  Row i gives student i's probability of naming each classmate
// as a friend; self-nomination is structurally impossible (zero diagonal).

#include "peerlab/common.hpp"

#include <cmath>
#include <string>

namespace peerlab {

struct OmegaMatrix {
  int class_id = -1;
  Matrix p;  // N x N, rows sum to 1, zero diagonal

  int n() const { return static_cast<int>(p.rows()); }

  // Throws validation_error if the matrix is not a valid friendship kernel.
  void validate(double tol = 1e-9) const {
    if (p.rows() != p.cols() || p.rows() < 2)
      throw validation_error("omega: expected square matrix with N >= 2, got " +
                             std::to_string(p.rows()) + "x" +
                             std::to_string(p.cols()));
    for (int i = 0; i < p.rows(); ++i) {
      if (p(i, i) != 0.0)
        throw validation_error("omega: nonzero diagonal at row " +
                               std::to_string(i));
      double rowsum = 0.0;
      for (int j = 0; j < p.cols(); ++j) {
        const double v = p(i, j);
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
          throw validation_error("omega: entry (" + std::to_string(i) + "," +
                                 std::to_string(j) + ") outside [0,1]");
        rowsum += v;
      }
      if (std::abs(rowsum - 1.0) > tol)
        throw validation_error("omega: row " + std::to_string(i) +
                               " sums to " + format_double(rowsum));
    }
  }
};

}  // namespace peerlab
