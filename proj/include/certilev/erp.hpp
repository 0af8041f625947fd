#pragma once

#include <string>

#include "certilev/mat.hpp"

namespace certilev {

// Sequence of real vectors, one per row. The empty sequence has zero rows.
using VecSequence = Mat;

// Vector norm order together with its Holder conjugate (1<->inf, 2<->2).
enum class NormOrder { p1, p2, pinf };

NormOrder holder_conjugate(NormOrder p);
std::string norm_name(NormOrder p);
NormOrder norm_from_name(const std::string& name);

double vec_norm(const double* x, int d, NormOrder p);
double vec_norm(const Vec& x, NormOrder p);
double vec_diff_norm(const double* x, const double* y, int d, NormOrder p);

// Edit distance with real penalty: gaps cost the p-norm of the skipped row,
// matches cost the p-norm of the row difference. Reduces to the Levenshtein
// distance on one-hot rows at p = inf. Invariant to zero rows, so it is a
// subdistance rather than a metric. O(mn) dynamic program.
double erp_distance(const VecSequence& a, const VecSequence& b, NormOrder p);

// Independent reference: minimum over all zero-padding placements of both
// sequences to length m+n of the summed row-difference norms. Exponential;
// restricted to m+n <= 10 and used as a test oracle.
double erp_padding_oracle(const VecSequence& a, const VecSequence& b, NormOrder p);

} // namespace certilev
