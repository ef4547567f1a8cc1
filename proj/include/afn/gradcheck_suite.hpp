#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace afn {

struct GradCheckCaseResult {
    std::string name;
    double worst_rel_err = 0;
    bool pass = false;
};

// Central finite-difference verification of every registered op and layer
// (conv3d at several rates and paddings, relu, softmax, broadcast
// arithmetic, pad/crop, residual, batchnorm, attention net, autofocus with
// shared kernels, ASPP both fusions, soft dice) on small random problems.
// `seeds` independent random draws per case; worst relative error reported.
std::vector<GradCheckCaseResult> run_gradcheck_suite(int seeds, double tol,
                                                     std::ostream* out);

} // namespace afn
