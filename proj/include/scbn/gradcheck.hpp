#pragma once

#include "scbn/graph.hpp"

#include <algorithm>
#include <functional>

namespace scbn {

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::int64_t n_checked = 0;
};

// Central finite differences against the analytic gradient of a scalar-valued
// function built on a fresh graph per evaluation. Double precision only.
// `fn` maps the leaf Var to the scalar output Var on the given graph.
inline GradCheckReport grad_check(
    const std::function<Var(Graph<double>&, Var)>& fn, const Tensor<double>& x,
    double step = 1e-4) {
    GradCheckReport rep;

    Graph<double> g;
    Var xin = g.leaf(x, true);
    Var out = fn(g, xin);
    g.backward(out);
    Tensor<double> analytic = g.grad(xin);

    Tensor<double> probe = x;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + step;
        Graph<double> gp;
        const double fp = gp.value(fn(gp, gp.leaf(probe, false))).data[0];
        probe.data[i] = orig - step;
        Graph<double> gm;
        const double fm = gm.value(fn(gm, gm.leaf(probe, false))).data[0];
        probe.data[i] = orig;

        const double numeric = (fp - fm) / (2.0 * step);
        const double abs_err = std::abs(analytic.data[i] - numeric);
        const double denom = std::max({std::abs(analytic.data[i]), std::abs(numeric), 1e-8});
        rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
        rep.max_rel_err = std::max(rep.max_rel_err, abs_err / denom);
        ++rep.n_checked;
    }
    return rep;
}

}  // namespace scbn
