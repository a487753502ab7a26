#include <cmath>
#include <fstream>
#include <stdexcept>

#include "hemis/layers.hpp"

namespace hemis {

void GradCheckReport::write_tsv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("grad_check: cannot open " + path + " for writing");
    }
    out << "param\tanalytic\tnumeric\trel_error\n";
    for (const auto& r : rows) {
        out << r.name << '\t' << r.analytic << '\t' << r.numeric << '\t' << r.rel_error << '\n';
    }
    out << "# max_rel_error\t" << max_rel_error << '\n';
    if (!out) {
        throw std::runtime_error("grad_check: write failed for " + path);
    }
}

GradCheckReport grad_check(const std::function<double()>& loss_fn, const NamedParams& params,
                           const std::vector<const Tensor<double>*>& analytic_grads, double eps) {
    if (params.size() != analytic_grads.size()) {
        throw std::invalid_argument("grad_check: parameter/gradient count mismatch");
    }
    if (!(eps > 0.0)) {
        throw std::invalid_argument("grad_check: eps must be positive");
    }
    GradCheckReport report;
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor<double>& p = *params[t].second;
        const Tensor<double>& g = *analytic_grads[t];
        if (!same_shape(p, g)) {
            throw std::invalid_argument("grad_check: gradient shape mismatch for " +
                                        params[t].first);
        }
        double* pp = p.data();
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double saved = pp[i];
            pp[i] = saved + eps;
            const double up = loss_fn();
            pp[i] = saved - eps;
            const double down = loss_fn();
            pp[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = g.data()[i];
            const double denom =
                std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
            GradCheckRow row;
            row.name = params[t].first + "[" + std::to_string(i) + "]";
            row.analytic = analytic;
            row.numeric = numeric;
            row.rel_error = std::abs(analytic - numeric) / denom;
            report.max_rel_error = std::max(report.max_rel_error, row.rel_error);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

}  // namespace hemis
