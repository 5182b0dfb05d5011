#include "optimize.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <vector>

namespace stfuse::detail {

namespace {

struct Counter {
    const std::function<double(const Eigen::VectorXd&)>& f;
    int evals = 0;
    int budget;
    double operator()(const Eigen::VectorXd& x) {
        ++evals;
        return f(x);
    }
    bool exhausted() const { return evals >= budget; }
};

// one Nelder-Mead run; simplex seeded at x with per-coordinate step
void nelder_mead(Counter& f, Eigen::VectorXd& x, double& fx, double step, double ftol) {
    const int d = static_cast<int>(x.size());
    std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(d) + 1, x);
    std::vector<double> fv(static_cast<std::size_t>(d) + 1);
    fv[0] = fx;
    for (int i = 0; i < d; ++i) {
        pts[static_cast<std::size_t>(i) + 1][i] += step;
        fv[static_cast<std::size_t>(i) + 1] = f(pts[static_cast<std::size_t>(i) + 1]);
        if (f.exhausted()) break;
    }
    std::vector<int> order(static_cast<std::size_t>(d) + 1);

    while (!f.exhausted()) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return fv[static_cast<std::size_t>(a)] < fv[static_cast<std::size_t>(b)]; });
        const int best = order[0], worst = order.back(), second = order[order.size() - 2];
        if (fv[static_cast<std::size_t>(worst)] - fv[static_cast<std::size_t>(best)] < ftol) break;

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
        for (int i = 0; i <= d; ++i)
            if (i != worst) centroid += pts[static_cast<std::size_t>(i)];
        centroid /= d;

        auto& pw = pts[static_cast<std::size_t>(worst)];
        auto& fw = fv[static_cast<std::size_t>(worst)];

        Eigen::VectorXd xr = centroid + (centroid - pw);
        const double fr = f(xr);
        if (fr < fv[static_cast<std::size_t>(best)]) {
            Eigen::VectorXd xe = centroid + 2.0 * (centroid - pw);
            const double fe = f(xe);
            if (fe < fr) {
                pw = xe; fw = fe;
            } else {
                pw = xr; fw = fr;
            }
        } else if (fr < fv[static_cast<std::size_t>(second)]) {
            pw = xr; fw = fr;
        } else {
            Eigen::VectorXd xc = centroid + 0.5 * (pw - centroid);
            const double fc = f(xc);
            if (fc < fw) {
                pw = xc; fw = fc;
            } else {
                // shrink toward the best point
                for (int i = 0; i <= d; ++i) {
                    if (i == best) continue;
                    pts[static_cast<std::size_t>(i)] =
                        pts[static_cast<std::size_t>(best)] +
                        0.5 * (pts[static_cast<std::size_t>(i)] - pts[static_cast<std::size_t>(best)]);
                    fv[static_cast<std::size_t>(i)] = f(pts[static_cast<std::size_t>(i)]);
                    if (f.exhausted()) break;
                }
            }
        }
    }
    for (std::size_t i = 0; i < fv.size(); ++i) {
        if (fv[i] < fx) {
            fx = fv[i];
            x = pts[i];
        }
    }
}

// golden-section refinement of coordinate i over [x_i - s, x_i + s]
void golden_coordinate(Counter& f, Eigen::VectorXd& x, double& fx, int i, double s) {
    constexpr double inv_phi = 0.6180339887498949;
    double a = x[i] - s, b = x[i] + s;
    Eigen::VectorXd xt = x;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    xt[i] = c;
    double fc = f(xt);
    xt[i] = d;
    double fd = f(xt);
    for (int it = 0; it < 24 && !f.exhausted(); ++it) {
        if (fc < fd) {
            b = d; d = c; fd = fc;
            c = b - inv_phi * (b - a);
            xt[i] = c;
            fc = f(xt);
        } else {
            a = c; c = d; fc = fd;
            d = a + inv_phi * (b - a);
            xt[i] = d;
            fd = f(xt);
        }
    }
    const double xm = fc < fd ? c : d;
    const double fm = std::min(fc, fd);
    if (fm < fx) {
        fx = fm;
        x[i] = xm;
    }
}

}  // namespace

OptimResult minimize(const std::function<double(const Eigen::VectorXd&)>& fn,
                     const Eigen::VectorXd& x0, double step0, int max_evals,
                     double ftol) {
    Counter f{fn, 0, max_evals};
    OptimResult r;
    r.x = x0;
    r.f = f(r.x);
    double step = step0;
    while (!f.exhausted()) {
        const double before = r.f;
        nelder_mead(f, r.x, r.f, step, ftol);
        for (int i = 0; i < r.x.size() && !f.exhausted(); ++i)
            golden_coordinate(f, r.x, r.f, i, step);
        if (before - r.f < ftol) {
            r.converged = true;
            break;
        }
        step *= 0.4;
    }
    r.evals = f.evals;
    return r;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::future<void>> workers;
    workers.reserve(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
        workers.push_back(std::async(std::launch::async, [&]() {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        }));
    }
    for (auto& w : workers) w.get();
}

}  // namespace stfuse::detail
