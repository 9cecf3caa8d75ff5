// Solve the optimal alarm threshold for a mortality-like model with and
// without jumps, and print the value function on a coarse grid.
#include "qdetect/bvp.hpp"
#include "qdetect/model.hpp"

#include <cstdio>

using namespace qdetect;

int main() {
    for (double mu_inf : {0.2, 0.0}) {
        ModelParams p;
        p.sigma = 0.03;
        p.r = -3.0 * p.sigma;
        if (mu_inf > 0.0) p.pre_jump = JumpLaw::symmetric(0.5, 0.06, mu_inf);
        MeasureChange mc = solve_beta0(p);
        ThresholdSolution s = solve_threshold(p, mc);
        std::printf("mu_inf=%.2f beta0=%.6f gamma=%.6f A*=%.8f B*=%.6f blow-up b=%.6g\n", mu_inf, mc.beta0,
                    s.gamma, s.a_star, s.b_star, s.blowup_b);
        std::printf("  %8s %14s %14s\n", "x", "u(x)", "V*(x)");
        for (int k = 0; k <= 10; ++k) {
            double x = s.a_star * k / 10.0;
            std::printf("  %8.5f %14.8f %14.8f\n", x, s.u_at(x)[0], s.value(x));
        }
    }
    return 0;
}
