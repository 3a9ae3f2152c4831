"""Fidelity and basis projections as theta runs over [0, pi] (R, H, L, V, R).

With phi fixed, the six projections vary as A cos(2 theta + delta) + B
while the fidelity stays flat.
"""

from _common import CONFIGS
from magnonmem import experiments
from magnonmem.plan import load_plan


def main():
    plan = load_plan(CONFIGS / "theta_sweep.toml")
    result = experiments.run(plan)
    print(f"{'theta':>7}{'F':>9}{'sigma':>8}")
    for s in result.states:
        print(f"{s.state.theta:>7.3f}{s.report.fidelity:>9.4f}{s.report.fidelity_err:>8.4f}")
    spread, sigma = result.fidelity_spread
    print(f"\nmax - min fidelity {spread:.4f}, combined sigma {sigma:.4f} ({spread / sigma:.1f} sigma)\n")
    print(f"{'projection':<12}{'A':>8}{'delta':>8}{'B':>8}{'rms/stat':>10}")
    for c in result.fit.curves:
        print(
            f"{c.basis.name + ' ' + c.port:<12}{c.amplitude:>8.3f}{c.phase:>8.3f}{c.offset:>8.3f}"
            f"{c.residual_rms / c.stat_error_rms:>10.2f}"
        )


if __name__ == "__main__":
    main()
