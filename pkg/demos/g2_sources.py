"""Heralded g2 behind a balanced splitter for three kinds of retrieved light.

An ideal single photon never gives a triple coincidence, a Poissonian
source gives g2 near 1, and the calibrated memory sits in between because
of stray-light background at the readout.
"""

from _common import CONFIGS
from magnonmem import experiments
from magnonmem.plan import load_plan


def main():
    for name in ("g2_ideal", "g2_coherent", "g2"):
        plan = load_plan(CONFIGS / f"{name}.toml")
        result = experiments.run(plan)
        est = result.estimate
        t = est.tally
        print(
            f"{name:<12} trials {plan.g2_trials:>9}  N1 {t.N1:>8}  N12 {t.N12:>6}  N13 {t.N13:>6}  "
            f"N123 {t.N123:>4}  g2 = {est.g2:.3f} ± {est.err:.3f}  (model {result.expected:.3f})"
        )


if __name__ == "__main__":
    main()
