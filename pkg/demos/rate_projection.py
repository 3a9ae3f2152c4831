"""Heralded storage probability and rate for the current and upgraded setups."""

from _common import CONFIGS
from magnonmem.plan import load_plan
from magnonmem.stats import success_rate_projection


def main():
    for name in ("current_rate", "upgrade_rate"):
        plan = load_plan(CONFIGS / f"{name}.toml")
        n = plan.noise
        proj = success_rate_projection(n, plan.trials_per_second)
        print(
            f"{name:<13} alpha_perp {n.alpha_perp:<5} eta {n.eta:<6} q {n.q:<4} "
            f"-> p = {proj.probability:.3g}, {proj.rate:.3g} per second at {plan.trials_per_second:.0f} trials/s"
        )


if __name__ == "__main__":
    main()
