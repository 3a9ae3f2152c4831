"""End-to-end experiments: simulate, reconstruct, score.

Each runner takes an :class:`~magnonmem.plan.ExperimentPlan` and returns a
result object with ``rows()`` (CSV table) and ``to_dict()`` (JSON).
Substreams are allocated per input state so that results do not depend on
how many states a plan contains before or after a given one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import entanglement, stats
from .memory import ClickTable, expected_fidelity, expected_g2, simulate
from .plan import ExperimentPlan
from .polarization import Basis, PolarizationState
from .tomography import (
    CLASSICAL_LIMIT,
    FidelityReport,
    SweepFit,
    TomographyResult,
    counts_from_tables,
    fidelity_report,
    reconstruct,
    theta_sweep,
)

_SIGNAL, _BACKGROUND, _BALANCED = 0, 1, 2


def _stream(kind: int, k: int) -> int:
    return 3 * k + kind


@dataclass
class StateTomography:
    label: str
    state: PolarizationState
    result: TomographyResult
    report: FidelityReport
    heralds: int
    heralded_reads: int
    expected_fidelity: float
    signal: ClickTable = field(repr=False)
    background: ClickTable = field(repr=False)

    @property
    def single_yield(self) -> tuple[float, float]:
        """Fraction of heralded trials with a readout click, with binomial error."""
        if self.heralds == 0:
            return 0.0, 0.0
        p = self.heralded_reads / self.heralds
        return p, math.sqrt(p * (1 - p) / self.heralds)


def tomography_run(plan: ExperimentPlan, k: int) -> StateTomography:
    """Signal and background acquisitions for input state ``k``, then reconstruction."""
    state = plan.states[k]
    signal = simulate(
        state, plan.settings, plan.trials, plan.noise, plan.timing, plan.seed,
        stream=_stream(_SIGNAL, k), herald=plan.herald, workers=plan.workers,
    )
    n_bg = int(round(plan.trials * plan.background_factor))
    background = simulate(
        None, plan.settings, n_bg, plan.noise, plan.timing, plan.seed,
        stream=_stream(_BACKGROUND, k), herald="off", workers=plan.workers,
    )
    result = reconstruct(counts_from_tables(signal, background))
    heralded = signal.d1 > 0
    reads = heralded & ((signal.d2 + signal.d3) > 0)
    return StateTomography(
        label=plan.labels[k],
        state=state,
        result=result,
        report=fidelity_report(result, state),
        heralds=int(heralded.sum()),
        heralded_reads=int(reads.sum()),
        expected_fidelity=expected_fidelity(state, plan.noise, plan.timing),
        signal=signal,
        background=background,
    )


_REPORT_COLUMNS = (
    "F", "F_err", "p_out", "p_out_err", "F_bgsub", "F_bgsub_err", "p_out_bgsub",
    "p_out_bgsub_err", "F_mle",
)


def _report_values(r: FidelityReport) -> list:
    return [
        r.fidelity, r.fidelity_err, r.p_out, r.p_out_err, r.fidelity_bgsub, r.fidelity_bgsub_err,
        r.p_out_bgsub, r.p_out_bgsub_err, r.fidelity_mle,
    ]


@dataclass
class FiducialsResult:
    states: list[StateTomography]

    columns = ("state", "theta", "phi", *_REPORT_COLUMNS, "exceeds_classical_limit", "heralds", "heralded_reads")

    def rows(self) -> list[list]:
        return [
            [s.label, s.state.theta, s.state.phi, *_report_values(s.report),
             s.report.exceeds_classical_limit, s.heralds, s.heralded_reads]
            for s in self.states
        ]

    @property
    def mean_fidelity(self) -> float:
        return float(np.mean([s.report.fidelity for s in self.states]))

    def to_dict(self) -> dict:
        return {
            "mode": "fiducials",
            "mean_fidelity": self.mean_fidelity,
            "classical_limit": CLASSICAL_LIMIT,
            "states": [
                {
                    "label": s.label, "theta": s.state.theta, "phi": s.state.phi,
                    "report": s.report.to_dict(), "expected_fidelity": s.expected_fidelity,
                    "heralds": s.heralds, "heralded_reads": s.heralded_reads,
                    "tomography": s.result.to_dict(),
                }
                for s in self.states
            ],
        }

    def tables(self) -> dict[str, ClickTable]:
        return {f"{s.label}_signal": s.signal for s in self.states} | {
            f"{s.label}_background": s.background for s in self.states
        }


def run_fiducials(plan: ExperimentPlan) -> FiducialsResult:
    return FiducialsResult([tomography_run(plan, k) for k in range(len(plan.states))])


@dataclass
class ThetaSweepResult:
    states: list[StateTomography]
    fit: SweepFit

    columns = ("theta", "phi", "F", "F_err", "F_bgsub", "F_bgsub_err", "below_classical",
               "P_H", "P_V", "P_S", "P_T", "P_R", "P_L")

    def rows(self) -> list[list]:
        proj = self.fit.projections
        keys = [(Basis.HV, "H"), (Basis.HV, "V"), (Basis.ST, "S"), (Basis.ST, "T"),
                (Basis.LR, "R"), (Basis.LR, "L")]
        out = []
        for i, s in enumerate(self.states):
            r = s.report
            out.append([
                s.state.theta, s.state.phi, r.fidelity, r.fidelity_err, r.fidelity_bgsub,
                r.fidelity_bgsub_err, r.fidelity <= CLASSICAL_LIMIT,
                *[proj[key][0][i] for key in keys],
            ])
        return out

    @property
    def fidelity_spread(self) -> tuple[float, float]:
        """``(max - min, combined 1-sigma of the extreme points)``."""
        f = np.array([s.report.fidelity for s in self.states])
        e = np.array([s.report.fidelity_err for s in self.states])
        hi, lo = int(np.argmax(f)), int(np.argmin(f))
        return float(f[hi] - f[lo]), float(math.hypot(e[hi], e[lo]))

    def to_dict(self) -> dict:
        spread, sigma = self.fidelity_spread
        return {
            "mode": "theta-sweep",
            "fidelity_spread": spread,
            "fidelity_spread_sigma": sigma,
            "flagged_thetas": [s.state.theta for s in self.states if s.report.fidelity <= CLASSICAL_LIMIT],
            "points": [
                {"theta": s.state.theta, "phi": s.state.phi, "report": s.report.to_dict()}
                for s in self.states
            ],
            "fit": self.fit.to_dict(),
        }


def run_theta_sweep(plan: ExperimentPlan) -> ThetaSweepResult:
    runs = [tomography_run(plan, k) for k in range(len(plan.states))]
    fit = theta_sweep([r.state.theta for r in runs], [r.result.counts for r in runs])
    return ThetaSweepResult(runs, fit)


@dataclass
class G2Result:
    estimate: stats.G2Estimate
    expected: float
    emission: str
    table: ClickTable = field(repr=False)

    columns = ("g2", "err", "N1", "N12", "N13", "N123", "herald_rate", "expected_g2")

    def rows(self) -> list[list]:
        s = self.estimate.summary()
        return [[s["g2"], s["err"], s["N1"], s["N12"], s["N13"], s["N123"], s["herald_rate"], self.expected]]

    def to_dict(self) -> dict:
        return {"mode": "g2", "emission": self.emission, **self.estimate.summary(), "expected_g2": self.expected}


def balanced_run(plan: ExperimentPlan, k: int = 0) -> ClickTable:
    return simulate(
        plan.states[k], (Basis.BALANCED,), plan.g2_trials, plan.noise, plan.timing, plan.seed,
        stream=_stream(_BALANCED, k), herald=plan.herald, emission=plan.emission,
        workers=plan.workers,
    )


def run_g2(plan: ExperimentPlan) -> G2Result:
    table = balanced_run(plan)
    est = stats.conditional_g2(stats.tally(table))
    return G2Result(est, expected_g2(plan.noise, plan.emission), plan.emission, table)


@dataclass
class ConcurrenceRow:
    label: str
    state: PolarizationState
    estimate: entanglement.ConcurrenceEstimate
    single: tuple[float, float]
    g2: tuple[float, float]
    expected: float


@dataclass
class ConcurrenceResult:
    rows_: list[ConcurrenceRow]

    columns = ("state", "theta", "phi", "C_ph", "C_ph_err", "single_yield", "g2", "expected_C_ph")

    def rows(self) -> list[list]:
        return [
            [r.label, r.state.theta, r.state.phi, r.estimate.value, r.estimate.err,
             r.single[0], r.g2[0], r.expected]
            for r in self.rows_
        ]

    def to_dict(self) -> dict:
        return {
            "mode": "concurrence",
            "states": [
                {
                    "label": r.label, "theta": r.state.theta, "phi": r.state.phi,
                    **r.estimate.to_dict(), "single_yield": list(r.single), "g2": list(r.g2),
                    "expected_C_ph": r.expected,
                }
                for r in self.rows_
            ],
        }


def run_concurrence(plan: ExperimentPlan) -> ConcurrenceResult:
    out = []
    for k, state in enumerate(plan.states):
        tomo = tomography_run(plan, k)
        g2 = stats.conditional_g2(stats.tally(balanced_run(plan, k)))
        est = entanglement.photonic_concurrence_from_experiment(
            tomo.result, tomo.single_yield, (g2.g2, g2.err)
        )
        expected = entanglement.expected_photonic_concurrence(state, plan.noise, plan.timing)
        out.append(ConcurrenceRow(plan.labels[k], state, est, tomo.single_yield, (g2.g2, g2.err), expected))
    return ConcurrenceResult(out)


@dataclass
class RateResult:
    projection: stats.RateProjection
    trials_per_second: float

    columns = ("probability", "rate_per_s", "trials_per_second")

    def rows(self) -> list[list]:
        return [[self.projection.probability, self.projection.rate, self.trials_per_second]]

    def to_dict(self) -> dict:
        return {
            "mode": "rate", "probability": self.projection.probability,
            "rate_per_s": self.projection.rate, "trials_per_second": self.trials_per_second,
        }


def run_rate(plan: ExperimentPlan) -> RateResult:
    return RateResult(stats.success_rate_projection(plan.noise, plan.trials_per_second), plan.trials_per_second)


RUNNERS = {
    "fiducials": run_fiducials,
    "theta-sweep": run_theta_sweep,
    "g2": run_g2,
    "concurrence": run_concurrence,
    "rate": run_rate,
}


def run(plan: ExperimentPlan):
    return RUNNERS[plan.validate().mode](plan)
