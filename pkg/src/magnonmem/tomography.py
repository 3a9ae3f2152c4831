"""Three-basis polarization tomography.

Counts from the H-V, S-T and L-R analyzers are turned into a Stokes vector
(linear inversion) or into a guaranteed-physical density matrix (maximum
likelihood). The ``+`` port of each basis is H, S and R respectively.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .polarization import (
    STOKES_OPERATORS as _STOKES_OPS,
    TOMOGRAPHY_BASES,
    Basis,
    DensityMatrix,
    PolarizationState,
    StokesVector,
    amplitudes,
    fidelity,
    stokes_matrix,
)

CLASSICAL_LIMIT = 2 / 3


class InsufficientDataError(ValueError):
    """Not enough counts to form an estimate."""


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class BasisCounts:
    """Click totals at the two ports of one analyzer setting.

    ``background_plus/minus`` come from an independent background-only
    acquisition; multiplying them by ``background_scale`` normalizes them to
    the signal acquisition (ratio of signal windows to background windows).
    ``var_plus/minus`` default to the Poisson variances of the counts.
    """

    basis: Basis
    n_plus: float
    n_minus: float
    background_plus: float = 0.0
    background_minus: float = 0.0
    background_scale: float = 1.0
    var_plus: float | None = None
    var_minus: float | None = None
    background_dominated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "basis", Basis.parse(self.basis))
        if self.basis is Basis.BALANCED:
            raise ValueError("tomography needs a polarization-resolving basis")
        for name in ("n_plus", "n_minus", "background_plus", "background_minus", "background_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> float:
        return self.n_plus + self.n_minus

    @property
    def variances(self) -> tuple[float, float]:
        vp = self.n_plus if self.var_plus is None else self.var_plus
        vm = self.n_minus if self.var_minus is None else self.var_minus
        return vp, vm


def _by_basis(counts) -> dict[Basis, BasisCounts]:
    if isinstance(counts, Mapping):
        counts = list(counts.values())
    out = {c.basis: c for c in counts}
    missing = [b.label for b in TOMOGRAPHY_BASES if b not in out]
    if missing:
        raise InsufficientDataError(f"missing analyzer bases: {', '.join(missing)}")
    return out


@dataclass(frozen=True)
class StokesEstimate:
    value: StokesVector
    sigma: np.ndarray = field(compare=False)

    def as_array(self) -> np.ndarray:
        return self.value.as_array()


def _imbalance(c: BasisCounts) -> tuple[float, float]:
    total = c.total
    if total <= 0:
        raise InsufficientDataError(f"no counts in basis {c.basis.label}")
    s = (c.n_plus - c.n_minus) / total
    vp, vm = c.variances
    var = 4 * (c.n_minus**2 * vp + c.n_plus**2 * vm) / total**4
    return s, math.sqrt(var)


def estimate_stokes(counts) -> StokesEstimate:
    """Per-basis imbalances with first-order count errors.

    For raw counts the error reduces to the binomial ``2 sqrt(n+ n- / N^3)``.
    """
    by = _by_basis(counts)
    s = np.zeros(3)
    sigma = np.zeros(3)
    for basis in TOMOGRAPHY_BASES:
        s[basis.stokes_index], sigma[basis.stokes_index] = _imbalance(by[basis])
    return StokesEstimate(StokesVector(*s), sigma)


def linear_inversion(s: StokesVector | StokesEstimate | Sequence[float]) -> DensityMatrix:
    """``(I + s . sigma)/2``. Non-physical results are returned as-is; see ``.physical``."""
    if isinstance(s, StokesEstimate):
        s = s.value
    vec = s.as_array() if isinstance(s, StokesVector) else np.asarray(s, dtype=float)
    return DensityMatrix(stokes_matrix(vec))


def nearest_physical(rho: DensityMatrix) -> DensityMatrix:
    """Closest physical qubit state in Hilbert-Schmidt norm (Bloch vector clipped to the sphere)."""
    s = np.array([np.trace(rho.data @ op).real for op in _STOKES_OPS])
    norm = np.linalg.norm(s)
    if norm > 1:
        s = s / norm
    return DensityMatrix(stokes_matrix(s))


# ---------------------------------------------------------------------------
# maximum likelihood
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MLEResult:
    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool


def _stokes_from_factor(t: np.ndarray) -> np.ndarray:
    # rho = G^dag G / Tr, G = [[t1, 0], [t3 + i t4, t2]]
    t1, t2, t3, t4 = t
    norm = t @ t
    return np.array([2 * t2 * t3, -2 * t2 * t4, t1**2 + t3**2 + t4**2 - t2**2]) / norm


def _stokes_jacobian(t: np.ndarray, s: np.ndarray) -> np.ndarray:
    t1, t2, t3, t4 = t
    jac_num = np.array(
        [
            [0.0, 2 * t3, 2 * t2, 0.0],
            [0.0, -2 * t4, 0.0, -2 * t2],
            [2 * t1, -2 * t2, 2 * t3, 2 * t4],
        ]
    )
    return (jac_num - 2 * np.outer(s, t)) / (t @ t)


def _factor_from_stokes(s: np.ndarray) -> np.ndarray:
    rho = stokes_matrix(s)
    t2 = math.sqrt(max(rho[1, 1].real, 0.0))
    z = rho[0, 1].conjugate() / t2  # G[1,0] = t3 + i t4, with rho01 = t2 * conj(z)
    t1 = math.sqrt(max(rho[0, 0].real - abs(z) ** 2, 0.0))
    return np.array([t1, t2, z.real, z.imag])


def _log_likelihood(s: np.ndarray, n_plus: np.ndarray, n_minus: np.ndarray) -> float:
    p_plus = np.clip((1 + s) / 2, 1e-300, None)
    p_minus = np.clip((1 - s) / 2, 1e-300, None)
    return float(np.sum(n_plus * np.log(p_plus) + n_minus * np.log(p_minus)))


def _negative_ll_and_grad(t: np.ndarray, n_plus: np.ndarray, n_minus: np.ndarray):
    s = _stokes_from_factor(t)
    p_plus = np.clip((1 + s) / 2, 1e-300, None)
    p_minus = np.clip((1 - s) / 2, 1e-300, None)
    grad = _stokes_jacobian(t, s).T @ (0.5 * (n_plus / p_plus - n_minus / p_minus))
    return -_log_likelihood(s, n_plus, n_minus), -grad


def mle_reconstruct(counts, *, tol: float = 1e-10, max_iter: int = 10_000) -> MLEResult:
    """Physical density matrix maximizing the product of per-basis binomial likelihoods.

    The state is parameterized as ``G^dag G / Tr(G^dag G)`` with a lower
    triangular ``G`` (four real parameters). A quasi-Newton pass brings the
    factor close to the optimum, then gradient ascent with backtracking runs
    until an accepted step improves the log-likelihood by less than ``tol``.
    The start point is the linear-inversion estimate pulled just inside the
    Bloch sphere.
    """
    by = _by_basis(counts)
    n_plus = np.zeros(3)
    n_minus = np.zeros(3)
    for basis in TOMOGRAPHY_BASES:
        c = by[basis]
        n_plus[basis.stokes_index] = c.n_plus
        n_minus[basis.stokes_index] = c.n_minus
    if n_plus.sum() + n_minus.sum() <= 0:
        raise InsufficientDataError("no counts in any basis")

    totals = n_plus + n_minus
    s0 = np.divide(n_plus - n_minus, totals, out=np.zeros(3), where=totals > 0)
    norm = np.linalg.norm(s0)
    if norm > 0.999:
        s0 *= 0.999 / norm
    t = _factor_from_stokes(s0)
    s = _stokes_from_factor(t)
    ll = _log_likelihood(s, n_plus, n_minus)

    coarse = minimize(
        _negative_ll_and_grad, t, args=(n_plus, n_minus), jac=True, method="BFGS",
        options={"gtol": 1e-9, "maxiter": max_iter},
    )
    iterations = int(coarse.nit)
    if np.all(np.isfinite(coarse.x)) and np.linalg.norm(coarse.x) > 0 and -coarse.fun > ll:
        t = coarse.x / np.linalg.norm(coarse.x)
        s = _stokes_from_factor(t)
        ll = _log_likelihood(s, n_plus, n_minus)

    step = 1.0
    converged = False
    for _ in range(max(max_iter - iterations, 1)):
        iterations += 1
        _, grad = _negative_ll_and_grad(t, n_plus, n_minus)
        grad = -grad
        gnorm = np.linalg.norm(grad)
        if gnorm == 0:
            converged = True
            break
        direction = grad / gnorm
        while True:
            t_new = t + step * direction
            s_new = _stokes_from_factor(t_new)
            ll_new = _log_likelihood(s_new, n_plus, n_minus)
            if ll_new >= ll or step < 1e-16:
                break
            step *= 0.5
        gain = ll_new - ll
        if ll_new >= ll:
            t = t_new / np.linalg.norm(t_new)
            s, ll = s_new, ll_new
        if gain < tol:
            converged = True
            break
        step = min(step * 2.0, 1.0)
    return MLEResult(DensityMatrix(stokes_matrix(s)), ll, iterations, converged)


# ---------------------------------------------------------------------------
# background subtraction
# ---------------------------------------------------------------------------


def background_subtract(counts: BasisCounts) -> BasisCounts:
    """Remove the normalized background from each port, flooring at zero.

    Variances add the scaled background variance. If the background exceeds
    the signal on both ports the result is zeroed and flagged.
    """
    scale = counts.background_scale
    bp = scale * counts.background_plus
    bm = scale * counts.background_minus
    vp, vm = counts.variances
    vp += scale**2 * counts.background_plus
    vm += scale**2 * counts.background_minus
    plus = max(counts.n_plus - bp, 0.0)
    minus = max(counts.n_minus - bm, 0.0)
    dominated = plus == 0.0 and minus == 0.0 and (bp > 0 or bm > 0)
    return BasisCounts(
        counts.basis, plus, minus, 0.0, 0.0, 1.0, vp, vm, background_dominated=dominated,
    )


# ---------------------------------------------------------------------------
# reconstruction and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TomographyResult:
    counts: tuple[BasisCounts, ...]
    stokes: StokesEstimate
    rho_raw: DensityMatrix
    mle: MLEResult
    stokes_bgsub: StokesEstimate | None
    rho_bgsub: DensityMatrix | None
    mle_bgsub: MLEResult | None

    @property
    def rho_mle(self) -> DensityMatrix:
        return self.mle.rho

    def to_dict(self) -> dict:
        def stokes(est):
            if est is None:
                return None
            return {"value": est.as_array().tolist(), "sigma": est.sigma.tolist()}

        return {
            "counts": [
                {
                    "basis": c.basis.label, "n_plus": c.n_plus, "n_minus": c.n_minus,
                    "background_plus": c.background_plus, "background_minus": c.background_minus,
                    "background_scale": c.background_scale,
                }
                for c in self.counts
            ],
            "stokes": stokes(self.stokes),
            "stokes_bgsub": stokes(self.stokes_bgsub),
            "rho_raw": self.rho_raw.to_dict(),
            "rho_raw_physical": self.rho_raw.physical,
            "rho_mle": self.rho_mle.to_dict(),
            "mle_converged": self.mle.converged,
            "rho_bgsub": None if self.rho_bgsub is None else self.rho_bgsub.to_dict(),
            "rho_bgsub_mle": None if self.mle_bgsub is None else self.mle_bgsub.rho.to_dict(),
        }


def reconstruct(counts, *, subtract_background: bool = True) -> TomographyResult:
    by = _by_basis(counts)
    ordered = tuple(by[b] for b in TOMOGRAPHY_BASES)
    stokes = estimate_stokes(ordered)
    stokes_bg = rho_bg = mle_bg = None
    has_bg = any(c.background_plus or c.background_minus for c in ordered)
    if subtract_background and has_bg:
        sub = tuple(background_subtract(c) for c in ordered)
        stokes_bg = estimate_stokes(sub)
        rho_bg = linear_inversion(stokes_bg)
        mle_bg = mle_reconstruct(sub)
    elif subtract_background:
        stokes_bg, mle_bg = stokes, None
        rho_bg = linear_inversion(stokes)
    return TomographyResult(
        counts=ordered,
        stokes=stokes,
        rho_raw=linear_inversion(stokes),
        mle=mle_reconstruct(ordered),
        stokes_bgsub=stokes_bg,
        rho_bgsub=rho_bg,
        mle_bgsub=mle_bg,
    )


def _target_axis(target: PolarizationState) -> np.ndarray:
    ket = amplitudes(target)
    return np.array([np.vdot(ket, op @ ket).real for op in _STOKES_OPS])


def _fidelity_sigma(est: StokesEstimate, axis: np.ndarray) -> float:
    return float(0.5 * np.sqrt(np.sum(axis**2 * est.sigma**2)))


def _dop(est: StokesEstimate) -> tuple[float, float]:
    s = est.as_array()
    p = float(np.linalg.norm(s))
    if p == 0:
        return 0.0, float(np.sqrt(np.mean(est.sigma**2)))
    return p, float(np.sqrt(np.sum((s / p) ** 2 * est.sigma**2)))


@dataclass(frozen=True)
class FidelityReport:
    fidelity: float
    fidelity_err: float
    p_out: float
    p_out_err: float
    fidelity_mle: float
    fidelity_bgsub: float | None
    fidelity_bgsub_err: float | None
    p_out_bgsub: float | None
    p_out_bgsub_err: float | None
    exceeds_classical_limit: bool

    @property
    def sigmas_above_classical(self) -> float:
        if self.fidelity_err == 0:
            return math.inf if self.fidelity > CLASSICAL_LIMIT else -math.inf
        return (self.fidelity - CLASSICAL_LIMIT) / self.fidelity_err

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["sigmas_above_classical"] = self.sigmas_above_classical
        return out


def fidelity_report(result: TomographyResult, target: PolarizationState) -> FidelityReport:
    """Fidelity and degree of polarization, raw and background-subtracted.

    Raw values come from the linear-inversion matrix; the classical-limit flag
    requires ``F - 2 sigma > 2/3``.
    """
    axis = _target_axis(target)
    f = fidelity(result.rho_raw, target)
    f_err = _fidelity_sigma(result.stokes, axis)
    p, p_err = _dop(result.stokes)
    fb = fb_err = pb = pb_err = None
    if result.rho_bgsub is not None:
        fb = fidelity(result.rho_bgsub, target)
        fb_err = _fidelity_sigma(result.stokes_bgsub, axis)
        pb, pb_err = _dop(result.stokes_bgsub)
    return FidelityReport(
        fidelity=f,
        fidelity_err=f_err,
        p_out=p,
        p_out_err=p_err,
        fidelity_mle=fidelity(result.rho_mle, target),
        fidelity_bgsub=fb,
        fidelity_bgsub_err=fb_err,
        p_out_bgsub=pb,
        p_out_bgsub_err=pb_err,
        exceeds_classical_limit=bool(f - 2 * f_err > CLASSICAL_LIMIT),
    )


def bootstrap_fidelity(counts, target: PolarizationState, n_resamples: int = 1000, seed: int = 0) -> float:
    """Standard deviation of the linear-inversion fidelity over binomial resamples."""
    by = _by_basis(counts)
    rng = np.random.default_rng(seed)
    axis = _target_axis(target)
    samples = np.zeros((n_resamples, 3))
    for basis in TOMOGRAPHY_BASES:
        c = by[basis]
        n = int(round(c.total))
        if n == 0:
            raise InsufficientDataError(f"no counts in basis {basis.label}")
        plus = rng.binomial(n, c.n_plus / c.total, size=n_resamples)
        samples[:, basis.stokes_index] = (2 * plus - n) / n
    f = 0.5 * (1 + samples @ axis)
    return float(np.std(f, ddof=1))


# ---------------------------------------------------------------------------
# theta sweep
# ---------------------------------------------------------------------------

_PORT_NAMES = {Basis.HV: ("H", "V"), Basis.ST: ("S", "T"), Basis.LR: ("R", "L")}


@dataclass(frozen=True)
class CurveFit:
    """``y = amplitude * cos(2 theta + phase) + offset`` for one port."""

    basis: Basis
    port: str
    amplitude: float
    phase: float
    offset: float
    residual_rms: float
    stat_error_rms: float

    @property
    def contrast(self) -> float:
        return abs(self.amplitude) / self.offset if self.offset > 0 else math.nan

    def __call__(self, theta):
        return self.amplitude * np.cos(2 * np.asarray(theta) + self.phase) + self.offset


@dataclass(frozen=True)
class SweepFit:
    thetas: np.ndarray
    projections: dict  # (basis, port) -> (fractions, sigmas)
    curves: tuple[CurveFit, ...]

    @property
    def n_points(self) -> int:
        return sum(len(v[0]) for v in self.projections.values())

    def to_dict(self) -> dict:
        return {
            "thetas": self.thetas.tolist(),
            "projections": [
                {"basis": b.label, "port": port, "fraction": y.tolist(), "sigma": e.tolist()}
                for (b, port), (y, e) in self.projections.items()
            ],
            "fits": [
                {
                    "basis": c.basis.label, "port": c.port, "amplitude": c.amplitude,
                    "phase": c.phase, "offset": c.offset, "contrast": c.contrast,
                    "residual_rms": c.residual_rms, "stat_error_rms": c.stat_error_rms,
                }
                for c in self.curves
            ],
        }


def fit_sinusoid(thetas, y) -> tuple[float, float, float, float]:
    """Least-squares ``A cos(2 theta + delta) + B``; returns ``(A, delta, B, residual_rms)``."""
    thetas = np.asarray(thetas, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(thetas) < 5:
        raise FitError("need at least five theta values")
    design = np.column_stack([np.cos(2 * thetas), np.sin(2 * thetas), np.ones_like(thetas)])
    if np.linalg.matrix_rank(design) < 3:
        raise FitError("theta values do not determine a sinusoid")
    (a, b, offset), *_ = np.linalg.lstsq(design, y, rcond=None)
    amplitude = math.hypot(a, b)
    phase = math.atan2(-b, a)
    resid = y - design @ np.array([a, b, offset])
    return amplitude, phase, float(offset), float(np.sqrt(np.mean(resid**2)))


def theta_sweep(thetas: Sequence[float], counts_per_theta: Sequence) -> SweepFit:
    """Fit the six port projections measured at each polar angle theta."""
    thetas = np.asarray(thetas, dtype=float)
    if len(thetas) != len(counts_per_theta):
        raise ValueError("one set of counts per theta is required")
    projections = {}
    curves = []
    per_theta = [_by_basis(c) for c in counts_per_theta]
    for basis in TOMOGRAPHY_BASES:
        for k, port in enumerate(_PORT_NAMES[basis]):
            frac = np.zeros(len(thetas))
            err = np.zeros(len(thetas))
            for i, by in enumerate(per_theta):
                c = by[basis]
                if c.total <= 0:
                    raise InsufficientDataError(f"no counts in {basis.label} at theta={thetas[i]:.4g}")
                n = c.n_plus if k == 0 else c.n_minus
                f = n / c.total
                frac[i] = f
                err[i] = math.sqrt(max(f * (1 - f), 1.0 / c.total) / c.total)
            amp, phase, offset, rms = fit_sinusoid(thetas, frac)
            projections[(basis, port)] = (frac, err)
            curves.append(CurveFit(basis, port, amp, phase, offset, rms, float(np.sqrt(np.mean(err**2)))))
    return SweepFit(thetas, projections, tuple(curves))


# ---------------------------------------------------------------------------
# count tables
# ---------------------------------------------------------------------------


def counts_from_tables(signal, background=None) -> dict[Basis, BasisCounts]:
    """Build per-basis counts from simulator tables.

    Signal counts keep heralded trials (D1 click); the background table is
    used window by window and normalized to the number of heralded windows.
    """
    sig = signal.port_totals("herald")
    bg = background.port_totals("all") if background is not None else {}
    out = {}
    for basis in TOMOGRAPHY_BASES:
        if basis not in sig:
            continue
        plus, minus, windows = sig[basis]
        b_plus = b_minus = 0
        scale = 1.0
        if basis in bg and bg[basis][2] > 0:
            b_plus, b_minus, b_windows = bg[basis]
            scale = windows / b_windows
        out[basis] = BasisCounts(basis, plus, minus, b_plus, b_minus, scale)
    return out


def read_counts_csv(path: str | Path, background_scale: float = 1.0) -> dict[Basis, BasisCounts]:
    """Read a ``basis,port,counts,background`` table.

    ``port`` is ``+``/``-`` or the name of the state on that port (H, V, S,
    T, R, L).
    """
    rows: dict[Basis, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"basis", "port", "counts", "background"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(required)}")
        for line, row in enumerate(reader, start=2):
            try:
                basis = Basis.parse(row["basis"])
                port = row["port"].strip().upper()
                names = _PORT_NAMES.get(basis)
                if names is None:
                    raise ValueError(f"basis {basis.label} is not a tomography basis")
                if port in ("+", names[0]):
                    key = "plus"
                elif port in ("-", names[1]):
                    key = "minus"
                else:
                    raise ValueError(f"port {row['port']!r} does not belong to {basis.label}")
                rows.setdefault(basis, {})[key] = (float(row["counts"]), float(row["background"]))
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
    out = {}
    for basis, ports in rows.items():
        if set(ports) != {"plus", "minus"}:
            raise ValueError(f"{path}: basis {basis.label} needs both ports")
        (np_, bp), (nm, bm) = ports["plus"], ports["minus"]
        out[basis] = BasisCounts(basis, np_, nm, bp, bm, background_scale)
    return out


def with_background_scale(counts: Mapping[Basis, BasisCounts], scale: float) -> dict[Basis, BasisCounts]:
    return {b: replace(c, background_scale=scale) for b, c in counts.items()}
