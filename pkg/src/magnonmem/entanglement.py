"""Two-mode (dual-rail) concurrence.

The retrieved light is described by the occupations of its two polarization
rails, R and L, each truncated to {0, 1} photons. Rail-basis kets are
ordered ``|00>, |10>, |01>, |11>`` with the first label for rail A (R).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .memory import NoiseParams, ProtocolTiming, expected_g2, expected_stokes, background_mean
from .polarization import DensityMatrix, NonPhysicalStateError, PolarizationState, stokes_matrix
from .tomography import InsufficientDataError, TomographyResult

_TOL = 1e-10
_SY = np.array([[0, -1j], [1j, 0]])
_SYSY = np.kron(_SY, _SY)


@dataclass(frozen=True)
class DualRailState:
    """Two-rail state with a single-excitation coherence ``d = <10|rho|01>``.

    ``p00`` defaults to whatever probability the other entries leave.
    """

    p10: float
    p01: float
    d: complex = 0.0
    p11: float = 0.0
    p00: float | None = None

    def __post_init__(self):
        if self.p00 is None:
            object.__setattr__(self, "p00", 1.0 - self.p10 - self.p01 - self.p11)
        probs = (self.p00, self.p10, self.p01, self.p11)
        if min(probs) < -_TOL:
            raise NonPhysicalStateError(f"negative probability in {probs}")
        if sum(probs) > 1 + _TOL:
            raise NonPhysicalStateError(f"probabilities sum to {sum(probs):.12g} > 1")
        if abs(self.d) > math.sqrt(max(self.p10 * self.p01, 0.0)) + _TOL:
            raise NonPhysicalStateError("|d| exceeds sqrt(p10 p01)")
        object.__setattr__(self, "d", complex(self.d))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["d"] = [self.d.real, self.d.imag]
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "DualRailState":
        payload = dict(payload)
        d = payload.get("d", 0.0)
        if isinstance(d, (list, tuple)):
            d = complex(d[0], d[1])
        payload["d"] = d
        return cls(**payload)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DualRailState":
        return cls.from_dict(json.loads(text))


def to_two_qubit_density(s: DualRailState) -> DensityMatrix:
    total = s.p00 + s.p10 + s.p01 + s.p11
    if abs(total - 1) > _TOL:
        raise NonPhysicalStateError(f"rail probabilities sum to {total:.12g}, expected 1")
    rho = np.diag([s.p00, s.p10, s.p01, s.p11]).astype(complex)
    rho[1, 2] = s.d
    rho[2, 1] = np.conj(s.d)
    return DensityMatrix(rho).require_physical()


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(mat)
    return (evecs * np.sqrt(np.clip(evals, 0, None))) @ evecs.conj().T


def wootters_concurrence(rho: DensityMatrix) -> float:
    """``max(0, l1 - l2 - l3 - l4)`` over the decreasing square roots of the
    eigenvalues of ``rho (sy x sy) rho* (sy x sy)``.

    The square roots are obtained as the singular values of
    ``sqrt(rho) sqrt(rho_tilde)``, which avoids taking square roots of
    round-off-sized eigenvalues.
    """
    if rho.dim != 4:
        raise ValueError("concurrence needs a two-qubit (4x4) density matrix")
    rho.require_physical()
    root = _psd_sqrt(rho.data)
    root_tilde = _SYSY @ root.conj() @ _SYSY
    lam = np.linalg.svd(root @ root_tilde, compute_uv=False)
    return float(max(0.0, lam[0] - lam[1:].sum()))


def x_state_concurrence(s: DualRailState) -> float:
    """Closed form for single-coherence X-states: ``2 max(0, |d| - sqrt(p00 p11))``."""
    return 2.0 * max(0.0, abs(s.d) - math.sqrt(s.p00 * s.p11))


def dual_rail_from_measurement(single: float, g2: float, stokes) -> DualRailState:
    """Embed measured yields into a dual-rail state.

    ``single`` is the probability of a detected photon per heralded trial; its
    split over the rails and the rail coherence come from the reconstructed
    polarization (``stokes`` pulled inside the Bloch ball). Two-photon
    events occur with probability ``g2 * single**2 / 2`` and land one per rail
    with probability ``2 rho_RR rho_LL``.
    """
    if not single > 0:
        raise InsufficientDataError("no detected single photons")
    s = np.asarray(stokes, dtype=float)
    norm = np.linalg.norm(s)
    if norm > 1:
        s = s / norm
    rho = stokes_matrix(s)
    rr, ll = rho[0, 0].real, rho[1, 1].real
    p11 = max(g2, 0.0) * single**2 * rr * ll
    return DualRailState(p10=single * rr, p01=single * ll, d=single * rho[0, 1], p11=p11)


@dataclass(frozen=True)
class ConcurrenceEstimate:
    value: float
    err: float
    state: DualRailState

    def to_dict(self) -> dict:
        return {"C_ph": self.value, "err": self.err, "dual_rail": self.state.to_dict()}


def _concurrence_of(single, g2, stokes) -> float:
    return wootters_concurrence(to_two_qubit_density(dual_rail_from_measurement(single, g2, stokes)))


def photonic_concurrence_from_experiment(
    tomo: TomographyResult,
    single: tuple[float, float],
    g2: tuple[float, float],
) -> ConcurrenceEstimate:
    """Photonic concurrence from tomography, the singles yield and heralded g2.

    ``single`` and ``g2`` are ``(value, sigma)`` pairs. The coherence uses
    the maximum-likelihood matrix; errors are propagated to first order by
    central differences.
    """
    p1, p1_err = single
    g, g_err = g2
    rho = tomo.rho_mle.data
    stokes = np.array([2 * rho[0, 1].real, 2 * rho[0, 1].imag, (rho[0, 0] - rho[1, 1]).real])
    state = dual_rail_from_measurement(p1, g, stokes)
    value = wootters_concurrence(to_two_qubit_density(state))

    x0 = np.array([p1, g, *stokes])
    sig = np.array([p1_err, g_err, *tomo.stokes.sigma])

    def f(x):
        return _concurrence_of(x[0], x[1], x[2:])

    var = 0.0
    for i, si in enumerate(sig):
        if si == 0:
            continue
        h = min(si, 1e-4) if i != 0 else min(si, 0.5 * p1)
        up, dn = x0.copy(), x0.copy()
        up[i] += h
        dn[i] -= h
        var += ((f(up) - f(dn)) / (2 * h) * si) ** 2
    return ConcurrenceEstimate(value, math.sqrt(var), state)


def expected_single_yield(noise: NoiseParams) -> float:
    """Probability of at least one readout click per heralded trial (any analyzer)."""
    eta = noise.epsilon_retrieval * noise.q
    bg = background_mean(noise) * noise.q + 2 * noise.dark_rate
    no_signal = (1 - noise.p2) * (1 - eta) + noise.p2 * (1 - eta) ** 2
    return float(1 - no_signal * math.exp(-bg))


def expected_photonic_concurrence(
    state: PolarizationState, noise: NoiseParams, timing: ProtocolTiming
) -> float:
    """Infinite-statistics value of :func:`photonic_concurrence_from_experiment`."""
    return _concurrence_of(expected_single_yield(noise), expected_g2(noise), expected_stokes(state, noise, timing))
