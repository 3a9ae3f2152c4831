"""Polarization qubits, density matrices and Stokes vectors.

All 2x2 matrices use the circular basis with column order ``(|R>, |L>)``.
The three analyzer bases are

* H-V : ``(|L> +- |R>)/sqrt(2)``
* L-R : ``|R>``, ``|L>``
* S-T : ``(|L> +- i|R>)/sqrt(2)``

and the Stokes components are the imbalances of those bases::

    s1 = P(H) - P(V),   s2 = P(S) - P(T),   s3 = P(R) - P(L)

which in the ``(R, L)`` ordering means ``s1 = <sx>``, ``s2 = -<sy>``,
``s3 = <sz>``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

#: Operators whose expectation values are (s1, s2, s3).
STOKES_OPERATORS = (SIGMA_X, -SIGMA_Y, SIGMA_Z)


class NonPhysicalStateError(ValueError):
    """Raised when a matrix or Stokes vector does not describe a physical state."""


# ---------------------------------------------------------------------------
# pure states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolarizationState:
    """Pure polarization ``cos(theta)|R> + exp(i phi) sin(theta)|L>``."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.theta <= np.pi):
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")
        object.__setattr__(self, "phi", float(self.phi) % (2 * np.pi))

    def amplitudes(self) -> np.ndarray:
        return amplitudes(self)

    @classmethod
    def from_amplitudes(cls, c_r: complex, c_l: complex) -> "PolarizationState":
        """Build a state from (unnormalized) amplitudes, dropping the global phase."""
        vec = np.array([c_r, c_l], dtype=complex)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ValueError("zero amplitude vector")
        vec = vec / norm
        if abs(vec[0]) > 0:
            vec = vec * np.exp(-1j * np.angle(vec[0]))
        theta = float(np.arctan2(abs(vec[1]), vec[0].real))
        phi = float(np.angle(vec[1])) if abs(vec[1]) > 0 else 0.0
        return cls(theta, phi)

    def same_state(self, other: "PolarizationState", tol: float = 1e-12) -> bool:
        overlap = np.vdot(self.amplitudes(), other.amplitudes())
        return abs(abs(overlap) ** 2 - 1.0) <= tol

    def swapped(self) -> "PolarizationState":
        """The state with the roles of |R> and |L> interchanged."""
        c_r, c_l = self.amplitudes()
        return PolarizationState.from_amplitudes(c_l, c_r)


def amplitudes(state: PolarizationState) -> np.ndarray:
    """Return ``(c_R, c_L) = (cos theta, exp(i phi) sin theta)``."""
    return np.array(
        [np.cos(state.theta), np.exp(1j * state.phi) * np.sin(state.theta)],
        dtype=complex,
    )


class Fiducial(enum.Enum):
    """The six tomography states; the value is ``(theta, phi)``."""

    H = (np.pi / 4, 0.0)
    V = (np.pi / 4, np.pi)
    L = (np.pi / 2, 0.0)
    R = (0.0, 0.0)
    S = (np.pi / 4, 3 * np.pi / 2)
    T = (np.pi / 4, np.pi / 2)

    @property
    def state(self) -> PolarizationState:
        return PolarizationState(*self.value)

    def ket(self) -> np.ndarray:
        return amplitudes(self.state)


class Basis(enum.Enum):
    """Analyzer settings.

    The value is ``(plus, minus)``: the fiducial routed to the ``+`` port
    (detector D2) and the one routed to the ``-`` port (D3). ``BALANCED``
    is the polarization-insensitive 50/50 splitter used for g2.
    """

    HV = ("H", "V")
    LR = ("R", "L")
    ST = ("S", "T")
    BALANCED = (None, None)

    @property
    def label(self) -> str:
        return {"HV": "H-V", "LR": "L-R", "ST": "S-T", "BALANCED": "balanced"}[self.name]

    @classmethod
    def parse(cls, text: str | "Basis") -> "Basis":
        if isinstance(text, Basis):
            return text
        key = str(text).upper().replace("-", "").replace("_", "")
        if key == "RL":
            key = "LR"
        if key == "TS":
            key = "ST"
        if key == "VH":
            key = "HV"
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown analyzer basis {text!r}") from None

    @property
    def stokes_index(self) -> int:
        return {"HV": 0, "ST": 1, "LR": 2}[self.name]

    def projectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Projectors for the (plus, minus) ports."""
        if self is Basis.BALANCED:
            half = np.eye(2, dtype=complex) / 2
            return half, half
        plus, minus = (Fiducial[name].ket() for name in self.value)
        return np.outer(plus, plus.conj()), np.outer(minus, minus.conj())


TOMOGRAPHY_BASES = (Basis.HV, Basis.ST, Basis.LR)


# ---------------------------------------------------------------------------
# mixed states
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace matrix of dimension 2 or 4.

    Positivity is not enforced at construction so that linear-inversion
    estimates can be represented; check :attr:`physical` or call
    :meth:`require_physical`.
    """

    data: np.ndarray
    eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        if data.ndim != 2 or data.shape[0] != data.shape[1] or data.shape[0] not in (2, 4):
            raise ValueError(f"density matrix must be 2x2 or 4x4, got shape {data.shape}")
        if np.max(np.abs(data - data.conj().T)) > HERMITIAN_TOL:
            raise NonPhysicalStateError("matrix is not Hermitian")
        if abs(np.trace(data) - 1.0) > TRACE_TOL:
            raise NonPhysicalStateError(f"trace is {np.trace(data).real:.3g}, expected 1")
        data = (data + data.conj().T) / 2
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        evals = np.linalg.eigvalsh(data)
        evals.setflags(write=False)
        object.__setattr__(self, "eigenvalues", evals)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def physical(self) -> bool:
        return bool(self.eigenvalues[0] >= -PSD_TOL)

    def require_physical(self) -> "DensityMatrix":
        if not self.physical:
            raise NonPhysicalStateError(
                f"matrix has negative eigenvalue {self.eigenvalues[0]:.3g}"
            )
        return self

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.data, other.data)

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "entries": [[[z.real, z.imag] for z in row] for row in self.data.tolist()],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DensityMatrix":
        entries = np.array(payload["entries"], dtype=float)
        dim = int(payload["dim"])
        if entries.shape != (dim, dim, 2):
            raise ValueError(f"entries shape {entries.shape} does not match dim={dim}")
        return cls(entries[..., 0] + 1j * entries[..., 1])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DensityMatrix":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class StokesVector:
    s1: float
    s2: float
    s3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3], dtype=float)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


def density_from_pure(state: PolarizationState) -> DensityMatrix:
    ket = amplitudes(state)
    return DensityMatrix(np.outer(ket, ket.conj()))


def _check_qubit(rho: DensityMatrix) -> DensityMatrix:
    if rho.dim != 2:
        raise ValueError("expected a single-qubit (2x2) density matrix")
    return rho


def stokes_from_density(rho: DensityMatrix) -> StokesVector:
    _check_qubit(rho).require_physical()
    return StokesVector(*_stokes_components(rho.data))


def _stokes_components(mat: np.ndarray) -> np.ndarray:
    return np.array([np.trace(mat @ op).real for op in STOKES_OPERATORS])


def stokes_matrix(s) -> np.ndarray:
    """``(I + s . sigma)/2`` as a plain array, with no physicality check."""
    s = np.asarray(s, dtype=float)
    return (np.eye(2, dtype=complex) + sum(si * op for si, op in zip(s, STOKES_OPERATORS))) / 2


def density_from_stokes(s: StokesVector) -> DensityMatrix:
    if s.norm > 1 + PSD_TOL:
        raise NonPhysicalStateError(f"Stokes vector length {s.norm:.6g} exceeds 1")
    return DensityMatrix(stokes_matrix(s.as_array()))


def fidelity(rho: DensityMatrix, target: PolarizationState) -> float:
    """Overlap ``<psi|rho|psi>`` with a pure target."""
    ket = amplitudes(target)
    value = np.vdot(ket, _check_qubit(rho).data @ ket)
    return float(value.real)


def degree_of_polarization(rho: DensityMatrix) -> float:
    return stokes_from_density(rho).norm


def trace_distance(a, b) -> float:
    diff = np.asarray(a, dtype=complex) - np.asarray(b, dtype=complex)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


def random_state(rng: np.random.Generator) -> PolarizationState:
    """Haar-random pure state."""
    vec = rng.normal(size=2) + 1j * rng.normal(size=2)
    return PolarizationState.from_amplitudes(*vec)


def random_density(rng: np.random.Generator) -> DensityMatrix:
    """Random qubit state, uniform in the Bloch ball."""
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    radius = rng.uniform() ** (1 / 3)
    return density_from_stokes(StokesVector(*(radius * direction)))
