"""Click-level Monte Carlo of the heralded dual-rail magnon memory.

One trial is an optical-pump / write / read cycle. A herald click (D1)
announces that the write pulse left one magnon shared between ensembles
A and B; the read pulse then converts the magnon back into a photon that is
analyzed on two detectors (D2 = ``+`` port, D3 = ``-`` port).

Simulation is vectorized over trials. Each trial draws its randomness from
:mod:`magnonmem.streams` at fixed slots, so a trial's clicks depend only on
``(seed, stream, trial_index)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import poisson

from . import streams
from .polarization import (
    TOMOGRAPHY_BASES,
    Basis,
    DensityMatrix,
    Fiducial,
    PolarizationState,
    amplitudes,
    stokes_matrix,
)

DETECTORS = ("D1_herald", "D2", "D3")
HERALD_MODES = ("sampled", "conditioned", "off")
EMISSION_MODES = ("fock", "coherent")
BACKGROUND_MODELS = ("unpolarized", "sigma_biased")

# uniform slots within a trial's substream
_HERALD, _DOUBLE, _EMIT1, _EMIT2, _ROUTE1, _ROUTE2 = 0, 1, 2, 3, 4, 5
_BG_PLUS, _BG_MINUS, _DARK1, _DARK2, _DARK3 = 6, 7, 8, 9, 10
_COH_PLUS, _COH_MINUS = 11, 12


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolTiming:
    """Larmor-locked pulse schedule (seconds).

    ``t_w`` and ``t_r`` default to ``tau_L/2`` and ``t_w + tau_L/4``: the
    write pulse sees the spins along -+x, the read pulse along +-z.
    """

    tau_L: float = 2e-6
    t_opt: float = 0.0
    t_w: float | None = None
    t_r: float | None = None
    write_duration: float = 50e-9
    read_duration: float = 100e-9
    trial_period: float | None = None
    trials_per_sequence: int = 10_000

    def __post_init__(self):
        if self.tau_L <= 0:
            raise ValueError("tau_L must be positive")
        if self.t_w is None:
            object.__setattr__(self, "t_w", self.tau_L / 2)
        if self.t_r is None:
            object.__setattr__(self, "t_r", self.t_w + self.tau_L / 4)
        if self.trial_period is None:
            object.__setattr__(self, "trial_period", 1.5 * self.tau_L)
        if not (self.t_opt <= self.t_w < self.t_r):
            raise ValueError("pulse order must be t_opt <= t_w < t_r")
        for name in ("write_duration", "read_duration"):
            ratio = getattr(self, name) / self.tau_L
            if not (0 < ratio < 0.25):
                raise ValueError(f"{name} must be positive and < tau_L/4 (ratio {ratio:.3g})")
        if self.trials_per_sequence < 0:
            raise ValueError("trials_per_sequence must be >= 0")

    @property
    def storage_time(self) -> float:
        return self.t_r - self.t_w


@dataclass(frozen=True)
class NoiseParams:
    """Noise and efficiency model.

    ``mu_bg`` is the mean number of background photons reaching the analyzer
    per read window, before detection. Imperfect optical pumping adds
    ``(1 - pump_purity) * epsilon_retrieval`` to it. ``p2`` is the probability
    that a heralded trial stored two excitations instead of one, and
    ``population_imbalance`` is the fractional population difference between
    the two physical ensembles (its sign flips when they are interchanged).
    """

    alpha_perp: float = 0.01
    eta: float = 1e-3
    q: float = 0.1
    epsilon_retrieval: float = 0.5
    mu_bg: float = 0.0
    dark_rate: float = 0.0
    T2: float = 3e-6
    pump_purity: float = 0.99
    p2: float = 0.0
    population_imbalance: float = 0.0
    background_model: str = "unpolarized"

    def __post_init__(self):
        for name in ("alpha_perp", "eta", "q", "epsilon_retrieval", "pump_purity", "p2"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.mu_bg < 0 or self.dark_rate < 0:
            raise ValueError("mu_bg and dark_rate must be non-negative")
        if not self.T2 > 0:
            raise ValueError("T2 must be positive")
        if not (-1.0 < self.population_imbalance < 1.0):
            raise ValueError("population_imbalance must lie in (-1, 1)")
        if self.background_model not in BACKGROUND_MODELS:
            raise ValueError(f"background_model must be one of {BACKGROUND_MODELS}")

    @classmethod
    def noiseless(cls, **overrides) -> "NoiseParams":
        """Unit efficiencies, no background, no dephasing, herald every trial."""
        base = dict(
            alpha_perp=1.0, eta=1.0, q=1.0, epsilon_retrieval=1.0, mu_bg=0.0,
            dark_rate=0.0, T2=math.inf, pump_purity=1.0, p2=0.0,
        )
        base.update(overrides)
        return cls(**base)


def herald_probability(noise: NoiseParams) -> float:
    """``alpha_perp * eta * q``, rounded once from the decimal factors."""
    product = Decimal(repr(noise.alpha_perp)) * Decimal(repr(noise.eta)) * Decimal(repr(noise.q))
    return float(product)


def background_mean(noise: NoiseParams) -> float:
    """Mean background photons per read window, including mis-pumped atoms."""
    return noise.mu_bg + (1.0 - noise.pump_purity) * noise.epsilon_retrieval


# ---------------------------------------------------------------------------
# write / store / read
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MagnonRecord:
    """Single excitation ``c_A |1,0> + c_B |0,1>`` plus dephasing bookkeeping."""

    c_A: complex
    c_B: complex
    stored_at: float = 0.0
    coherence_factor: float = 1.0

    def __post_init__(self):
        if abs(abs(self.c_A) ** 2 + abs(self.c_B) ** 2 - 1) > 1e-12:
            raise ValueError("magnon amplitudes must be normalized")
        if not (0.0 <= self.coherence_factor <= 1.0):
            raise ValueError("coherence_factor must lie in [0, 1]")


def write_map(state: PolarizationState, stored_at: float = 0.0) -> MagnonRecord:
    """Copy the polarization amplitudes onto the two ensembles (R -> A, L -> B)."""
    c_r, c_l = amplitudes(state)
    return MagnonRecord(complex(c_r), complex(c_l), stored_at=stored_at)


def larmor_angle(t: float, timing: ProtocolTiming) -> float:
    if t < 0:
        raise ValueError("time must be non-negative")
    return float((2 * np.pi * t / timing.tau_L) % (2 * np.pi))


def coherence_factor(noise: NoiseParams, timing: ProtocolTiming) -> float:
    return float(np.exp(-timing.storage_time / noise.T2))


def store(magnon: MagnonRecord, noise: NoiseParams, timing: ProtocolTiming) -> MagnonRecord:
    """Hold the magnon from ``t_w`` until ``t_r`` under pure A-B dephasing."""
    return replace(magnon, stored_at=timing.t_w, coherence_factor=coherence_factor(noise, timing))


def _imbalance(noise: NoiseParams, swapped: bool) -> float:
    return -noise.population_imbalance if swapped else noise.population_imbalance


def signal_density(magnon: MagnonRecord, noise: NoiseParams, swapped: bool = False) -> np.ndarray:
    """Polarization of the retrieved photon, before background."""
    delta = _imbalance(noise, swapped)
    amp = np.array([magnon.c_A * (1 + delta), magnon.c_B * (1 - delta)], dtype=complex)
    amp /= np.linalg.norm(amp)
    rho = np.outer(amp, amp.conj())
    rho[0, 1] *= magnon.coherence_factor
    rho[1, 0] *= magnon.coherence_factor
    return rho


def background_bias(timing: ProtocolTiming) -> float:
    """R/L bias of the sigma-biased background: sine of the read-window precession."""
    return float(np.sin(larmor_angle(timing.read_duration, timing)))


def background_density(noise: NoiseParams, timing: ProtocolTiming, swapped: bool = False) -> np.ndarray:
    if noise.background_model == "unpolarized":
        return np.eye(2, dtype=complex) / 2
    bias = background_bias(timing) * (-1 if swapped else 1)
    return np.diag([(1 + bias) / 2, (1 - bias) / 2]).astype(complex)


@dataclass(frozen=True)
class ReadOutput:
    rho: DensityMatrix
    emission_probability: float
    background_fraction: float


def read_map(
    magnon: MagnonRecord | None,
    noise: NoiseParams,
    timing: ProtocolTiming,
    swapped: bool = False,
) -> ReadOutput:
    """Polarization state of the light leaving the memory in the read window.

    The signal is mixed with background light in proportion to mean photon
    numbers: ``lambda = mu / (mu + eps * (1 + p2))``. ``magnon=None`` stands
    for an un-heralded trial, which yields background only.
    """
    mu = background_mean(noise)
    bg = background_density(noise, timing, swapped)
    if magnon is None:
        return ReadOutput(DensityMatrix(bg), 0.0, 1.0)
    signal_mean = noise.epsilon_retrieval * (1 + noise.p2)
    total = mu + signal_mean
    lam = mu / total if total > 0 else 0.0
    rho = (1 - lam) * signal_density(magnon, noise, swapped) + lam * bg
    return ReadOutput(DensityMatrix(rho), noise.epsilon_retrieval, lam)


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClickRecord:
    trial_index: int
    detector: str
    count: int

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.count < 0:
            raise ValueError("count must be non-negative")


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    heralded: bool
    ensembles_swapped: bool
    measurement_setting: Basis
    clicks: tuple[ClickRecord, ...] = ()

    def count(self, detector: str) -> int:
        return sum(c.count for c in self.clicks if c.detector == detector)


_RECORD_HEADER = "trial,heralded,swapped,setting,d1,d2,d3"


@dataclass
class ClickTable:
    """Columnar trial records; one row per trial."""

    trial: np.ndarray
    heralded: np.ndarray
    swapped: np.ndarray
    setting: np.ndarray  # index into ``settings``
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    settings: tuple[Basis, ...] = field(default_factory=lambda: TOMOGRAPHY_BASES)

    def __len__(self) -> int:
        return len(self.trial)

    @classmethod
    def empty(cls, settings: Sequence[Basis] = TOMOGRAPHY_BASES) -> "ClickTable":
        z = np.zeros(0, dtype=np.int64)
        b = np.zeros(0, dtype=bool)
        return cls(z, b, b.copy(), z.copy(), z.copy(), z.copy(), z.copy(), tuple(settings))

    @classmethod
    def concat(cls, tables: Sequence["ClickTable"]) -> "ClickTable":
        tables = list(tables)
        if not tables:
            return cls.empty()
        settings = tables[0].settings
        if any(t.settings != settings for t in tables):
            raise ValueError("cannot concatenate tables with different setting lists")
        cols = {
            name: np.concatenate([getattr(t, name) for t in tables])
            for name in ("trial", "heralded", "swapped", "setting", "d1", "d2", "d3")
        }
        return cls(**cols, settings=settings)

    def basis_of(self, i: int) -> Basis:
        return self.settings[int(self.setting[i])]

    def records(self) -> list[TrialRecord]:
        out = []
        for i in range(len(self)):
            t = int(self.trial[i])
            clicks = tuple(
                ClickRecord(t, det, int(n))
                for det, n in zip(DETECTORS, (self.d1[i], self.d2[i], self.d3[i]))
                if n > 0
            )
            out.append(TrialRecord(t, bool(self.heralded[i]), bool(self.swapped[i]), self.basis_of(i), clicks))
        return out

    @classmethod
    def from_records(cls, records: Iterable[TrialRecord]) -> "ClickTable":
        records = list(records)
        settings = tuple(dict.fromkeys(r.measurement_setting for r in records)) or TOMOGRAPHY_BASES
        index = {b: i for i, b in enumerate(settings)}
        return cls(
            trial=np.array([r.trial_index for r in records], dtype=np.int64),
            heralded=np.array([r.heralded for r in records], dtype=bool),
            swapped=np.array([r.ensembles_swapped for r in records], dtype=bool),
            setting=np.array([index[r.measurement_setting] for r in records], dtype=np.int64),
            d1=np.array([r.count("D1_herald") for r in records], dtype=np.int64),
            d2=np.array([r.count("D2") for r in records], dtype=np.int64),
            d3=np.array([r.count("D3") for r in records], dtype=np.int64),
            settings=settings,
        )

    def select(self, mask: np.ndarray) -> "ClickTable":
        return ClickTable(
            self.trial[mask], self.heralded[mask], self.swapped[mask], self.setting[mask],
            self.d1[mask], self.d2[mask], self.d3[mask], self.settings,
        )

    def port_totals(self, condition: str = "herald") -> dict[Basis, tuple[int, int, int]]:
        """Per analyzer setting: ``(n_plus, n_minus, windows)``.

        ``condition="herald"`` keeps trials with a D1 click; ``"all"`` keeps
        every window (used for background acquisitions).
        """
        if condition == "herald":
            keep = self.d1 > 0
        elif condition == "all":
            keep = np.ones(len(self), dtype=bool)
        else:
            raise ValueError(f"unknown condition {condition!r}")
        out = {}
        for i, basis in enumerate(self.settings):
            m = keep & (self.setting == i)
            out[basis] = (int(self.d2[m].sum()), int(self.d3[m].sum()), int(m.sum()))
        return out

    def write(self, path: str | Path) -> None:
        """Line-delimited record file: header then one CSV line per trial."""
        labels = np.array([b.label for b in self.settings], dtype=object)
        cols = [
            self.trial.astype(str),
            np.where(self.heralded, "1", "0"),
            np.where(self.swapped, "1", "0"),
            labels[self.setting].astype(str) if len(self) else np.zeros(0, dtype=str),
            self.d1.astype(str),
            self.d2.astype(str),
            self.d3.astype(str),
        ]
        with open(path, "w", newline="\n") as fh:
            fh.write(_RECORD_HEADER + "\n")
            for row in zip(*cols):
                fh.write(",".join(row) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "ClickTable":
        with open(path) as fh:
            header = fh.readline().strip()
            if header != _RECORD_HEADER:
                raise ValueError(f"{path}: unexpected header {header!r}")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        if not rows:
            return cls.empty()
        settings = tuple(dict.fromkeys(Basis.parse(r[3]) for r in rows))
        index = {b: i for i, b in enumerate(settings)}
        arr = np.array([[r[0], r[1], r[2], r[4], r[5], r[6]] for r in rows], dtype=np.int64)
        return cls(
            trial=arr[:, 0],
            heralded=arr[:, 1].astype(bool),
            swapped=arr[:, 2].astype(bool),
            setting=np.array([index[Basis.parse(r[3])] for r in rows], dtype=np.int64),
            d1=arr[:, 3],
            d2=arr[:, 4],
            d3=arr[:, 5],
            settings=settings,
        )


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------


def _port_probabilities(rho: np.ndarray, basis: Basis) -> float:
    plus, _ = basis.projectors()
    return float(np.clip(np.trace(rho @ plus).real, 0.0, 1.0))


@dataclass(frozen=True)
class _TrialModel:
    """Per-(setting, swap parity) routing probabilities for one input state."""

    p_signal_plus: np.ndarray  # shape (n_settings, 2)
    p_bg_plus: np.ndarray
    p_herald: float
    detect: float  # probability that one stored excitation gives a detected photon
    bg_detected: float
    dark: float
    p2: float


def _trial_model(state, settings, noise, timing) -> _TrialModel:
    p_sig = np.zeros((len(settings), 2))
    p_bg = np.zeros((len(settings), 2))
    magnon = store(write_map(state), noise, timing) if state is not None else None
    for parity in (0, 1):
        swapped = bool(parity)
        rho_bg = background_density(noise, timing, swapped)
        rho_sig = signal_density(magnon, noise, swapped) if magnon is not None else rho_bg
        for i, basis in enumerate(settings):
            p_sig[i, parity] = _port_probabilities(rho_sig, basis)
            p_bg[i, parity] = _port_probabilities(rho_bg, basis)
    return _TrialModel(
        p_signal_plus=p_sig,
        p_bg_plus=p_bg,
        p_herald=herald_probability(noise),
        detect=noise.epsilon_retrieval * noise.q,
        bg_detected=background_mean(noise) * noise.q,
        dark=noise.dark_rate,
        p2=noise.p2,
    )


def _poisson(u: np.ndarray, mean) -> np.ndarray:
    """Inverse-CDF Poisson draws; the means take only a handful of distinct values."""
    mean = np.broadcast_to(np.asarray(mean, dtype=float), u.shape)
    out = np.zeros(u.shape, dtype=np.int64)
    values, which = np.unique(mean, return_inverse=True)
    which = which.reshape(u.shape)
    for j, m in enumerate(values):
        if m <= 0:
            continue
        sel = which == j
        top = int(m + 12 * math.sqrt(m) + 12)
        cdf = poisson.cdf(np.arange(top + 1), m)
        k = np.searchsorted(cdf, u[sel], side="left")
        tail = k > top
        if tail.any():
            k[tail] = poisson.ppf(u[sel][tail], m).astype(np.int64)
        out[sel] = k
    return out


def _simulate_chunk(idx, key, model: _TrialModel, herald, emission, swap_phase, n_settings):
    def u(slot):
        return streams.uniform(key, idx, slot)

    n = len(idx)
    swapped = ((idx + swap_phase) % 2).astype(bool)
    parity = swapped.astype(np.int64)
    setting = (idx % n_settings).astype(np.int64)

    if herald == "sampled":
        heralded = u(_HERALD) < model.p_herald
    elif herald == "conditioned":
        heralded = np.ones(n, dtype=bool)
    else:
        heralded = np.zeros(n, dtype=bool)

    p_sig = model.p_signal_plus[setting, parity]
    p_bg = model.p_bg_plus[setting, parity]
    d2 = np.zeros(n, dtype=np.int64)
    d3 = np.zeros(n, dtype=np.int64)

    if heralded.any():
        if emission == "fock":
            n_exc = heralded.astype(np.int64)
            if model.p2 > 0:
                n_exc += heralded & (u(_DOUBLE) < model.p2)
            for emit_slot, route_slot, k in ((_EMIT1, _ROUTE1, 1), (_EMIT2, _ROUTE2, 2)):
                if not np.any(n_exc >= k):
                    continue
                detected = (n_exc >= k) & (u(emit_slot) < model.detect)
                to_plus = u(route_slot) < p_sig
                d2 += detected & to_plus
                d3 += detected & ~to_plus
        else:
            mean = np.where(heralded, model.detect, 0.0)
            d2 += _poisson(u(_COH_PLUS), mean * p_sig)
            d3 += _poisson(u(_COH_MINUS), mean * (1 - p_sig))

    if model.bg_detected > 0:
        d2 += _poisson(u(_BG_PLUS), model.bg_detected * p_bg)
        d3 += _poisson(u(_BG_MINUS), model.bg_detected * (1 - p_bg))
    d1 = heralded.astype(np.int64)
    if model.dark > 0:
        d1 += _poisson(u(_DARK1), model.dark)
        d2 += _poisson(u(_DARK2), model.dark)
        d3 += _poisson(u(_DARK3), model.dark)
    return idx.astype(np.int64), heralded, swapped, setting, d1, d2, d3


def simulate(
    state: PolarizationState | None,
    settings: Sequence[Basis | str],
    n_trials: int,
    noise: NoiseParams,
    timing: ProtocolTiming,
    seed: int,
    *,
    stream: int = 0,
    start: int = 0,
    herald: str = "sampled",
    emission: str = "fock",
    swap_phase: int = 0,
    chunk_size: int = 1 << 18,
    workers: int = 1,
) -> ClickTable:
    """Simulate trials ``start .. start + n_trials - 1``.

    Trial ``i`` uses analyzer ``settings[i % len(settings)]`` and has its
    ensembles interchanged when ``i + swap_phase`` is odd. ``herald`` selects
    Bernoulli herald sampling (``"sampled"``), post-selection on a herald
    in every trial (``"conditioned"``), or no write pulse (``"off"``, a
    background-only acquisition). ``emission="coherent"`` replaces the stored
    excitation by a Poissonian field with the same mean photon number.
    ``state=None`` is equivalent to ``herald="off"``.
    """
    if herald not in HERALD_MODES:
        raise ValueError(f"herald must be one of {HERALD_MODES}")
    if emission not in EMISSION_MODES:
        raise ValueError(f"emission must be one of {EMISSION_MODES}")
    if n_trials < 0 or start < 0:
        raise ValueError("n_trials and start must be non-negative")
    settings = tuple(Basis.parse(s) for s in settings)
    if not settings:
        raise ValueError("at least one analyzer setting is required")
    if state is None:
        herald = "off"
    if n_trials == 0:
        return ClickTable.empty(settings)

    model = _trial_model(state, settings, noise, timing)
    key = streams.stream_key(seed, stream)
    bounds = list(range(start, start + n_trials, chunk_size)) + [start + n_trials]
    pieces = [np.arange(a, b, dtype=np.uint64) for a, b in zip(bounds[:-1], bounds[1:])]

    def run(idx):
        return _simulate_chunk(idx, key, model, herald, emission, swap_phase, len(settings))

    if workers > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, pieces))
    else:
        parts = [run(p) for p in pieces]
    cols = [np.concatenate(c) for c in zip(*parts)]
    return ClickTable(*cols, settings=settings)


def run_trial(
    state: PolarizationState,
    setting: Basis | str,
    noise: NoiseParams,
    timing: ProtocolTiming,
    seed: int,
    trial_index: int,
    *,
    stream: int = 0,
    herald: str = "sampled",
    emission: str = "fock",
    swap_phase: int = 0,
) -> TrialRecord:
    """One trial with a fixed analyzer setting, drawn from its own substream."""
    table = simulate(
        state, [setting], 1, noise, timing, seed, stream=stream, start=trial_index,
        herald=herald, emission=emission, swap_phase=swap_phase,
    )
    return table.records()[0]


def run_sequence(plan) -> list[TrialRecord]:
    """Trial records for every input state of a plan, in plan order.

    ``plan`` needs ``states``, ``settings``, ``trials``, ``seed``, ``noise``,
    ``timing`` and ``herald`` attributes (see :class:`magnonmem.plan.ExperimentPlan`).
    Input state ``k`` uses substream ``k``.
    """
    out: list[TrialRecord] = []
    if plan.trials == 0:
        return out
    for k, state in enumerate(plan.states):
        table = simulate(
            state, plan.settings, plan.trials, plan.noise, plan.timing, plan.seed,
            stream=k, herald=plan.herald,
        )
        out.extend(table.records())
    return out


# ---------------------------------------------------------------------------
# expectation values and calibration
# ---------------------------------------------------------------------------


def expected_port_means(
    state: PolarizationState | None,
    basis: Basis,
    noise: NoiseParams,
    timing: ProtocolTiming,
    swapped: bool = False,
    emission: str = "fock",
) -> tuple[float, float]:
    """Mean (D2, D3) counts per heralded trial (or per window if ``state`` is None)."""
    model = _trial_model(state, (basis,), noise, timing)
    parity = int(swapped)
    p_sig = model.p_signal_plus[0, parity]
    p_bg = model.p_bg_plus[0, parity]
    sig = 0.0
    if state is not None:
        sig = model.detect * (1 + noise.p2 if emission == "fock" else 1.0)
    bg = model.bg_detected
    plus = sig * p_sig + bg * p_bg + noise.dark_rate
    minus = sig * (1 - p_sig) + bg * (1 - p_bg) + noise.dark_rate
    return plus, minus


def expected_stokes(state: PolarizationState, noise: NoiseParams, timing: ProtocolTiming) -> np.ndarray:
    """Infinite-statistics Stokes estimate from heralded clicks, averaged over swap parity."""
    s = np.zeros(3)
    for basis in TOMOGRAPHY_BASES:
        plus = minus = 0.0
        for swapped in (False, True):
            a, b = expected_port_means(state, basis, noise, timing, swapped)
            plus += a
            minus += b
        s[basis.stokes_index] = (plus - minus) / (plus + minus)
    return s


def expected_fidelity(state: PolarizationState, noise: NoiseParams, timing: ProtocolTiming) -> float:
    ket = amplitudes(state)
    rho = stokes_matrix(expected_stokes(state, noise, timing))
    return float(np.vdot(ket, rho @ ket).real)


def calibrate_background(
    noise: NoiseParams,
    timing: ProtocolTiming,
    target_fidelity: float = 0.93,
    states: Sequence[PolarizationState] | None = None,
) -> float:
    """``mu_bg`` that brings the mean expected fidelity over ``states`` to the target.

    Defaults to the six fiducials. Raises ``ValueError`` when the target is
    outside what background alone can reach.
    """
    if states is None:
        states = [f.state for f in Fiducial]

    def gap(mu):
        trial = replace(noise, mu_bg=mu)
        return np.mean([expected_fidelity(s, trial, timing) for s in states]) - target_fidelity

    lo, hi = 0.0, 1.0
    if gap(lo) < 0:
        raise ValueError("target fidelity is above the background-free value")
    while gap(hi) > 0:
        hi *= 2
        if hi > 1e6:
            raise ValueError("target fidelity not reachable")
    return float(optimize.brentq(gap, lo, hi, xtol=1e-15, rtol=1e-14))


def expected_g2(noise: NoiseParams, emission: str = "fock") -> float:
    """Heralded g2 behind a balanced splitter, from the click model in closed form."""
    eta = noise.epsilon_retrieval * noise.q
    half_bg = background_mean(noise) * noise.q / 2 + noise.dark_rate
    if emission == "fock":
        weights = ((1 - noise.p2, 1), (noise.p2, 2))
        none_one = sum(w * (1 - eta / 2) ** k for w, k in weights) * np.exp(-half_bg)
        none_both = sum(w * (1 - eta) ** k for w, k in weights) * np.exp(-2 * half_bg)
    else:
        none_one = np.exp(-eta / 2 - half_bg)
        none_both = np.exp(-eta - 2 * half_bg)
    single = 1 - none_one
    both = 1 - 2 * none_one + none_both
    return float(both / single**2)


def calibrate_two_photon(noise: NoiseParams, target_g2: float = 0.24) -> float:
    """``p2`` giving the target heralded g2; 0 when background alone already exceeds it."""
    def gap(p2):
        return expected_g2(replace(noise, p2=p2)) - target_g2

    if gap(0.0) >= 0:
        return 0.0
    if gap(1.0) < 0:
        raise ValueError("target g2 not reachable with p2 <= 1")
    return float(optimize.brentq(gap, 0.0, 1.0, xtol=1e-15))
