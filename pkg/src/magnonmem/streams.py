"""Counter-based uniform variates keyed by (seed, stream, trial, slot).

Every random number used by the simulator is a pure function of its
coordinates, so a trial's outcome does not depend on which other trials are
simulated, in what order, or on how many workers share the run. The mixing
function is the SplitMix64 finalizer applied to an indexed Weyl sequence.
"""

from __future__ import annotations

import numpy as np

#: Independent uniforms reserved per trial.
SLOTS_PER_TRIAL = 16

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_MASK64 = (1 << 64) - 1


def _mix64(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def stream_key(seed: int, stream: int = 0) -> np.uint64:
    """Derive the 64-bit key for one (seed, stream) pair."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    with np.errstate(over="ignore"):
        k = _mix64(np.array([seed & _MASK64], dtype=np.uint64))
        k = _mix64(k ^ np.array([(stream * 0xD1B54A32D192ED03) & _MASK64], dtype=np.uint64))
    return k[0]


def uniforms(key: np.uint64, trials: np.ndarray, slots: int = SLOTS_PER_TRIAL) -> np.ndarray:
    """Open-interval uniforms of shape ``(len(trials), slots)``."""
    trials = np.asarray(trials, dtype=np.uint64)
    counter = trials[:, None] * np.uint64(SLOTS_PER_TRIAL) + np.arange(slots, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = _mix64(key + (counter + np.uint64(1)) * _GAMMA)
    return ((x >> _S11).astype(np.float64) + 0.5) * 2.0**-53


def uniform(key: np.uint64, trials: np.ndarray, slot: int) -> np.ndarray:
    """A single slot of :func:`uniforms`, without computing the others."""
    if not 0 <= slot < SLOTS_PER_TRIAL:
        raise ValueError(f"slot must lie in [0, {SLOTS_PER_TRIAL})")
    trials = np.asarray(trials, dtype=np.uint64)
    counter = trials * np.uint64(SLOTS_PER_TRIAL) + np.uint64(slot)
    with np.errstate(over="ignore"):
        x = _mix64(key + (counter + np.uint64(1)) * _GAMMA)
    return ((x >> _S11).astype(np.float64) + 0.5) * 2.0**-53
