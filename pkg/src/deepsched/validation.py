"""Input checks shared by schedulers and the benchmark runner."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_is_fitted  # noqa: F401  (re-export)

from .env import FEASIBILITY_RTOL
from .exceptions import InfeasibleAllocationError

CSI_MODES = ("full", "none")


def check_csi_mode(mode: str) -> str:
    if mode not in CSI_MODES:
        raise ValueError(f"csi mode must be one of {CSI_MODES}, got {mode!r}")
    return mode


def check_observation(obs, csi: str):
    """Make sure a scheduler gets the view it was built for."""
    check_csi_mode(csi)
    if csi == "full" and obs.w_threshold is None:
        raise ValueError("this scheduler needs full CSI; observe the env with csi='full'")
    return obs


def check_allocation(w, W: float, K: int = None) -> np.ndarray:
    """Validate ``w >= 0`` and ``sum(w) <= W`` (relative slack ``FEASIBILITY_RTOL``)."""
    w = np.asarray(w, float)
    if K is not None and w.shape != (K,):
        raise InfeasibleAllocationError(f"allocation shape {w.shape} != ({K},)")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InfeasibleAllocationError("allocation has negative or non-finite entries")
    if w.sum() > W * (1 + FEASIBILITY_RTOL) + 1e-12:
        raise InfeasibleAllocationError(f"sum(w)={w.sum():.6g} exceeds W={W:.6g}")
    return w


def clip_to_budget(w, W: float) -> np.ndarray:
    """Rescale a non-negative vector whose sum overshoots ``W`` by rounding."""
    w = np.maximum(np.asarray(w, float), 0.0)
    total = w.sum()
    if total > W > 0:
        w = w * (W / total)
    elif W <= 0:
        w = np.zeros_like(w)
    return w


def as_generator(random_state) -> np.random.Generator:
    """``None``/int/``Generator`` to a numpy ``Generator``."""
    return np.random.default_rng(random_state)
