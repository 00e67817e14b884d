"""Slotted multi-user downlink with Markovian Rayleigh fading.

The traffic and the channels do not depend on the scheduler, so an episode's
exogenous randomness (arrivals, distances, fading) is drawn up front from one
RNG stream per user position. This gives paired comparisons between
schedulers for free and lets the clairvoyant ILP benchmark look ahead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import analytics
from .exceptions import ConfigurationError, InfeasibleAllocationError

FEASIBILITY_RTOL = 1e-9
# success test slack: thresholds computed through scalar and vectorised log2
# can differ in the last ulp, which must not decide a user's fate
RATE_RTOL = 1e-12


@dataclass(frozen=True)
class ServiceClass:
    """Traffic class ``(D, L, alpha, p)``.

    ``data_size`` is in bits, ``latency`` in slots.
    """

    data_size: float
    latency: int
    importance: float
    arrival_prob: float
    name: str = ""

    def __post_init__(self):
        if self.latency < 1:
            raise ConfigurationError(f"class {self.name!r}: latency must be >= 1")
        if self.data_size < 0 or self.importance < 0:
            raise ConfigurationError(f"class {self.name!r}: negative D or alpha")
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ConfigurationError(f"class {self.name!r}: p outside [0, 1]")

    @property
    def is_null(self) -> bool:
        return self.data_size == 0 and self.importance == 0


def null_class(classes: Sequence[ServiceClass], latency: int = 1) -> ServiceClass:
    total = sum(c.arrival_prob for c in classes)
    if total > 1.0 + 1e-12:
        raise ConfigurationError(f"arrival probabilities sum to {total} > 1")
    return ServiceClass(0.0, latency, 0.0, max(0.0, 1.0 - total), name="null")


@dataclass(frozen=True)
class ChannelParams:
    """Physical-layer constants.

    Defaults are the LTE-like values: pathloss ``120.9 + 37.6 log10(d)`` dB,
    noise at -149 dBm/Hz and 1 uW/Hz transmit power density.
    """

    rho: float = 0.0
    C_pl: float = 10 ** -12.09
    n_pl: float = 3.76
    noise_psd: float = 10 ** (-149 / 10) * 1e-3
    power: float = 1e-6
    d_min: float = 0.05
    d_max: float = 1.0
    slot_duration: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigurationError("rho must lie in [0, 1]")
        if not self.d_max > self.d_min > 0:
            raise ConfigurationError("need d_max > d_min > 0")
        if self.slot_duration <= 0:
            raise ConfigurationError("slot_duration must be positive")

    def kappa(self, d):
        """Linear SNR per unit transmit power density at distance ``d`` km."""
        return self.C_pl * np.asarray(d, float) ** (-self.n_pl) / self.noise_psd

    def outage_kwargs(self) -> dict:
        return dict(power=self.power, C_pl=self.C_pl, n_pl=self.n_pl,
                    noise_psd=self.noise_psd, slot_duration=self.slot_duration)


# ---------------------------------------------------------------------------
# elementary random processes
# ---------------------------------------------------------------------------

def sample_arrival(classes: Sequence[ServiceClass], rng: np.random.Generator,
                   null: Optional[ServiceClass] = None) -> ServiceClass:
    """Draw the class of a new user; the residual probability is the null class."""
    probs = [c.arrival_prob for c in classes]
    if sum(probs) > 1.0 + 1e-12:
        raise ConfigurationError(f"arrival probabilities sum to {sum(probs)} > 1")
    u = rng.random()
    acc = 0.0
    for c in classes:
        acc += c.arrival_prob
        if u < acc:
            return c
    return null if null is not None else null_class(classes)


def sample_distance(params: ChannelParams, rng: np.random.Generator, size=None):
    """Distance uniform in area over the ring, by inverse CDF."""
    u = rng.random(size)
    return np.sqrt(params.d_min ** 2 + u * (params.d_max ** 2 - params.d_min ** 2))


def complex_normal(rng: np.random.Generator, var: float = 1.0, size=None):
    """Circular complex Gaussian ``CN(0, var)``."""
    if size is None:
        re, im = rng.standard_normal(2)
    else:
        re, im = rng.standard_normal((2,) + tuple(np.atleast_1d(size)))
    return math.sqrt(var / 2.0) * (re + 1j * im)


def step_fading(h_prev, rho: float, rng: np.random.Generator):
    """One step of ``h_t = rho h_{t-1} + Z`` with ``Z ~ CN(0, 1 - rho^2)``."""
    if rho >= 1.0:
        return h_prev
    z = complex_normal(rng, 1.0 - rho * rho, None if np.ndim(h_prev) == 0 else np.shape(h_prev))
    return rho * h_prev + z


def doppler_rho(f_d: float, slot_duration: float) -> float:
    """Time correlation ``J0(2 pi f_d T)``, clamped to ``[0, 1]``."""
    if f_d < 0 or slot_duration <= 0:
        raise ConfigurationError("need f_d >= 0 and slot_duration > 0")
    return float(min(1.0, max(0.0, analytics.bessel_j0(2.0 * math.pi * f_d * slot_duration))))


def spectral_efficiency(kappa, h_abs2, power):
    return np.log2(1.0 + np.asarray(kappa) * np.asarray(h_abs2) * power)


def achievable_rate(w, kappa, h, power, slot_duration: float = 1.0):
    """Bits delivered in one slot: ``T w log2(1 + kappa |h|^2 P)``."""
    return slot_duration * np.asarray(w, float) * spectral_efficiency(kappa, np.abs(h) ** 2, power)


def threshold_bandwidth(data_size, kappa, h_abs2, power, slot_duration: float = 1.0):
    """Smallest bandwidth that delivers ``data_size`` bits this slot.

    Rounded up by at most a few ulps so that ``achievable_rate`` at the
    returned bandwidth is never below ``data_size``. ``inf`` when the channel
    gain is zero.
    """
    data_size = np.asarray(data_size, float)
    eff = spectral_efficiency(kappa, h_abs2, power) * slot_duration
    eff, data_size = np.broadcast_arrays(eff, data_size)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(data_size > 0, data_size / eff, 0.0)
    w = np.where((data_size > 0) & ~(eff > 0), np.inf, w)
    fin = np.isfinite(w)
    short = fin & (np.where(fin, w, 0.0) * eff < data_size)
    for _ in range(4):
        if not np.any(short):
            break
        w = np.where(short, np.nextafter(w, np.inf), w)
        short = fin & (np.where(fin, w, 0.0) * eff < data_size)
    return w if w.ndim else float(w)


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------

@dataclass
class UserState:
    """One user position as seen by the scheduler."""

    service_class: ServiceClass
    kappa: float
    distance: float
    remaining_life: int
    satisfied: bool
    fading: complex
    alloc_history: np.ndarray
    rho: float = 0.0
    user_id: int = -1

    @property
    def active(self) -> bool:
        return not self.service_class.is_null and not self.satisfied


@dataclass
class SlotState:
    """All ``K`` user positions at one slot, stored column-wise."""

    class_idx: np.ndarray
    data_size: np.ndarray
    latency: np.ndarray
    importance: np.ndarray
    kappa: np.ndarray
    distance: np.ndarray
    remaining_life: np.ndarray
    satisfied: np.ndarray
    fading: np.ndarray
    history: np.ndarray
    rho: np.ndarray
    user_id: np.ndarray
    total_bandwidth: float
    slot_index: int
    classes: Tuple[ServiceClass, ...] = ()

    @property
    def K(self) -> int:
        return len(self.class_idx)

    @property
    def is_null(self) -> np.ndarray:
        return self.class_idx == 0

    @property
    def active(self) -> np.ndarray:
        return ~self.is_null & ~self.satisfied

    @property
    def users(self) -> List[UserState]:
        out = []
        for k in range(self.K):
            n = int(self.latency[k] - self.remaining_life[k])
            out.append(UserState(
                service_class=self.classes[self.class_idx[k]] if self.classes else None,
                kappa=float(self.kappa[k]), distance=float(self.distance[k]),
                remaining_life=int(self.remaining_life[k]),
                satisfied=bool(self.satisfied[k]), fading=complex(self.fading[k]),
                alloc_history=self.history[k, :n][::-1].copy(),
                rho=float(self.rho[k]), user_id=int(self.user_id[k])))
        return out

    def copy(self) -> "SlotState":
        return replace(self, **{f: getattr(self, f).copy() for f in
                                ("class_idx", "data_size", "latency", "importance", "kappa",
                                 "distance", "remaining_life", "satisfied", "fading",
                                 "history", "rho", "user_id")})


@dataclass
class Observation:
    """What a scheduler is allowed to see.

    ``fading`` and ``w_threshold`` are ``None`` without CSI. ``history`` holds
    the current user's past bandwidths, most recent first, zero padded.
    """

    features: np.ndarray
    mask: np.ndarray
    data_size: np.ndarray
    latency: np.ndarray
    importance: np.ndarray
    kappa: np.ndarray
    distance: np.ndarray
    remaining_life: np.ndarray
    history: np.ndarray
    user_id: np.ndarray
    class_idx: np.ndarray
    total_bandwidth: float
    csi: str
    fading: Optional[np.ndarray] = None
    w_threshold: Optional[np.ndarray] = None
    oracle: object = None

    @property
    def K(self) -> int:
        return len(self.mask)


@dataclass(frozen=True)
class OracleWindow:
    """Clairvoyant view of ``[t_c, t_c + T - 1]`` for the ILP benchmark.

    ``w_threshold[u, t]`` is ``inf`` outside user ``u``'s lifespan or after it
    has been satisfied.
    """

    horizon: int
    importance: np.ndarray
    w_threshold: np.ndarray
    position: np.ndarray
    user_id: np.ndarray


def _user_factory_ring(params: ChannelParams):
    def factory(rng):
        d = float(sample_distance(params, rng))
        return d, float(params.kappa(d)), params.rho
    return factory


@dataclass
class Scenario:
    """Traffic classes plus radio parameters for one experiment."""

    classes: Tuple[ServiceClass, ...]
    K: int
    W: float
    channel: ChannelParams = field(default_factory=ChannelParams)
    n_slots: int = 100
    seed: int = 0
    null_latency: int = 1
    name: str = ""

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        if self.W < 0:
            raise ConfigurationError("W must be >= 0")
        null_class(self.classes, self.null_latency)

    @property
    def class_table(self) -> Tuple[ServiceClass, ...]:
        """Null class first, then the configured classes."""
        return (null_class(self.classes, self.null_latency),) + self.classes

    @property
    def max_latency(self) -> int:
        return max(c.latency for c in self.class_table)

    def with_(self, **kw) -> "Scenario":
        if "rho" in kw:
            kw["channel"] = replace(kw.get("channel", self.channel), rho=kw.pop("rho"))
        return replace(self, **kw)


class SchedulingEnv:
    """Episode simulator.

    Parameters
    ----------
    scenario : Scenario
    lookahead : int
        Extra slots of exogenous randomness generated past the episode end so
        that clairvoyant schedulers can always see a full window.
    user_factory : callable, optional
        ``factory(rng) -> (distance_km, kappa, rho)`` for each new user.
        Defaults to uniform positions in the ring and the scenario's rho.
    """

    def __init__(self, scenario: Scenario, lookahead: int = 8,
                 user_factory: Optional[Callable] = None):
        self.scenario = scenario
        self.lookahead = lookahead
        self.table = scenario.class_table
        self.user_factory = user_factory or _user_factory_ring(scenario.channel)
        self.L_max = scenario.max_latency
        self._feature_scales()
        self.state: Optional[SlotState] = None

    # -- exogenous process -------------------------------------------------

    def _generate(self, seed):
        sc = self.scenario
        K, n = sc.K, sc.n_slots + self.lookahead + 1
        streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(K)]
        cls = np.zeros((n, K), dtype=int)
        life = np.zeros((n, K), dtype=int)
        uid = np.zeros((n, K), dtype=int)
        dist = np.zeros((n, K))
        kap = np.zeros((n, K))
        rho = np.zeros((n, K))
        h = np.zeros((n, K), dtype=complex)
        index = {c: i for i, c in enumerate(self.table)}
        next_id = 0
        for k, rng in enumerate(streams):
            remaining = 0
            for t in range(n):
                if remaining == 0:
                    c = sample_arrival(sc.classes, rng, null=self.table[0])
                    d, kappa, r = self.user_factory(rng)
                    hk = complex_normal(rng)
                    remaining = c.latency
                    ci = index[c]
                    next_id += 1
                    cur = (ci, d, kappa, r, next_id)
                else:
                    hk = step_fading(hk, cur[3], rng)
                cls[t, k], dist[t, k], kap[t, k], rho[t, k], uid[t, k] = cur
                life[t, k] = remaining
                h[t, k] = hk
                remaining -= 1
        self._exo = dict(cls=cls, life=life, uid=uid, dist=dist, kappa=kap, rho=rho, h=h)

    # -- episode API -------------------------------------------------------

    def reset(self, seed: Optional[int] = None) -> SlotState:
        seed = self.scenario.seed if seed is None else seed
        self._generate(seed)
        self.t = 0
        self._satisfied_ids = set()
        self.departed = []  # (class_idx, satisfied) per finished user
        self.state = self._build_state(0, np.zeros((self.scenario.K, self.L_max)),
                                       np.zeros(self.scenario.K, bool))
        return self.state

    def _build_state(self, t, history, satisfied) -> SlotState:
        e = self._exo
        ci = e["cls"][t]
        tab = self.table
        return SlotState(
            class_idx=ci.copy(),
            data_size=np.array([tab[i].data_size for i in ci]),
            latency=np.array([tab[i].latency for i in ci]),
            importance=np.array([tab[i].importance for i in ci]),
            kappa=e["kappa"][t].copy(), distance=e["dist"][t].copy(),
            remaining_life=e["life"][t].copy(), satisfied=satisfied,
            fading=e["h"][t].copy(), history=history, rho=e["rho"][t].copy(),
            user_id=e["uid"][t].copy(), total_bandwidth=self.scenario.W,
            slot_index=t, classes=tab)

    @property
    def done(self) -> bool:
        return self.t >= self.scenario.n_slots

    def check_action(self, w) -> np.ndarray:
        w = np.asarray(w, float)
        W = self.scenario.W
        if w.shape != (self.scenario.K,):
            raise InfeasibleAllocationError(f"allocation shape {w.shape} != ({self.scenario.K},)")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InfeasibleAllocationError("allocation has negative or non-finite entries")
        if w.sum() > W * (1 + FEASIBILITY_RTOL) + 1e-12:
            raise InfeasibleAllocationError(f"sum(w)={w.sum():.6g} exceeds W={W:.6g}")
        return w

    def step(self, w):
        """Apply one allocation.

        Returns ``(next_state, reward, success)`` where ``success`` flags the
        users satisfied in this slot.
        """
        w = self.check_action(w)
        s = self.state
        ch = self.scenario.channel
        bits = achievable_rate(w, s.kappa, s.fading, ch.power, ch.slot_duration)
        success = s.active & (bits >= s.data_size * (1.0 - RATE_RTOL))
        reward = float(np.sum(s.importance[success]))
        satisfied = s.satisfied | success
        history = np.roll(s.history, 1, axis=1)
        history[:, 0] = w
        t1 = self.t + 1
        new_user = self._exo["uid"][t1] != s.user_id
        for k in np.flatnonzero(new_user):
            if s.class_idx[k] != 0:
                self.departed.append((int(s.class_idx[k]), bool(satisfied[k])))
        history[new_user] = 0.0
        satisfied = np.where(new_user, False, satisfied)
        self.t = t1
        self.state = self._build_state(t1, history, satisfied)
        return self.state, reward, success

    # -- views -------------------------------------------------------------

    def _feature_scales(self):
        sc = self.scenario
        ch = sc.channel
        self._d_scale = max(c.data_size for c in self.table) or 1.0
        self._a_scale = max(c.importance for c in self.table) or 1.0
        self._log_kp_hi = math.log10(float(ch.kappa(ch.d_min)) * ch.power)

    @property
    def n_features(self) -> dict:
        return {"full": 7, "none": 5 + self.L_max}

    def observe(self, csi: str = "full", state: Optional[SlotState] = None) -> Observation:
        """Scheduler view; ``csi='none'`` hides the fading coefficients."""
        if csi not in ("full", "none"):
            raise ValueError(f"unknown csi mode {csi!r}")
        s = self.state if state is None else state
        ch = self.scenario.channel
        W = self.scenario.W
        mask = s.active
        base = [s.data_size / self._d_scale,
                s.latency / self.L_max,
                s.importance / self._a_scale,
                np.log10(np.maximum(s.kappa * ch.power, 1e-12)) / max(self._log_kp_hi, 1.0),
                s.remaining_life / self.L_max]
        fading = wth = None
        if csi == "full":
            h2 = np.abs(s.fading) ** 2
            wth = threshold_bandwidth(s.data_size, s.kappa, h2, ch.power, ch.slot_duration)
            wth = np.where(mask, wth, 0.0)
            fading = s.fading.copy()
            rel = np.minimum(wth / W, 2.0) if W > 0 else np.where(wth > 0, 2.0, 0.0)
            cols = base + [h2, rel]
            feats = np.stack(cols, axis=1)
        else:
            feats = np.concatenate([np.stack(base, axis=1),
                                    s.history / W if W > 0 else s.history], axis=1)
        feats = np.where(mask[:, None], feats, 0.0)
        return Observation(
            features=feats, mask=mask, data_size=s.data_size.copy(),
            latency=s.latency.copy(), importance=s.importance.copy(),
            kappa=s.kappa.copy(), distance=s.distance.copy(),
            remaining_life=s.remaining_life.copy(), history=s.history.copy(),
            user_id=s.user_id.copy(), class_idx=s.class_idx.copy(),
            total_bandwidth=W, csi=csi, fading=fading, w_threshold=wth)

    def oracle_window(self, horizon: int) -> OracleWindow:
        """Future users, channels and thresholds over the next ``horizon`` slots."""
        if horizon > self.lookahead + 1:
            raise ValueError("horizon exceeds generated lookahead")
        e = self._exo
        ch = self.scenario.channel
        s = self.state
        t0 = self.t
        ids: dict = {}
        rows = []
        for dt in range(horizon):
            t = t0 + dt
            for k in range(self.scenario.K):
                u = int(e["uid"][t, k])
                ci = int(e["cls"][t, k])
                if ci == 0:
                    continue
                if dt == 0 and s.satisfied[k]:
                    continue
                if u not in ids:
                    if dt > 0 and u == int(s.user_id[k]) and s.satisfied[k]:
                        continue
                    ids[u] = len(rows)
                    rows.append((k, u, self.table[ci]))
        n = len(rows)
        wth = np.full((n, horizon), np.inf)
        for r, (k, u, c) in enumerate(rows):
            for dt in range(horizon):
                t = t0 + dt
                if int(e["uid"][t, k]) != u:
                    continue
                wth[r, dt] = threshold_bandwidth(c.data_size, e["kappa"][t, k],
                                                 abs(e["h"][t, k]) ** 2, ch.power,
                                                 ch.slot_duration)
        return OracleWindow(
            horizon=horizon,
            importance=np.array([c.importance for _, _, c in rows]),
            w_threshold=wth,
            position=np.array([k for k, _, _ in rows], dtype=int),
            user_id=np.array([u for _, u, _ in rows], dtype=int))
