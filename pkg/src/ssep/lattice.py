"""Finite lattice window, product-measure initial conditions and the bond-clock event stream.

Sites are stored in arrays indexed by ``site - window.left``; bond ``b`` (``0 <= b < B``)
joins sites ``left + b`` and ``left + b + 1``.  The window has reflecting ends: there is
no bond past either boundary, so particle number is conserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_TAIL_BOUND = 1e-12
BLOCK_SIZE = 1 << 15


def check_density(rho: float) -> float:
    rho = float(rho)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {rho}")
    return rho


def poisson_upper_tail(mean: float, k: int) -> float:
    """Chernoff bound on P(Poisson(mean) >= k); returns 1.0 when k <= mean."""
    if k <= mean:
        return 1.0
    if mean == 0.0:
        return 0.0
    return math.exp(-mean + k - k * math.log(k / mean))


@dataclass(frozen=True)
class Window:
    left: int
    right: int
    t_max: float
    tail_bound: float = DEFAULT_TAIL_BOUND

    def __post_init__(self):
        if not self.left <= 0 < 1 <= self.right:
            raise ValueError(f"window [{self.left}, {self.right}] must contain sites 0 and 1")

    @property
    def n_sites(self) -> int:
        return self.right - self.left + 1

    @property
    def n_bonds(self) -> int:
        return self.right - self.left

    @property
    def origin(self) -> int:
        """Array index of site 0."""
        return -self.left

    @property
    def origin_bond(self) -> int:
        """Bond index of (0, 1)."""
        return -self.left

    def path_escape_bound(self) -> float:
        """Bound on the chance that a signal from either boundary reaches bond (0, 1) by t_max.

        A signal crossing ``d`` bonds needs ``d`` clock rings in sequence along a directed
        path; the ring count along one path is Poisson(t_max / 2).
        """
        d = min(self.origin_bond, self.n_bonds - 1 - self.origin_bond)
        return 2.0 * poisson_upper_tail(self.t_max / 2.0, d)


def light_cone_half_width(t_max: float) -> int:
    return math.ceil(5.0 * t_max + 10.0 * math.sqrt(t_max) + 20.0)


def build_window(t_max: float, tail_bound: float = DEFAULT_TAIL_BOUND) -> Window:
    """Symmetric window around bond (0, 1) large enough for a run up to ``t_max``.

    The half-width is ``ceil(5 t + 10 sqrt(t) + 20)``, enlarged if needed until the
    Chernoff bound on a boundary signal reaching the origin bond is below ``tail_bound``.
    """
    t_max = float(t_max)
    if not t_max >= 0.0 or math.isinf(t_max):
        raise ValueError(f"t_max must be a finite non-negative time, got {t_max}")
    if not 0.0 < tail_bound < 1.0:
        raise ValueError(f"tail_bound must lie in (0, 1), got {tail_bound}")
    half = light_cone_half_width(t_max)
    while 2.0 * poisson_upper_tail(t_max / 2.0, half) >= tail_bound:
        half += max(1, half // 8)
    return Window(left=-half, right=half + 1, t_max=t_max, tail_bound=tail_bound)


@dataclass
class Configuration:
    """0/1 occupation numbers on the sites of ``window``."""

    occ: np.ndarray
    window: Window

    def __post_init__(self):
        self.occ = np.ascontiguousarray(self.occ, dtype=np.int8)
        if self.occ.shape != (self.window.n_sites,):
            raise ValueError("occupation array does not match the window")

    def __getitem__(self, site: int) -> int:
        if not self.window.left <= site <= self.window.right:
            raise IndexError(f"site {site} outside window")
        return int(self.occ[site - self.window.left])

    @property
    def n_particles(self) -> int:
        return int(self.occ.sum())

    def copy(self) -> "Configuration":
        return Configuration(self.occ.copy(), self.window)

    @classmethod
    def from_sites(cls, window: Window, sites) -> "Configuration":
        occ = np.zeros(window.n_sites, dtype=np.int8)
        for s in sites:
            occ[s - window.left] = 1
        return cls(occ, window)


class EventStream:
    """Reproducible stream of bond-clock rings for one replica.

    All ``B`` bonds carry independent rate-1/2 clocks.  By superposition the rings form a
    single Poisson process of rate ``B / 2`` with the ringing bond uniform and independent
    of the times, which is how they are drawn here.

    ``(seed, replica_id)`` selects a ``SeedSequence`` child; its two grandchildren drive the
    event sequence and the auxiliary draws (initial conditions, jitter), so the event
    sequence does not depend on how many auxiliary draws were made.  Events are generated in
    fixed blocks of ``BLOCK_SIZE``.
    """

    def __init__(self, seed: int, replica_id: int, bond_count: int, substream: int = 0):
        if seed < 0 or replica_id < 0:
            raise ValueError("seed and replica_id must be non-negative")
        if bond_count < 1:
            raise ValueError("need at least one bond")
        self.seed = int(seed)
        self.replica_id = int(replica_id)
        self.bond_count = int(bond_count)
        self.clock = 0.0
        key = (self.replica_id,) if substream == 0 else (self.replica_id, substream)
        events_ss, aux_ss = np.random.SeedSequence(self.seed, spawn_key=key).spawn(2)
        self._rng = np.random.Generator(np.random.PCG64(events_ss))
        self.aux = np.random.Generator(np.random.PCG64(aux_ss))
        self._rate = bond_count / 2.0
        self.times = np.empty(0)
        self.bonds = np.empty(0, dtype=np.int64)
        self.cursor = 0

    def refill(self) -> None:
        """Replace the current block with the next ``BLOCK_SIZE`` events."""
        times = self._rng.standard_exponential(BLOCK_SIZE)
        np.cumsum(times, out=times)
        times *= 1.0 / self._rate
        times += self.clock
        if times[0] <= self.clock or np.any(times[1:] <= times[:-1]):
            # a zero gap, or one lost to rounding at a large clock value
            prev = self.clock
            for i in range(BLOCK_SIZE):
                if times[i] <= prev:
                    times[i] = np.nextafter(prev, np.inf)
                prev = times[i]
        self.times = times
        self.bonds = self._rng.integers(0, self.bond_count, BLOCK_SIZE, dtype=np.int64)
        self.cursor = 0
        self.clock = float(times[-1])

    def next_event(self) -> tuple[float, int]:
        if self.cursor >= len(self.times):
            self.refill()
        i = self.cursor
        self.cursor += 1
        return float(self.times[i]), int(self.bonds[i])


def sample_initial(rho: float, window: Window, stream: EventStream,
                   tag_origin: bool = False) -> Configuration:
    """Bernoulli(rho) product configuration on ``window``.

    With ``tag_origin`` the origin is forced occupied (Palm measure), which is the initial
    law used when a particle is tagged at site 0.
    """
    rho = check_density(rho)
    occ = (stream.aux.random(window.n_sites) < rho).astype(np.int8)
    if tag_origin:
        occ[window.origin] = 1
    return Configuration(occ, window)


class WidenedStream:
    """Rings on a window widened by ``extra`` sites on each side, sharing randomness with ``inner``.

    The inner stream supplies the rings of the original bonds (shifted by ``extra``) and an
    independent substream supplies the rings of the ``2 * extra`` new bonds.  The
    superposition is again a rate-1/2 clock on every bond, so the widened run has the
    correct law while agreeing with the inner run ring for ring on the shared bonds.
    """

    def __init__(self, inner: EventStream, extra: int):
        self.inner = inner
        self.extra = int(extra)
        self.outer = EventStream(inner.seed, inner.replica_id, 2 * self.extra, substream=1)
        self.bond_count = inner.bond_count + 2 * self.extra
        self.aux = self.outer.aux
        self.times = np.empty(0)
        self.bonds = np.empty(0, dtype=np.int64)
        self.cursor = 0
        self._pending = [(np.empty(0), np.empty(0, dtype=np.int64))] * 2

    def _take(self, which: int) -> tuple[np.ndarray, np.ndarray]:
        times, bonds = self._pending[which]
        if len(times) == 0:
            src = self.inner if which == 0 else self.outer
            src.refill()
            times, bonds = src.times, src.bonds
            if which == 0:
                bonds = bonds + self.extra
            else:
                bonds = np.where(bonds < self.extra, bonds,
                                 bonds + self.inner.bond_count)
        return times, bonds

    def refill(self) -> None:
        (ti, bi), (to, bo) = self._take(0), self._take(1)
        cut = min(ti[-1], to[-1])
        ni = np.searchsorted(ti, cut, side="right")
        no = np.searchsorted(to, cut, side="right")
        self._pending = [(ti[ni:], bi[ni:]), (to[no:], bo[no:])]
        times = np.concatenate([ti[:ni], to[:no]])
        order = np.argsort(times, kind="stable")
        self.times = times[order]
        self.bonds = np.concatenate([bi[:ni], bo[:no]])[order]
        self.cursor = 0

    def next_event(self) -> tuple[float, int]:
        if self.cursor >= len(self.times):
            self.refill()
        i = self.cursor
        self.cursor += 1
        return float(self.times[i]), int(self.bonds[i])


def widen_window(window: Window, extra: int) -> Window:
    return Window(window.left - extra, window.right + extra, window.t_max, window.tail_bound)


def widen_configuration(config: Configuration, stream: WidenedStream,
                        rho: float) -> Configuration:
    """Embed ``config`` in the widened window with fresh Bernoulli(rho) sites outside it."""
    window = widen_window(config.window, stream.extra)
    occ = (stream.aux.random(window.n_sites) < check_density(rho)).astype(np.int8)
    occ[stream.extra:stream.extra + config.window.n_sites] = config.occ
    return Configuration(occ, window)
