"""Exclusion dynamics driven by the stirring (Harris) construction.

One event stream drives two representations at once: the occupation numbers, which swap
across a ringing bond, and the stirring labels, which swap unconditionally.  Because both
see the same rings, the coupling identities between them hold path by path and are
checked exactly rather than in distribution.

Observables at a checkpoint ``t``:

* ``J_cross``   signed number of particle jumps across bond (0, 1)
* ``J_stir``    the same flux read off the label permutation and the initial occupation
* ``K_plus``    labels that started at sites <= 0 and sit at sites > 0
* ``K_minus``   labels that started at sites > 0 and sit at sites <= 0
* ``compensator``  (1/2) * integral of eta_s(0) - eta_s(1), exact between events
* ``M``         J_cross - compensator
* ``X``, ``Y_J``  tagged particle position and the J-th particle of the ordered labelling
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .lattice import Configuration, EventStream, Window

NO_TAG = np.iinfo(np.int64).min
MISSING = np.iinfo(np.int64).min + 1

# per-checkpoint record produced by the kernel
RECORD_DTYPE = np.dtype([
    ("t", np.float64),
    ("J_cross", np.int64),
    ("J_stir", np.int64),
    ("K_plus", np.int64),
    ("K_minus", np.int64),
    ("A_plus", np.int64),
    ("A_minus", np.int64),
    ("compensator", np.float64),
    ("M", np.float64),
    ("X", np.int64),
    ("Y_J", np.int64),
    ("violations", np.int64),
])


@dataclass
class StirringState:
    """Label permutation of the stirring process, as two mutually inverse arrays."""

    label_at_site: np.ndarray
    site_of_label: np.ndarray
    window: Window

    @classmethod
    def identity(cls, window: Window) -> "StirringState":
        ident = np.arange(window.n_sites, dtype=np.int64)
        return cls(ident, ident.copy(), window)

    def position(self, label_site: int) -> int:
        """z(i, t): current site of the label that started at site ``label_site``."""
        return int(self.site_of_label[label_site - self.window.left]) + self.window.left

    def is_consistent(self) -> bool:
        return bool(np.array_equal(self.site_of_label[self.label_at_site],
                                   np.arange(len(self.label_at_site))))


@dataclass
class FluxRecord:
    t: float = 0.0
    J_cross: int = 0
    J_stir: int = 0
    K_plus: int = 0
    K_minus: int = 0
    compensator: float = 0.0
    M: float = 0.0


@dataclass
class TaggedRecord:
    t: float
    X: int
    J: int
    Y_J: int


@dataclass
class FluxDecomposition:
    K: int
    A: np.ndarray


# ---------------------------------------------------------------------------
# kernels

@nb.njit(cache=True, inline="always")
def _apply(occ, las, sol, b, ob, flux, tag):
    """Apply a ring at bond ``b``; returns the updated (J_cross, tagged index)."""
    a = occ[b]
    c = occ[b + 1]
    if b == ob:
        flux += a - c
    if tag == b:
        if c == 0:
            tag = b + 1
    elif tag == b + 1:
        if a == 0:
            tag = b
    occ[b] = c
    occ[b + 1] = a
    la = las[b]
    lc = las[b + 1]
    las[b] = lc
    las[b + 1] = la
    sol[la] = b + 1
    sol[lc] = b
    return flux, tag


@nb.njit(cache=True)
def _advance(occ, las, sol, times, bonds, cursor, t_stop, ob, state_i, state_f):
    """Process events with time <= t_stop starting at ``cursor``; returns the new cursor.

    state_i = [J_cross, tagged index], state_f = [compensator, time of its last update].
    The integrand eta(0) - eta(1) only changes on rings at bonds ob - 1, ob, ob + 1.
    """
    n = times.shape[0]
    o = ob
    flux = state_i[0]
    tag = state_i[1]
    comp = state_f[0]
    last = state_f[1]
    while cursor < n:
        t = times[cursor]
        if t > t_stop:
            break
        b = bonds[cursor]
        if b >= o - 1 and b <= o + 1:
            comp += 0.5 * (t - last) * (occ[o] - occ[o + 1])
            last = t
        flux, tag = _apply(occ, las, sol, b, ob, flux, tag)
        cursor += 1
    state_i[0] = flux
    state_i[1] = tag
    state_f[0] = comp
    state_f[1] = last
    return cursor


@nb.njit(cache=True)
def _flush(occ, o, t, state_f):
    state_f[0] += 0.5 * (t - state_f[1]) * (occ[o] - occ[o + 1])
    state_f[1] = t


@nb.njit(cache=True)
def _flux_by_stirring(init, sol, o):
    j = 0
    for i in range(sol.shape[0]):
        if i <= o:
            if sol[i] > o:
                j += init[i]
        elif sol[i] <= o:
            j -= init[i]
    return j


@nb.njit(cache=True)
def _crossing_counts(sol, o):
    kp = 0
    km = 0
    for i in range(sol.shape[0]):
        if i <= o:
            if sol[i] > o:
                kp += 1
        elif sol[i] <= o:
            km += 1
    return kp, km


@nb.njit(cache=True)
def _decompose(init, sol, o):
    """A(k) = eta(i_k) - eta(j_k) pairing the k-th left and k-th right crossing labels."""
    n = sol.shape[0]
    lefts = np.empty(n, np.int64)
    rights = np.empty(n, np.int64)
    nl = 0
    nr = 0
    for i in range(n):
        if i <= o:
            if sol[i] > o:
                lefts[nl] = i
                nl += 1
        elif sol[i] <= o:
            rights[nr] = i
            nr += 1
    k = min(nl, nr)
    a = np.empty(k, np.int64)
    for m in range(k):
        a[m] = init[lefts[m]] - init[rights[m]]
    return a, nl, nr


@nb.njit(cache=True)
def _ordered_particle(occ, o, k):
    """Y_k: k >= 1 counts particles at sites >= 1 rightwards; k <= 0 counts from site 0 leftwards."""
    n = occ.shape[0]
    if k >= 1:
        seen = 0
        for x in range(o + 1, n):
            if occ[x]:
                seen += 1
                if seen == k:
                    return x
    else:
        seen = 0
        for x in range(o, -1, -1):
            if occ[x]:
                seen += 1
                if seen == 1 - k:
                    return x
    return -1


@nb.njit(cache=True)
def _measure(init, occ, las, sol, o, t, state_i, state_f, out, k):
    rec = out[k]
    rec["t"] = t
    jc = state_i[0]
    rec["J_cross"] = jc
    js = _flux_by_stirring(init, sol, o)
    rec["J_stir"] = js
    kp, km = _crossing_counts(sol, o)
    rec["K_plus"] = kp
    rec["K_minus"] = km
    a, nl, nr = _decompose(init, sol, o)
    ap = 0
    am = 0
    for m in range(a.shape[0]):
        if a[m] > 0:
            ap += 1
        elif a[m] < 0:
            am += 1
    rec["A_plus"] = ap
    rec["A_minus"] = am
    rec["compensator"] = state_f[0]
    rec["M"] = jc - state_f[0]
    bad = 0
    if js != jc:
        bad += 1
    if kp != km or nl != nr:
        bad += 1
    if ap - am != jc:
        bad += 1
    for x in range(occ.shape[0]):
        if occ[x] != init[las[x]]:
            bad += 1
            break
    for x in range(occ.shape[0]):
        if sol[las[x]] != x:
            bad += 1
            break
    if state_i[1] != NO_TAG:
        y = _ordered_particle(occ, o, jc)
        rec["X"] = state_i[1] - o
        rec["Y_J"] = y - o if y >= 0 else MISSING
        if y != state_i[1]:
            bad += 1
    else:
        rec["X"] = NO_TAG
        rec["Y_J"] = NO_TAG
    rec["violations"] = bad


# ---------------------------------------------------------------------------
# public operations

def _check_bond(window: Window, bond: int) -> None:
    if not 0 <= bond < window.n_bonds:
        raise IndexError(f"bond {bond} outside window with {window.n_bonds} bonds")


def step(config: Configuration, stir: StirringState, event: tuple[float, int],
         counters: FluxRecord) -> FluxRecord:
    """Apply one ring to both representations in place.

    Labels always swap; occupations swap (trivially when equal).  A ring at (0, 1)
    moves ``counters.J_cross`` by +1 for a (1, 0) pair and -1 for a (0, 1) pair.
    """
    t, bond = event
    window = config.window
    _check_bond(window, bond)
    flux, _ = _apply(config.occ, stir.label_at_site, stir.site_of_label, bond,
                     window.origin_bond, counters.J_cross, NO_TAG)
    counters.J_cross = int(flux)
    counters.t = t
    return counters


def flux_by_stirring(initial: Configuration, stir: StirringState) -> int:
    """Flux across (0, 1) from labels: crossings right weighted by the initial occupation."""
    return int(_flux_by_stirring(initial.occ, stir.site_of_label, initial.window.origin))


def crossing_counts(stir: StirringState) -> tuple[int, int]:
    kp, km = _crossing_counts(stir.site_of_label, stir.window.origin)
    return int(kp), int(km)


def decompose_flux(initial: Configuration, stir: StirringState) -> FluxDecomposition:
    a, nl, nr = _decompose(initial.occ, stir.site_of_label, initial.window.origin)
    if nl != nr:
        raise RuntimeError(f"stirring state lost a label: {nl} right crossings, {nr} left")
    return FluxDecomposition(K=int(nl), A=a.astype(np.int8))


def ordered_particle(config: Configuration, k: int) -> int:
    """Position Y_k of the k-th particle: k >= 1 strictly right of 1/2, k <= 0 at or left of 0."""
    y = _ordered_particle(config.occ, config.window.origin, k)
    if y < 0:
        raise ValueError(f"no particle with order index {k} inside the window")
    return int(y) + config.window.left


def spacing_check(config: Configuration, n: int | None = None) -> float:
    """Y_n / n, which tends to 1/rho for a product configuration with density rho."""
    if n is None:
        n = config.window.right // 4
    if n < 1:
        raise ValueError("n must be positive")
    return ordered_particle(config, n) / n


class Path:
    """One replica: both representations plus running counters, advanced through an event stream."""

    def __init__(self, initial: Configuration, stream: EventStream, track_tag: bool = False):
        window = initial.window
        if stream.bond_count != window.n_bonds:
            raise ValueError("stream bond count does not match the window")
        self.window = window
        self.initial = initial
        self.stream = stream
        self.config = initial.copy()
        self.stir = StirringState.identity(window)
        o = window.origin
        if track_tag and initial.occ[o] != 1:
            raise ValueError("tagged run needs site 0 occupied at time 0")
        self.state_i = np.array([0, o if track_tag else NO_TAG], dtype=np.int64)
        self.state_f = np.zeros(2)
        self.t = 0.0

    def advance(self, t: float) -> None:
        if t < self.t:
            raise ValueError("cannot advance backwards in time")
        s = self.stream
        o = self.window.origin
        while True:
            if s.cursor >= len(s.times):
                s.refill()
            s.cursor = _advance(self.config.occ, self.stir.label_at_site, self.stir.site_of_label,
                                s.times, s.bonds, s.cursor, t, o, self.state_i, self.state_f)
            if s.cursor < len(s.times):
                break
        _flush(self.config.occ, o, t, self.state_f)
        self.t = t

    def measure(self, out: np.ndarray, k: int = 0) -> None:
        _measure(self.initial.occ, self.config.occ, self.stir.label_at_site,
                 self.stir.site_of_label, self.window.origin, self.t,
                 self.state_i, self.state_f, out, k)


def _check_checkpoints(checkpoints, window: Window) -> np.ndarray:
    cps = np.asarray(checkpoints, dtype=np.float64)
    if cps.ndim != 1:
        raise ValueError("checkpoints must be a flat sequence")
    if np.any(np.diff(cps) < 0):
        raise ValueError("checkpoints must be sorted")
    if len(cps) and (cps[0] < 0 or cps[-1] > window.t_max):
        raise ValueError(f"checkpoints must lie in [0, {window.t_max}]")
    return cps


def trajectory(initial: Configuration, stream: EventStream, checkpoints,
               track_tag: bool = False) -> np.ndarray:
    """Run one replica and return a ``RECORD_DTYPE`` array, one entry per checkpoint."""
    cps = _check_checkpoints(checkpoints, initial.window)
    path = Path(initial, stream, track_tag)
    out = np.zeros(len(cps), dtype=RECORD_DTYPE)
    for k, t in enumerate(cps):
        path.advance(t)
        path.measure(out, k)
    return out


def run_to(initial: Configuration, stream: EventStream, checkpoints) -> list[FluxRecord]:
    recs = trajectory(initial, stream, checkpoints)
    return [FluxRecord(t=float(r["t"]), J_cross=int(r["J_cross"]), J_stir=int(r["J_stir"]),
                       K_plus=int(r["K_plus"]), K_minus=int(r["K_minus"]),
                       compensator=float(r["compensator"]), M=float(r["M"]))
            for r in recs]


def tagged_track(initial: Configuration, stream: EventStream, checkpoints) -> list[TaggedRecord]:
    """Follow the particle that starts at site 0 (which must be occupied)."""
    recs = trajectory(initial, stream, checkpoints, track_tag=True)
    return [TaggedRecord(t=float(r["t"]), X=int(r["X"]), J=int(r["J_cross"]), Y_J=int(r["Y_J"]))
            for r in recs]
