"""Exact finite-time predictions from the rate-1 continuous-time symmetric random walk.

The transition law p_t(x) = P(Z_t = x), Z_0 = 0, solves

    dp/dt (x) = p(x-1)/2 + p(x+1)/2 - p(x)

and is integrated here with classical RK4 on |x| <= M.  The occupation time of the
origin R_t = int_0^t p_s(0) ds rides along as an extra component of the same linear
system, so it is integrated to the same order.

From these: E K(t) = E(Z_t)^+ (mean number of stirring labels crossing 1/2), the
stationary flux variance rho (1 - rho) R_t, and its large-t constants.

``bessel_transition`` is an independent backend, p_t(x) = exp(-t) I_|x|(t) summed as a
power series, and ``series_local_time`` uses R_t = t (p_t(0) + p_t(1)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

from .lattice import check_density

DEFAULT_DT = 0.005
MASS_TOLERANCE = 1e-10
TRUNCATION_TAIL = 1e-16


class TruncationError(RuntimeError):
    """The walk leaked more than ``MASS_TOLERANCE`` probability through |x| = M."""


@dataclass
class ExactKernel:
    p: np.ndarray  # p[M + x] = P(Z_t = x), -M <= x <= M
    t: float
    local_time: float
    M: int
    dt: float

    def __call__(self, x: int) -> float:
        if abs(x) > self.M:
            return 0.0
        return float(self.p[self.M + x])

    @property
    def mass(self) -> float:
        return math.fsum(self.p)

    @property
    def positive_part(self) -> float:
        """E(Z_t)^+."""
        x = np.arange(1, self.M + 1)
        return float(np.dot(x, self.p[self.M + 1:]))


@dataclass(frozen=True)
class AsymptoticConstants:
    sigma2: float
    sigma_bar2: float


def walk_tail_radius(t: float, tail: float = TRUNCATION_TAIL) -> int:
    """Smallest m with the Chernoff bound on P(|Z_t| >= m) below ``tail``.

    P(Z_t >= m) <= exp(t (cosh a - 1) - a m), optimised at sinh a = m / t.
    """
    m = 1
    while True:
        if t == 0:
            return m
        a = math.asinh(m / t)
        if math.log(2.0) + t * (math.cosh(a) - 1.0) - a * m < math.log(tail):
            return m
        m += 1 + m // 16


def default_radius(t: float) -> int:
    return walk_tail_radius(t) + 10


@nb.njit(cache=True)
def _generator(src, dst):
    n = src.shape[0]
    dst[0] = 0.5 * src[1] - src[0]
    for i in range(1, n - 1):
        dst[i] = 0.5 * src[i - 1] + 0.5 * src[i + 1] - src[i]
    dst[n - 1] = 0.5 * src[n - 2] - src[n - 1]


@nb.njit(cache=True)
def _rk4(p, local, h, n_steps, centre):
    n = p.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for _ in range(n_steps):
        _generator(p, k1)
        r1 = p[centre]
        for i in range(n):
            tmp[i] = p[i] + 0.5 * h * k1[i]
        r2 = tmp[centre]
        _generator(tmp, k2)
        for i in range(n):
            tmp[i] = p[i] + 0.5 * h * k2[i]
        r3 = tmp[centre]
        _generator(tmp, k3)
        for i in range(n):
            tmp[i] = p[i] + h * k3[i]
        r4 = tmp[centre]
        _generator(tmp, k4)
        for i in range(n):
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        local += h / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
    return local


def _check_dt(dt: float) -> None:
    if not 0.0 < dt <= 0.01:
        raise ValueError(f"step size must lie in (0, 0.01], got {dt}")


def kernel_path(times, M: int | None = None, dt: float = DEFAULT_DT) -> list[ExactKernel]:
    """Evolve once from p_0 = delta_0 and snapshot the kernel at each of the sorted ``times``."""
    times = [float(t) for t in times]
    if any(t < 0 for t in times) or any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be sorted and non-negative")
    _check_dt(dt)
    t_end = times[-1] if times else 0.0
    if M is None:
        M = default_radius(t_end)
    p = np.zeros(2 * M + 1)
    p[M] = 1.0
    local = 0.0
    now = 0.0
    out = []
    for t in times:
        n_steps = int(math.floor((t - now) / dt + 1e-9))
        if n_steps:
            local = _rk4(p, local, dt, n_steps, M)
        rest = t - now - n_steps * dt
        if rest > 1e-12:
            local = _rk4(p, local, rest, 1, M)
        now = t
        deficit = abs(1.0 - math.fsum(p))
        if deficit > MASS_TOLERANCE:
            raise TruncationError(f"mass deficit {deficit:.3g} at t={t} with M={M}")
        out.append(ExactKernel(p=p.copy(), t=t, local_time=local, M=M, dt=dt))
    return out


def evolve_kernel(t: float, M: int | None = None, dt: float = DEFAULT_DT) -> ExactKernel:
    if t < 0:
        raise ValueError("t must be non-negative")
    return kernel_path([t], M, dt)[0]


@lru_cache(maxsize=None)
def _grid(times: tuple, dt: float) -> tuple:
    return tuple((k.local_time, k.positive_part) for k in kernel_path(times, dt=dt))


def exact_table(times, dt: float = DEFAULT_DT) -> dict[float, tuple[float, float]]:
    """Map each time to ``(R_t, E K(t))`` from one evolution over the sorted unique times."""
    ts = tuple(sorted({float(t) for t in times}))
    return dict(zip(ts, _grid(ts, dt)))


def local_time_R(t: float, dt: float = DEFAULT_DT) -> float:
    """Expected time spent at the origin up to ``t`` by the walk started there."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return exact_table([t], dt)[float(t)][0]


def expected_crossings(t: float, dt: float = DEFAULT_DT) -> float:
    """E K(t) = E(Z_t)^+."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return exact_table([t], dt)[float(t)][1]


def predicted_flux_variance(rho: float, t: float, dt: float = DEFAULT_DT) -> float:
    """Exact stationary E J(t)^2 = rho (1 - rho) R_t."""
    rho = check_density(rho)
    if rho in (0.0, 1.0):
        return 0.0
    return rho * (1.0 - rho) * local_time_R(t, dt)


def asymptotic_constants(rho: float) -> AsymptoticConstants:
    """Limits of t^{-1/2} E J(t)^2 and t^{-1/2} E X(t)^2."""
    rho = check_density(rho)
    if rho == 0.0:
        raise ValueError("tagged-particle constant needs rho > 0")
    c = math.sqrt(2.0 / math.pi)
    return AsymptoticConstants(sigma2=c * rho * (1.0 - rho), sigma_bar2=c * (1.0 - rho) / rho)


def flux_sigma2(rho: float) -> float:
    rho = check_density(rho)
    return math.sqrt(2.0 / math.pi) * rho * (1.0 - rho)


# ---------------------------------------------------------------------------
# series backend

def bessel_transition(t: float, x: int) -> float:
    """exp(-t) I_|x|(t) = sum_k (t/2)^(2k+|x|) / (k! (k+|x|)!) * exp(-t)."""
    x = abs(int(x))
    if t == 0:
        return 1.0 if x == 0 else 0.0
    log_half = math.log(t / 2.0)
    terms = []
    k = 0
    peak = -math.inf
    while True:
        lt = (2 * k + x) * log_half - math.lgamma(k + 1) - math.lgamma(k + x + 1) - t
        peak = max(peak, lt)
        terms.append(lt)
        if k > t and lt < peak - 40.0:
            break
        k += 1
    return math.fsum(math.exp(v) for v in terms)


def series_local_time(t: float) -> float:
    """R_t = int_0^t exp(-s) I_0(s) ds = t exp(-t) (I_0(t) + I_1(t))."""
    return t * (bessel_transition(t, 0) + bessel_transition(t, 1))
