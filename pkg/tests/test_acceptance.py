"""End-to-end acceptance checks, one test per criterion.

Each test appends a ``CRITERION n: PASS|FAIL ...`` line to the session log, which is
printed in the terminal summary.  Heavy Monte Carlo runs are shared through
module-scoped fixtures.  Run alone with ``pytest -m acceptance``.
"""

import math

import numpy as np
import pytest

from ssep import exact
from ssep.dynamics import trajectory
from ssep.harness import ExperimentConfig, build_rows, simulate, write_csv
from ssep.lattice import EventStream, WidenedStream, build_window, sample_initial, \
    widen_configuration
from ssep.stats import McSummary, k_variance_bound, variance_with_se

pytestmark = pytest.mark.acceptance

SEED = 20261015
DENSITIES = (0.2, 0.5, 0.8)
GRID = (1.0, 4.0, 16.0, 64.0)
N_FLUX = 100_000


def _report(log, n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    log.append(line)
    print(line)
    return ok


def _rows(experiment, result):
    cfg = result.config
    sibling = ExperimentConfig(experiment, cfg.rho, cfg.times, cfg.replicas, cfg.seed,
                               cfg.tail_bound)
    return {(r.t, r.estimator): r for r in build_rows(sibling, result)}


@pytest.fixture(scope="module")
def flux_runs():
    return {rho: simulate(ExperimentConfig("variance-flux", rho, GRID, N_FLUX, SEED))
            for rho in DENSITIES}


def test_c01_pathwise_identities(criterion_log):
    worst = {}
    for rho in DENSITIES:
        res = simulate(ExperimentConfig("identity-check", rho, GRID, 1000, SEED))
        worst[rho] = max(res.max_violations.values())
    ok = all(v == 0 for v in worst.values())
    _report(criterion_log, 1, ok, f"max violations per rho {worst}")
    assert ok


def test_c02_flux_variance(flux_runs, criterion_log):
    zs = {}
    for rho, res in flux_runs.items():
        rows = _rows("variance-flux", res)
        for t in GRID:
            zs[(rho, t)] = rows[(t, "EJ2")].z_score
    worst = max(zs.items(), key=lambda kv: abs(kv[1]))
    ok = all(abs(z) <= 3.0 for z in zs.values())
    _report(criterion_log, 2, ok, f"max |z| = {abs(worst[1]):.2f} at (rho, t) = {worst[0]}")
    assert ok


def test_c03_wald_factorization(flux_runs, criterion_log):
    zs = {}
    for rho, res in flux_runs.items():
        rows = _rows("decomposition", res)
        for t in GRID:
            zs[(rho, t)] = rows[(t, "wald_gap")].z_score
    worst = max(zs.items(), key=lambda kv: abs(kv[1]))
    ok = all(abs(z) <= 3.0 for z in zs.values())
    _report(criterion_log, 3, ok, f"max |z| = {abs(worst[1]):.2f} at (rho, t) = {worst[0]}")
    assert ok


def test_c04_martingale_variance(flux_runs, criterion_log):
    rows = _rows("variance-flux", flux_runs[0.5])
    got = {t: (rows[(t, "EM2")].estimate, rows[(t, "EM2")].z_score) for t in (4.0, 16.0)}
    ok = all(abs(z) <= 3.0 for _, z in got.values())
    detail = ", ".join(f"t={t:g}: {m:.4f} (z={z:+.2f})" for t, (m, z) in got.items())
    _report(criterion_log, 4, ok, detail)
    assert ok
    assert rows[(16.0, "EM2")].prediction == 4.0


def test_c05_increment_law(flux_runs, criterion_log):
    zs = {}
    for rho in (0.2, 0.5):
        rows = _rows("decomposition", flux_runs[rho])
        for name in ("P_A_plus", "P_A_minus"):
            zs[(rho, name)] = rows[(16.0, name)].z_score
    worst = max(zs.items(), key=lambda kv: abs(kv[1]))
    ok = all(abs(z) <= 4.0 for z in zs.values())
    _report(criterion_log, 5, ok, f"max |z| = {abs(worst[1]):.2f} at {worst[0]}")
    assert ok


def test_c06_asymptotic_variance(criterion_log):
    sigma2 = exact.flux_sigma2(0.5)
    assert sigma2 == pytest.approx(0.19947, abs=5e-6)
    rel = {}
    for t, tol in ((1000.0, 0.03), (10_000.0, 0.01)):
        curve = 0.25 * exact.local_time_R(t) / math.sqrt(t)
        rel[t] = (abs(curve / sigma2 - 1.0), tol)
    ok = all(r <= tol for r, tol in rel.values())
    detail = ", ".join(f"t={t:g}: rel err {r:.2e} (tol {tol:g})" for t, (r, tol) in rel.items())
    _report(criterion_log, 6, ok, detail)
    assert ok


def test_c07_crossing_count_bound(flux_runs, criterion_log):
    margins = {}
    for rho, res in flux_runs.items():
        for t in (16.0, 64.0):
            chk = k_variance_bound(res.summaries[(t, "K")])
            margins[(rho, t)] = (chk.passed, chk.var / chk.mean)
    ok = all(p for p, _ in margins.values())
    ratios = ", ".join(f"{k}: {v:.3f}" for k, (_, v) in margins.items())
    _report(criterion_log, 7, ok, f"Var K / E K = {ratios}")
    assert ok


@pytest.fixture(scope="module")
def clt_run():
    return simulate(ExperimentConfig("clt-flux", 0.5, (16.0, 64.0, 256.0), N_FLUX, SEED))


def test_c08_normal_limit(clt_run, criterion_log):
    rows = _rows("clt-flux", clt_run)
    n = clt_run.summaries[(256.0, "J")].n
    skew = rows[(256.0, "skew")].estimate
    ok_skew = abs(skew) <= 4.0 * math.sqrt(6.0 / n)
    kurt = [abs(rows[(t, "excess_kurt")].estimate) for t in (16.0, 64.0, 256.0)]
    ok_kurt = kurt[0] > kurt[1] > kurt[2] and kurt[2] <= 0.3
    late = simulate(ExperimentConfig("clt-flux", 0.5, (1024.0,), 2000, SEED))
    d = _rows("clt-flux", late)[(1024.0, "ks_d")].estimate
    ok_ks = d <= 0.05
    ok = ok_skew and ok_kurt and ok_ks
    _report(criterion_log, 8, ok,
            f"skew(256) = {skew:+.4f} [{'ok' if ok_skew else 'FAIL'}], "
            f"|kurt| at 16/64/256 = {kurt[0]:.4f}/{kurt[1]:.4f}/{kurt[2]:.4f} "
            f"[{'ok' if ok_kurt else 'FAIL'}], KS d(1024) = {d:.4f} [{'ok' if ok_ks else 'FAIL'}]")
    assert ok_skew, "skewness"
    assert ok_kurt, "excess kurtosis"
    assert ok_ks, "KS distance"


def test_c09_tagged_particle(criterion_log):
    res = simulate(ExperimentConfig("tagged", 0.5, (16.0, 64.0, 256.0), 20_000, SEED))
    rows = _rows("tagged", res)
    gap = [rows[(t, "E_XminusJoverRho_sq_over_sqrt_t")].estimate for t in (16.0, 64.0, 256.0)]
    ok_gap = gap[0] > gap[1] > gap[2]
    vx = rows[(256.0, "VX_over_sqrt_t")]
    rel = abs(vx.estimate / 0.79788 - 1.0)
    assert vx.prediction == pytest.approx(0.79788, abs=5e-6)
    ok_vx = rel <= 0.10
    ok = ok_gap and ok_vx
    _report(criterion_log, 9, ok,
            f"E(X-2J)^2/sqrt(t) = {gap[0]:.4f}/{gap[1]:.4f}/{gap[2]:.4f}, "
            f"VX/sqrt(t) at 256 = {vx.estimate:.4f} (rel err {rel:.3f})")
    assert ok_gap
    assert ok_vx


def test_c10_kernel_self_consistency(criterion_log):
    grid = [0.25 * k for k in range(1, 257)] + [128.0, 256.0, 512.0, 1024.0]
    kernels = exact.kernel_path(grid)  # raises if mass leaks beyond 1e-10
    wald = max(abs(2.0 * k.positive_part - k.local_time) for k in kernels)
    mass = max(abs(k.mass - 1.0) for k in kernels)
    series = 0.0
    for t in (0.5, 1.0, 2.0, 5.0):
        k = exact.evolve_kernel(t)
        for x in range(-k.M, k.M + 1):
            series = max(series, abs(k(x) - exact.bessel_transition(t, x)))
        series = max(series, abs(k.local_time - exact.series_local_time(t)))
    ok = wald <= 1e-8 and mass <= 1e-10 and series <= 1e-8
    _report(criterion_log, 10, ok,
            f"|2EK - R| = {wald:.1e}, mass error = {mass:.1e}, series gap = {series:.1e}")
    assert ok


def test_c11_window_doubling(criterion_log):
    t, rho, n = 64.0, 0.5, 10_000
    window = build_window(t)
    extra = -window.left
    base, wide = McSummary(), McSummary()
    for r in range(n):
        stream = EventStream(SEED, r, window.n_bonds)
        initial = sample_initial(rho, window, stream)
        base.add(float(trajectory(initial, stream, [t])["J_cross"][0]))
        inner = EventStream(SEED, r, window.n_bonds)
        initial = sample_initial(rho, window, inner)
        ws = WidenedStream(inner, extra)
        big = widen_configuration(initial, ws, rho)
        wide.add(float(trajectory(big, ws, [t])["J_cross"][0]))
    (v1, s1), (v2, s2) = variance_with_se(base), variance_with_se(wide)
    combined = math.hypot(s1, s2)
    ok = abs(v1 - v2) < combined
    _report(criterion_log, 11, ok,
            f"EJ2 = {v1:.4f} (half-width {extra}) vs {v2:.4f} (half-width {2 * extra}), "
            f"diff {abs(v1 - v2):.2e} < SE {combined:.3f}")
    assert ok


def test_c12_worker_reproducibility(tmp_path, criterion_log):
    texts = {}
    for workers in (1, 2, 8):
        cfg = ExperimentConfig("variance-flux", 0.5, (1.0, 4.0, 16.0), 2000, SEED)
        res = simulate(cfg, workers=workers)
        path = tmp_path / f"w{workers}.csv"
        write_csv(build_rows(cfg, res), str(path))
        texts[workers] = path.read_text()

    def values(text):
        out = []
        for line in text.splitlines()[1:]:
            for field in line.split(",")[5:9]:
                out.append(float(field) if field else math.nan)
        return np.array(out)

    ref = values(texts[1])
    worst = 0.0
    same_shape = True
    for w in (2, 8):
        other = values(texts[w])
        same_shape &= other.shape == ref.shape
        if other.shape == ref.shape:
            both = ~np.isnan(ref)
            same_shape &= bool(np.array_equal(np.isnan(ref), np.isnan(other)))
            denom = np.maximum(np.abs(ref[both]), 1e-300)
            worst = max(worst, float(np.max(np.abs(other[both] - ref[both]) / denom)))
    identical = texts[1] == texts[2] == texts[8]
    ok = same_shape and worst <= 1e-9
    _report(criterion_log, 12, ok,
            f"max relative difference {worst:.1e} across 1/2/8 workers "
            f"(byte-identical: {identical})")
    assert ok
