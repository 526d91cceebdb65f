"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import functools
import os
import time
import warnings

import numpy as np

from conftest import ACCEPTANCE_LINES
from oracles import cell_integral_2d, h0_series, inverse_distance_cube, laplacian_fd
from rkhscatter.forward import add_noise, born_amplitude, full_wave_amplitude
from rkhscatter.greens import XI_3D, hankel_h0_first_kind, singular_cell_integral
from rkhscatter.harness import ExperimentConfig, rerun_from_manifest, run_pipeline
from rkhscatter.inversion import (RKHSReconstructor, baseline_linear_inversion, chi_squared,
                                  chi_squared_amplitudes, delta_error, predict_amplitudes,
                                  reconstruct_fd_oracle)
from rkhscatter.rkhs import (SobolevKernelSpec, default_lambda, gram_matrix, kernel_eval,
                             kernel_laplacian, kernel_matrix, representer_fit,
                             stationarity_residual)
from rkhscatter.scene import (SourceSet, ThreeBallModel, centered_subgrid, gaussian_bump,
                              l_shape_detectors, layer_heights, make_grid,
                              place_sources_random, three_ball_layer, three_ball_phantom)

K_DEFAULT = 2 * np.pi / 500
SIDE = 70.0


def _report(num, title, ok, detail, elapsed, limit):
    passed = bool(ok) and elapsed < limit
    line = (f"criterion {num:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}  "
            f"[{elapsed:.1f}s / {limit:.0f}s]")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert elapsed < limit, line


# ------------------------------------------------------- shared 2-D layer setup

@functools.lru_cache(maxsize=None)
def _layer_setup():
    fg = make_grid(2, (17, 17), SIDE / 17)
    rg = centered_subgrid(fg, (15, 15))
    z = layer_heights(17)[7]
    return fg, rg, z, three_ball_layer(fg, z)


def _layer_run(n_sources, n_detectors, seed, noise=0.0, alpha=None):
    fg, rg, _, truth = _layer_setup()
    src = place_sources_random(fg, n_sources, seed)
    data = born_amplitude(truth, src, l_shape_detectors(2, n_detectors), K_DEFAULT)
    if noise:
        data, src = add_noise(data, src, noise, seed + 1000)
    est = RKHSReconstructor(K_DEFAULT, alpha=alpha).fit_data(data)
    return data, est, est.reconstruct(rg, warn=False)


# ------------------------------------------------------------------- criteria

def test_criterion_01_hankel_against_series():
    t0 = time.perf_counter()
    z = np.logspace(-3, np.log10(50.0), 50)
    got = hankel_h0_first_kind(z)
    ref = np.array([h0_series(v) for v in z])
    err = float(np.max(np.abs(got - ref) / np.abs(ref)))
    _report(1, "H0 vs series oracle", err <= 1e-10, f"max rel err {err:.2e} (<= 1e-10)",
            time.perf_counter() - t0, 1.0)


def test_criterion_02_singular_cell_constants():
    t0 = time.perf_counter()
    h, k = 1.0, 0.01
    ref = k ** 1.5 * cell_integral_2d(h, k)
    got = singular_cell_integral(2, h, k, 1.0, [0.0, 0.0], [1.0, 0.0])
    err2 = abs(got - ref) / abs(ref)
    cube = inverse_distance_cube()
    ok3 = round(cube, 2) == 2.38 and round(XI_3D, 2) == 2.38 and abs(cube - XI_3D) < 5e-4
    _report(2, "singular-cell constants", err2 <= 1e-4 and ok3,
            f"2D rel err {err2:.2e} (<= 1e-4); 3D quadrature {cube:.6f}, closed form "
            f"{XI_3D:.6f} (~2.38)", time.perf_counter() - t0, 30.0)


def test_criterion_03_representer_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    spec = SobolevKernelSpec(4)
    worst_stat = worst_interp = worst_chi = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 51))
        X = rng.uniform(0.0, 2.0, (n, 4))
        K = gram_matrix(spec, X)
        y = rng.normal(size=n) + 1j * rng.normal(size=n)
        lam = default_lambda(K) * 10.0 ** rng.uniform(-2, 4)
        worst_stat = max(worst_stat, stationarity_residual(K, y, representer_fit(K, y, lam), lam))
        eig = np.linalg.eigvalsh(K)
        assert eig.min() > n * np.finfo(float).eps * eig.max()  # K invertible
        fit = representer_fit(K, y, 0.0) @ K
        worst_interp = max(worst_interp, np.linalg.norm(fit - y) / np.linalg.norm(y))
        worst_chi = max(worst_chi, chi_squared_amplitudes(y, fit))
    ok = worst_stat <= 1e-8 and worst_interp <= 1e-8 and worst_chi <= 1e-12
    _report(3, "representer fit", ok,
            f"stationarity {worst_stat:.1e}, interpolation {worst_interp:.1e}, "
            f"chi2 {worst_chi:.1e}", time.perf_counter() - t0, 60.0)


def test_criterion_04_kernel_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    notes, ok = [], True
    for d in (4, 6):
        spec = SobolevKernelSpec(d)
        X, T = rng.uniform(0, 1, (30, d)), rng.uniform(0, 1, (30, d))
        sym = np.array_equal(kernel_matrix(spec, X, T), kernel_matrix(spec, T, X).T)
        v = rng.normal(size=d)
        stat = np.array_equal(kernel_matrix(spec, X + v, T + v), kernel_matrix(spec, X, T))
        worst_eig = 0.0
        for _ in range(10):
            eig = np.linalg.eigvalsh(gram_matrix(spec, rng.uniform(0, 1, (20, d))))
            worst_eig = min(worst_eig, eig.min() / eig.max())
        worst_lap = 0.0
        for _ in range(20):
            x, t = rng.uniform(0, 1, d), rng.uniform(0, 1, d)
            fd = laplacian_fd(lambda s: kernel_eval(spec, x, s), t, range(d // 2))
            an = kernel_laplacian(spec, x, t)
            worst_lap = max(worst_lap, abs(an - fd) / abs(an))
        ok &= sym and stat and worst_eig >= -1e-8 and worst_lap <= 1e-2
        notes.append(f"R{d}: symmetric={sym} stationary={stat} min eig/max {worst_eig:.1e} "
                     f"laplacian err {worst_lap:.1e}")
    _report(4, "kernel properties", ok, "; ".join(notes), time.perf_counter() - t0, 300.0)


def test_criterion_05_three_ball_layer():
    t0 = time.perf_counter()
    data, est, rec = _layer_run(60, 7, seed=0)
    chi = chi_squared(data, est.model_)
    _, rg, z, truth = _layer_setup()
    model = ThreeBallModel()
    pts, vals = rg.centers(), rec.values.ravel()
    means = []
    for c in model.centers:
        disk = np.sum((pts - c[:2]) ** 2, axis=1) <= model.radius ** 2 - (z - c[2]) ** 2
        means.append(vals[disk].mean())
    background = vals[truth.sample(pts) == 0].mean()
    ratio = min(means) / background
    brightest = int(np.argmax(means)) == int(np.argmax(model.etas))
    ok = chi <= 1e-4 and ratio > 3 and brightest
    _report(5, "three-ball layer", ok,
            f"chi2 {chi:.1e} (<= 1e-4), weakest disk/background {ratio:.2f} (> 3), "
            f"disk means {np.round(means, 3).tolist()}", time.perf_counter() - t0, 600.0)


def test_criterion_06_detector_count_insensitive():
    t0 = time.perf_counter()
    truth = _layer_setup()[3]
    deltas = [delta_error(truth, _layer_run(60, nd, seed=0)[2]) for nd in (3, 7, 15)]
    spread = (max(deltas) - min(deltas)) / min(deltas)
    _report(6, "detector-count insensitivity", spread <= 0.2,
            f"delta {np.round(deltas, 4).tolist()} for n_d 3/7/15, spread {spread:.1%} (<= 20%)",
            time.perf_counter() - t0, 1200.0)


def test_criterion_07_source_count_monotone():
    t0 = time.perf_counter()
    truth = _layer_setup()[3]
    med = {}
    for ns in (30, 120):
        med[ns] = float(np.median([delta_error(truth, _layer_run(ns, 7, s, 0.01, "gcv")[2])
                                   for s in (1, 2, 3)]))
    _report(7, "source-count monotonicity", med[120] <= med[30],
            f"median delta {med[30]:.4f} at 30 sources, {med[120]:.4f} at 120",
            time.perf_counter() - t0, 1200.0)


def test_criterion_08_fd_cross_check():
    t0 = time.perf_counter()
    nf = 105
    fg = make_grid(2, (nf, nf), SIDE / nf)
    bump = gaussian_bump(fg, 8.0)
    det = l_shape_detectors(2, 7)
    c0 = (nf - 1) // 2
    errs, agree = [], None
    for n, m in ((13, 8), (25, 4)):
        xs = (c0 + m * (np.arange(n) - (n - 1) // 2) + 0.5) * fg.spacing
        src = SourceSet(np.array([(a, b) for a in xs for b in xs]))
        data = born_amplitude(bump, src, det, K_DEFAULT)
        fd = reconstruct_fd_oracle(data)
        tr = bump.sample(fd.grid.centers())
        errs.append(np.linalg.norm(fd.values.ravel() - tr) / np.linalg.norm(tr))
        if agree is None:
            rk = RKHSReconstructor(K_DEFAULT).fit_data(data).reconstruct(fd.grid, warn=False)
            agree = np.linalg.norm(rk.values - fd.values) / np.linalg.norm(fd.values)
    order = np.log2(errs[0] / errs[1])
    ok = agree <= 0.1 and 1.5 <= order <= 2.5
    _report(8, "RKHS vs finite differences", ok,
            f"relative L2 gap {agree:.3f} (<= 0.10), fd error {errs[0]:.2e} -> {errs[1]:.2e}, "
            f"observed order {order:.2f}", time.perf_counter() - t0, 600.0)


def test_criterion_09_rkhs_beats_baseline():
    t0 = time.perf_counter()
    fg = make_grid(3, (9, 9, 5), 7.9)
    truth = three_ball_phantom(fg)
    det = l_shape_detectors(3, 7)
    ratios = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed in (1, 2, 3):
            src = place_sources_random(fg, 150, seed)
            data = full_wave_amplitude(truth, src, det, K_DEFAULT)
            noisy, _ = add_noise(data, src, 0.01, 12)
            est = RKHSReconstructor(K_DEFAULT).fit_data(noisy)
            base = baseline_linear_inversion(noisy, fg, rcond=1e-3)
            cb = chi_squared_amplitudes(noisy.amplitudes, predict_amplitudes(base, noisy))
            ratios.append(cb / chi_squared(noisy, est.model_))
    med = float(np.median(ratios))
    _report(9, "RKHS fit vs linear baseline", med >= 10,
            f"median chi2 ratio {med:.1f} (>= 10), per seed {np.round(ratios, 1).tolist()}",
            time.perf_counter() - t0, 1800.0)


def test_criterion_10_manifest_rerun(tmp_path):
    cfg = ExperimentConfig(mode="layer", layer=7, n_layers=17, forward_shape=(17, 17),
                           forward_spacing=SIDE / 17, recon_shape=(15, 15), n_sources=60,
                           n_detectors=7, noise_level=0.0)
    t0 = time.perf_counter()
    first = run_pipeline(cfg, str(tmp_path / "a"))
    t_first = time.perf_counter() - t0
    t0 = time.perf_counter()
    second = rerun_from_manifest(str(tmp_path / "a" / "manifest.ini"), str(tmp_path / "b"))
    elapsed = time.perf_counter() - t0
    same = first.files == second.files
    for name in first.files:
        with open(os.path.join(first.output, name), "rb") as a, \
                open(os.path.join(second.output, name), "rb") as b:
            same &= a.read() == b.read()
    _report(10, "manifest rerun", same,
            f"{len(first.files)} files bit-identical={same} (first run {t_first:.1f}s)",
            elapsed, 600.0)
