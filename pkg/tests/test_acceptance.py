"""Acceptance criteria, each run at its stated tolerance.

Every test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary. Criteria 4 and 5 are full Monte-Carlo studies and take
tens of minutes on one core.
"""

import math
import time

import numpy as np

from conftest import crandn, report_criterion
from mimocs.channel_model import sample_group_supports, synthesize_channels, unitary_dft
from mimocs.estimators import EstimatorConfig, jmumc_omp, oracle_ls
from mimocs.harness import (ScenarioConfig, apply_overrides, format_csv,
                            run_mse_experiment, run_throughput_experiment)
from mimocs.pilots import assemble_sensing_matrix, design_pilot_book
from mimocs.precoding import zf_precoder
from reference import brute_force_support

M, K, P, S, OVERLAP = 128, 10, 50, 6, 4
# a fifth of the mean per-bin power 1/s: far above leakage into bins a user
# does not own, far below its own coefficients
GAMMA_SINGLE_CELL = 0.2 / S
CALIBRATION = ["gamma_mode=calibrated", "calibration_trials=3",
               "gamma_grid=0.001,0.003,0.01,0.03,0.1,0.3,1.0"]


def single_cell_trial(rng, G, noise_var=0.0):
    sups = sample_group_supports(M, S, OVERLAP, K, rng=rng)
    ch = synthesize_channels([[s] for s in sups], np.ones((K, 1)), P, M, rng)
    book = design_pilot_book(1, M, P, G, rng)
    theta = assemble_sensing_matrix(book, unitary_dft(M), (0,))
    H = ch.aggregate((0,))
    R = theta @ H
    if noise_var:
        R = R + math.sqrt(noise_var) * crandn(rng, *R.shape)
    return R, theta, H, sups


def same_supports(res, sups):
    return all(np.array_equal(res.support(k), np.sort(sups[k])) for k in range(len(sups)))


def test_criterion_1_noiseless_exact_recovery():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    ok = 0
    for _ in range(100):
        R, theta, H, sups = single_cell_trial(rng, 40)
        res = jmumc_omp(R, theta, EstimatorConfig(GAMMA_SINGLE_CELL))
        err = np.linalg.norm(res.H_hat - H) / np.linalg.norm(H)
        ok += same_supports(res, sups) and err < 1e-8
    elapsed = time.perf_counter() - t0
    passed = ok >= 99 and elapsed < 60
    report_criterion(1, passed, f"{ok}/100 exact recoveries (need 99), {elapsed:.1f} s (limit 60 s)")
    assert passed


def test_criterion_2_oracle_equivalence():
    rng = np.random.default_rng(202)
    matched = attempts = 0
    worst = 0.0
    while matched < 100 and attempts < 400:
        attempts += 1
        R, theta, H, sups = single_cell_trial(rng, 40, noise_var=0.01)
        res = jmumc_omp(R, theta, EstimatorConfig(GAMMA_SINGLE_CELL))
        if not same_supports(res, sups):
            continue
        matched += 1
        ref = oracle_ls(R, theta, sups).H_hat
        diff = np.linalg.norm(res.H_hat - ref, axis=1) / np.linalg.norm(ref, axis=1)  # (P, K)
        worst = max(worst, float(diff.max()))
    passed = matched == 100 and worst <= 1e-10
    report_criterion(2, passed, f"{matched} support-matched noisy trials ({attempts} drawn), "
                                f"worst per-(k,p) relative gap {worst:.2e} (limit 1e-10)")
    assert passed


def test_criterion_3_brute_force_equivalence():
    rng = np.random.default_rng(303)
    F = unitary_dft(8)
    ok = live_ok = 0
    for _ in range(100):
        theta = assemble_sensing_matrix(design_pilot_book(1, 8, 1, 6, rng), F, (0,))
        h = np.zeros((1, 8, 1), complex)
        h[0, rng.choice(8, 2, replace=False), 0] = crandn(rng, 2)
        R = theta @ h
        best, _ = brute_force_support(theta[0], R[0, :, 0], 2)
        res = jmumc_omp(R, theta, EstimatorConfig(1e-12))
        ok += [int(i) for i in res.support(0)] == best
        x = res.H_hat[0, :, 0]
        live = np.flatnonzero(np.abs(x) > 1e-8 * np.abs(x).max())
        live_ok += [int(i) for i in live] == best
    passed = ok >= 99
    report_criterion(3, passed, f"{ok}/100 recovered supports equal the exhaustive optimum "
                                f"(need 99); nonzero pattern of the estimate matches in {live_ok}/100")
    assert passed


def test_criterion_4_estimation_study():
    cfg = apply_overrides(ScenarioConfig(), [
        "rho_edge_list_dB=20", "rho_th_schedule=10", "gamma_th_schedule=0.002",
        "G_list=40,55,65,80", "trials=100", "seed=404"] + CALIBRATION)
    rows, gammas = run_mse_experiment(cfg, return_gammas=True)
    v = {(r.estimator, r.G): r.value for r in rows}
    G_list = sorted(cfg.G_list)
    gap = {G: v["jmumc_omp", G] - v["oracle_ls", G] for G in G_list}
    a = all(gap[G] <= 2.0 for G in G_list if G >= 55)
    b = v["single_cell_joint_omp", 80] - v["jmumc_omp", 80] >= 10.0
    c = all(v["jmumc_omp", G] <= v["jmu_omp", G] for G in G_list)
    table = "; ".join(f"G={G}: " + ", ".join(f"{e}={v[e, G]:.2f}" for e in
                                            ("jmumc_omp", "jmu_omp", "single_cell_joint_omp",
                                             "oracle_ls")) for G in G_list)
    print("NMSE dB at 20 dB:", table)
    print("calibrated gamma:", gammas)
    report_criterion(4, a and b and c,
                     f"(a) gap to oracle for G>=55 "
                     f"{', '.join(f'{gap[G]:.2f}' for G in G_list if G >= 55)} dB (limit 2) "
                     f"{'ok' if a else 'violated'}; (b) single-cell excess at G=80 "
                     f"{v['single_cell_joint_omp', 80] - v['jmumc_omp', 80]:.1f} dB (need 10) "
                     f"{'ok' if b else 'violated'}; (c) J-MUMC <= J-MU at every G "
                     f"{'ok' if c else 'violated'}")
    assert a and b and c


def test_criterion_5_throughput_study():
    # desk scale: fewer antennas per cell and subcarriers, everything else as specified
    cfg = apply_overrides(ScenarioConfig(), ["M=32", "P=4", "trials=100", "seed=505"]
                          + CALIBRATION)
    rows, gammas = run_throughput_experiment(cfg, return_gammas=True)
    v = {(r.estimator, r.rho_edge_dB): r.value for r in rows}
    chain = ("perfect_csit", "oracle_ls", "jmumc_omp", "jmu_omp", "single_cell_joint_omp")
    broken = [(rho, a, b) for rho in cfg.rho_edge_list_dB for a, b in zip(chain, chain[1:])
              if v[a, rho] < v[b, rho]]
    gap30 = (v["oracle_ls", 30.0] - v["jmumc_omp", 30.0]) / v["oracle_ls", 30.0]
    for rho in cfg.rho_edge_list_dB:
        print(f"{rho:g} dB: " + ", ".join(f"{e}={v[e, rho]:.3f}" for e in chain))
    print("calibrated gamma:", gammas)
    passed = not broken and gap30 <= 0.05
    report_criterion(5, passed,
                     f"ordering {'holds at every SNR point' if not broken else f'broken at {broken}'}; "
                     f"J-MUMC gap to oracle at 30 dB {100 * gap30:.1f}% (limit 5%) "
                     f"[M=32, P=4, G=55, N=24, n_serve=3, 100 drops]")
    assert passed


def test_criterion_6_sensing_statistics():
    rng = np.random.default_rng(606)
    book = design_pilot_book(1, 128, 50, 160, rng)
    theta = assemble_sensing_matrix(book, unitary_dft(128), (0,))
    mean, var = complex(theta.mean()), float(np.var(theta))
    passed = theta.size >= 10**6 and abs(mean) < 0.01 and 0.95 <= var <= 1.05
    report_criterion(6, passed, f"{theta.size} entries, |mean| {abs(mean):.2e} (limit 0.01), "
                                f"variance {var:.4f} (range [0.95, 1.05])")
    assert passed


def test_criterion_7_numerical_invariants():
    rng = np.random.default_rng(707)
    F = unitary_dft(128).matrix
    unitarity = float(np.max(np.abs(F @ F.conj().T - np.eye(128))))

    # least-squares orthogonality after every iteration: the run capped at i
    # iterations reproduces iterate i
    R, theta, _, _ = single_cell_trial(rng, 40, noise_var=0.01)
    R, theta = R[:8], theta[:8]
    full = jmumc_omp(R, theta, EstimatorConfig(GAMMA_SINGLE_CELL))
    ortho = 0.0
    for i in range(1, full.iterations[0] + 1):
        res = jmumc_omp(R, theta, EstimatorConfig(GAMMA_SINGLE_CELL, max_iter=i))
        for p in range(R.shape[0]):
            for k in range(K):
                cols = res.support(k, p)
                if cols.size:
                    r = R[p, :, k] - theta[p] @ res.H_hat[p, :, k]
                    ortho = max(ortho, float(np.max(np.abs(theta[p][:, cols].conj().T @ r))))

    H = crandn(rng, 4, 24, 384)
    W = zf_precoder(H, 24.0).W
    HW = H @ W
    sig = np.abs(np.einsum("pkk->pk", HW)) ** 2
    leak = np.abs(HW - np.einsum("pk,kj->pkj", np.einsum("pkk->pk", HW), np.eye(24))) ** 2
    nulling = float(leak.max() / sig.min())
    power = float(np.max(np.abs(np.sum(np.abs(W) ** 2, axis=(1, 2)) - 24.0) / 24.0))

    descent = True
    for seed in range(20):
        R, theta, _, _ = single_cell_trial(np.random.default_rng(seed), 40, noise_var=0.05)
        tr = jmumc_omp(R[:4], theta[:4], EstimatorConfig(0.01)).trace
        descent &= bool(np.all(np.diff(tr[:-1]) < 0))

    passed = (unitarity < 1e-12 and ortho < 1e-8 and nulling < 1e-12 and power < 1e-10
              and descent)
    report_criterion(7, passed, f"unitarity {unitarity:.1e}, LS orthogonality {ortho:.1e}, "
                                f"ZF leakage {nulling:.1e}, power error {power:.1e}, "
                                f"strict descent {'yes' if descent else 'no'}")
    assert passed


def test_criterion_8_determinism(tmp_path):
    cfg = apply_overrides(ScenarioConfig(), ["M=32", "P=4", "K=4", "N=6", "G_list=20,30",
                                             "rho_edge_list_dB=15,25", "rho_th_schedule=5,10",
                                             "gamma_th_schedule=0.004,0.0004", "trials=3",
                                             "seed=808"])
    a = format_csv(run_mse_experiment(cfg)).encode()
    b = format_csv(run_mse_experiment(cfg)).encode()
    c = format_csv(run_throughput_experiment(apply_overrides(cfg, ["trials=1"]))).encode()
    d = format_csv(run_throughput_experiment(apply_overrides(cfg, ["trials=1"]))).encode()
    passed = a == b and c == d
    report_criterion(8, passed, f"MSE CSV {len(a)} bytes identical: {a == b}; "
                                f"throughput CSV {len(c)} bytes identical: {c == d}")
    assert passed
