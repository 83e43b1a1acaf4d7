"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line with the
measured quantity and the tolerance it was held to."""

import time

import numpy as np
from scipy.optimize import linear_sum_assignment

from siselab import (LinearSystem, akf_filter, detectable, equivalence_gap, estimate_via_outer,
                     ft_init, inner_outer, iterate_rde, run_filter, simulate, zf_init)
from siselab import _linalg as la_
from siselab.model import transform_zero_feedthrough
from siselab.sise import ft_square_step, zf_square_step
from siselab.stability import (ft_closed_loop, ft_riccati_data, rde_tv_step,
                               sise_matrix_square_ft, sise_matrix_square_zf, zf_closed_loop,
                               zf_riccati_data)

from conftest import make_s1, make_s2, make_s4, scalar


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


# -- shared generators -------------------------------------------------------

def is_minimal(A, G, C):
    return (not la_.pbh_failing_modes(A, C, kind="observe")
            and not la_.pbh_failing_modes(A, G, kind="reach"))


def random_square(rng, n, m, feedthrough, stable=False):
    """Random minimal square plant with a well-conditioned inversion matrix.

    With ``stable`` both the plant and its inverse are Schur-stable, so the
    trajectories stay bounded and absolute error tolerances are meaningful.
    """
    while True:
        A = rng.normal(size=(n, n)) / np.sqrt(n)
        if stable:
            A *= rng.uniform(0.3, 0.9) / max(la_.spectral_radius(A), 1e-3)
        G, C = rng.normal(size=(n, m)), rng.normal(size=(m, n))
        H = rng.normal(size=(m, m)) if feedthrough else np.zeros((m, m))
        D = H if feedthrough else C @ G
        if np.linalg.cond(D) > 1e3 or not is_minimal(A, G, C):
            continue
        sys = LinearSystem(A=A, G=G, C=C, H=H, Q=0.01 * np.eye(n), R=0.01 * np.eye(m))
        if stable:
            M = sise_matrix_square_ft(sys) if feedthrough else sise_matrix_square_zf(sys)
            if la_.spectral_radius(M) > 0.95:
                continue
        return sys


def rosenbrock_roots(sys, radius=1.0):
    """Roots of det [[zI - A, -G], [C, H]] from its values on a circle.

    The determinant is a polynomial of degree at most n; sampling it at
    N > n points and taking a DFT gives the coefficients exactly.
    """
    n, m = sys.n, sys.m
    N = 2 * n + 8
    zs = radius * np.exp(2j * np.pi * np.arange(N) / N)
    vals = [np.linalg.det(np.block([[z * np.eye(n) - sys.A, -sys.G], [sys.C, sys.H]]))
            for z in zs]
    coeffs = (np.fft.fft(vals) / N / radius ** np.arange(N)).real[: n + 1]
    big = np.max(np.abs(coeffs))
    deg = max(k for k in range(n + 1) if abs(coeffs[k]) > 1e-9 * big)
    roots = np.roots(coeffs[: deg + 1][::-1]) if deg else np.array([])
    if sys.zero_feedthrough:
        # the map with the one-step delay removed is z T(z): m extra zeros at 0
        roots = np.concatenate([roots, np.zeros(m)])
    return roots


def paired_error(a, b):
    if len(a) != len(b):
        return np.inf
    cost = np.abs(np.asarray(a)[:, None] - np.asarray(b)[None, :])
    r, c = linear_sum_assignment(cost)
    return float(np.max(cost[r, c])) if len(r) else 0.0


def square_configurations(seed=2024, random_count=16):
    rng = np.random.default_rng(seed)
    configs = [
        ("S1", make_s1()),
        ("scalar A=0.9", scalar(A=0.9)),
        ("scalar H=2", scalar(H=2.0)),
        ("scalar H=1", scalar(H=1.0)),
        ("2x2 feedthrough", LinearSystem(A=[[0.5, 0.2], [0.0, 0.4]], G=np.eye(2),
                                         C=[[1.0, 0.0], [1.0, 1.0]],
                                         H=[[1.0, 0.3], [0.0, 2.0]],
                                         Q=0.01 * np.eye(2), R=0.02 * np.eye(2))),
    ]
    for k in range(random_count):
        n = 2 + k % 5
        m = 1 + (k // 5) % min(2, n)
        ft = bool(k % 2)
        configs.append((f"random n={n} m={m} {'ft' if ft else 'zf'}",
                        random_square(rng, n, m, ft, stable=True)))
    return configs


def variants_for(sys):
    return ("zf", "zf_square") if sys.zero_feedthrough else ("ft", "ft_square")


# -- 1 ------------------------------------------------------------------------

def test_acceptance_1_eigenvalue_placement(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in range(200):
        n = 2 + k % 5
        m = 1 + (k // 5) % 2
        ft = k % 2 == 1
        sys = random_square(rng, n, m, ft)
        M = sise_matrix_square_ft(sys) if ft else sise_matrix_square_zf(sys)
        worst = max(worst, paired_error(np.linalg.eigvals(M), rosenbrock_roots(sys)))
    hand = [
        (make_s1(), [0.0, -0.7]),
        (make_s2(), [0.0, -1.7]),
        (scalar(H=2.0), [0.0]),
    ]
    hand_err = 0.0
    for sys, expect in hand:
        M = sise_matrix_square_zf(sys) if sys.zero_feedthrough else sise_matrix_square_ft(sys)
        hand_err = max(hand_err, paired_error(np.linalg.eigvals(M), expect),
                       paired_error(rosenbrock_roots(sys), expect))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and hand_err < 1e-6 and elapsed < 10
    report(capsys, 1, ok, f"200 random systems max paired error {worst:.2e} (tol 1e-6); "
           f"hand cases {hand_err:.2e}; runtime {elapsed:.2f}s (limit 10s)")


# -- 2 ------------------------------------------------------------------------

def test_acceptance_2_zero_innovation(capsys):
    worst, count = 0.0, 0
    for name, sys in square_configurations():
        d = np.random.default_rng(count).normal(size=(100, sys.m))
        tr = simulate(sys, d, horizon=100, seed=count)
        for variant in variants_for(sys):
            est = run_filter(sys, tr.measurements, variant=variant)
            worst = max(worst, float(np.max(np.linalg.norm(est.innovations, axis=1))))
            count += 1
    report(capsys, 2, worst < 1e-10,
           f"max innovation norm {worst:.2e} over {count} runs x 100 noisy steps (tol 1e-10)")


# -- 3 ------------------------------------------------------------------------

def bounded_inputs(m, rng):
    t = np.arange(200)[:, None]
    return {
        "uniform": rng.uniform(-1, 1, size=(200, m)),
        "sinusoid": np.sin(0.37 * t + np.arange(m)),
        "square wave": np.sign(np.sin(0.11 * t + 0.5 * np.arange(m))),
    }


def test_acceptance_3_noise_free_inversion(capsys):
    rng = np.random.default_rng(3)
    worst_d = worst_x = 0.0
    runs = 0
    for name, sys in square_configurations():
        x0 = rng.normal(size=sys.n)
        for kind, d in bounded_inputs(sys.m, rng).items():
            tr = simulate(sys, d, x0=x0, horizon=200, noise_on=False)
            for variant in variants_for(sys):
                if sys.zero_feedthrough:
                    est = run_filter(sys, tr.measurements, zf_init(sys, x0, np.eye(sys.n)),
                                     variant=variant)
                    d_true = tr.disturbances[est.t - 1]
                else:
                    est = run_filter(sys, tr.measurements, ft_init(sys, x0, np.eye(sys.n)),
                                     variant=variant)
                    d_true = tr.disturbances[est.t]
                worst_d = max(worst_d, float(np.max(np.abs(est.dhat - d_true))))
                worst_x = max(worst_x, float(np.max(np.abs(est.xhat - tr.states[est.t]))))
                runs += 1
    ok = worst_d < 1e-10 and worst_x < 1e-10
    report(capsys, 3, ok, f"{runs} runs of length 200: max |d error| {worst_d:.2e}, "
           f"max |x error| {worst_x:.2e} (tol 1e-10)")


# -- 4 ------------------------------------------------------------------------

def random_nonsquare(rng, category):
    """Non-square plant for the convergence/detectability dichotomy.

    ``generic``: unstructured. ``undetectable``: an unstable mode
    (``|lambda| >= 1.1``) invisible to the reduced output. ``hidden_stable``:
    a stable mode invisible to it (detectable but not observable).
    """
    while True:
        m = int(rng.integers(1, 3))
        p = m + int(rng.integers(1, 3))
        ft = bool(rng.integers(0, 2))
        lo = p + 1 if category != "generic" else max(m, 2)
        if lo > 6:
            continue
        n = int(rng.integers(lo, 7))
        A = rng.normal(size=(n, n)) * 1.2 / np.sqrt(n)
        G, C = rng.normal(size=(n, m)), rng.normal(size=(p, n))
        H = rng.normal(size=(p, m)) if ft else np.zeros((p, m))
        if category != "generic":
            _, _, Vt = np.linalg.svd(C)
            v = Vt[p:].T @ rng.normal(size=n - p)
            v /= np.linalg.norm(v)
            mag = rng.uniform(1.1, 2.0) if category == "undetectable" else rng.uniform(0, 0.9)
            lam = mag * rng.choice([-1.0, 1.0])
            A = A + np.outer(lam * v - A @ v, v)
        L = rng.normal(size=(n, n))
        Lr = rng.normal(size=(p, p))
        sys = LinearSystem(A=A, G=G, C=C, H=H, Q=0.1 * np.eye(n) + 0.05 * L @ L.T,
                           R=0.1 * np.eye(p) + 0.05 * Lr @ Lr.T)
        D = H if ft else C @ G
        if np.linalg.svd(D, compute_uv=False)[-1] < 1e-2:
            continue
        data = ft_riccati_data(sys) if ft else zf_riccati_data(sys)
        mods = np.abs(np.linalg.eigvals(data[0]))
        # near-unit-circle modes converge too slowly for the iteration budget
        if np.any(np.abs(mods - 1.0) < 0.02):
            continue
        return sys, ft, data


def test_acceptance_4_detectability_dichotomy(capsys):
    rng = np.random.default_rng(4)
    categories = ["generic"] * 2 + ["undetectable", "hidden_stable"]
    counterexamples, margin_failures = [], 0
    tally = {"converged": 0, "not converged": 0}
    for trial in range(1000):
        sys, ft, data = random_nonsquare(rng, categories[trial % 4])
        det = detectable(data[0], data[2])
        res = iterate_rde(*data, tol=1e-12, max_iter=100_000)
        tally["converged" if res.converged else "not converged"] += 1
        if res.converged != det.detectable:
            counterexamples.append(trial)
        if res.converged:
            cl = (ft_closed_loop if ft else zf_closed_loop)(sys, res.X)
            rho = max(la_.spectral_radius(cl), res.closed_loop_radius)
            margin_failures += rho > 1 - 1e-9
    ok = not counterexamples and margin_failures == 0
    report(capsys, 4, ok, f"1000 trials ({tally['converged']} converged, "
           f"{tally['not converged']} not): {len(counterexamples)} counterexamples, "
           f"{margin_failures} fixed points without Schur margin 1e-9")


# -- 5 ------------------------------------------------------------------------

def test_acceptance_5_dual_form_covariance(capsys):
    s4 = make_s4()
    tr = simulate(s4, np.random.default_rng(5).normal(size=(1000, 1)), horizon=1000, seed=5)
    est = run_filter(s4, tr.measurements, variant="zf")
    G, C, R, A, Q = s4.G, s4.C, s4.R, s4.A, s4.Q
    worst = 0.0
    for k in range(len(est.t)):
        K, M, X = est.K[k], est.M[k], est.X[k]
        Hg = G @ M - K @ C @ G @ M + K
        E = np.eye(2) - Hg @ C
        P_lyap = E @ X @ E.T + Hg @ R @ Hg.T
        worst = max(worst, float(np.max(np.abs(P_lyap - est.P[k]))))
        if k + 1 < len(est.t):
            X_next = A @ P_lyap @ A.T + Q
            worst = max(worst, float(np.max(np.abs(X_next - est.X[k + 1]))))
    report(capsys, 5, worst < 1e-10,
           f"S4 1000 steps: max per-step gap between the two covariance forms "
           f"{worst:.2e} (tol 1e-10)")


# -- 6 ------------------------------------------------------------------------

def test_acceptance_6_singular_kf_equivalence(capsys):
    Ds = np.array([1e4, 1e6, 1e8])
    lines, ok = [], True
    for name, sys in (("scalar", scalar(A=0.9)), ("S1", make_s1())):
        tr = simulate(sys, np.random.default_rng(6).normal(size=(500, sys.m)), horizon=500,
                      seed=6)
        gaps = np.array([equivalence_gap(sys, tr, D=D, burn_in=50) for D in Ds])
        slope = np.polyfit(np.log10(Ds), np.log10(gaps), 1)[0]
        ok &= bool(slope <= -0.9 and gaps[-1] < 1e-4)
        lines.append(f"{name}: slope {slope:.3f} (<= -0.9), gap(1e8) {gaps[-1]:.2e} (< 1e-4)")
    report(capsys, 6, ok, "; ".join(lines))


# -- 7 ------------------------------------------------------------------------

def monte_carlo(sys, runs, steps, rng):
    n, m, p = sys.n, sys.m, sys.p
    P0 = np.eye(n)
    x = la_.psd_factor(P0) @ rng.normal(size=(n, runs))
    W, V = la_.psd_factor(sys.Q), np.linalg.cholesky(sys.R)
    if sys.zero_feedthrough:
        state = zf_init(sys, x.copy(), P0)
        for _ in range(steps):
            d = rng.normal(size=(m, runs))
            x = sys.A @ x + sys.G @ d + W @ rng.normal(size=(W.shape[1], runs))
            y = sys.C @ x + V @ rng.normal(size=(p, runs))
            state = zf_square_step(state, sys, y)
        return x - state.xhat, state.P
    state = ft_init(sys, np.zeros((n, runs)), P0)
    for _ in range(steps):
        d = rng.normal(size=(m, runs))
        y = sys.C @ x + sys.H @ d + V @ rng.normal(size=(p, runs))
        state = ft_square_step(state, sys, y)
        err, P = x - state.xhat, state.Px
        x = sys.A @ x + sys.G @ d + W @ rng.normal(size=(W.shape[1], runs))
    return err, P


def test_acceptance_7_monte_carlo_covariance(capsys):
    rng = np.random.default_rng(7)
    lines, ok = [], True
    for name, sys in (("feedthrough A=0.5 H=1", scalar(A=0.5, H=1.0, Q=0.02, R=0.01)),
                      ("zero feedthrough A=0.9", scalar(A=0.9, Q=0.02, R=0.01))):
        err, P = monte_carlo(sys, 100_000, 60, rng)
        ratio = float(np.var(err) / P[0, 0])
        ok &= abs(ratio - 1) < 0.10
        lines.append(f"{name}: empirical/P_inf = {ratio:.4f}")
    report(capsys, 7, ok, "; ".join(lines) + " (within 10%, 1e5 runs)")


# -- 8 ------------------------------------------------------------------------

def test_acceptance_8_inner_outer(capsys):
    fac = inner_outer(scalar(A=0.5, G=2.5, C=1.0, H=1.0))
    g, h = float(fac.outer.G[0, 0]), float(fac.outer.H[0, 0])
    diag = fac.diagnostics
    hand_ok = (abs(abs(g) - 2) < 1e-8 and abs(abs(h) - 2) < 1e-8
               and diag["product_mismatch"] < 1e-8 and diag["allpass_deviation"] < 1e-8
               and diag["max_outer_zero_modulus"] < 1)

    s2 = make_s2()
    rng = np.random.default_rng(8)
    tr = simulate(s2, rng.normal(size=(1000, 1)), horizon=1000, seed=8)
    with np.errstate(over="ignore", invalid="ignore"):
        plain = run_filter(s2, tr.measurements[:51])
    err = np.max(np.abs(plain.xhat - tr.states[plain.t]), axis=1)
    keep = plain.t >= 5
    growth = float(np.exp(np.polyfit(plain.t[keep], np.log(err[keep]), 1)[0]))

    res = estimate_via_outer(s2, tr.measurements)
    usable = len(res.t) - res.edge
    perr = np.max(np.abs(res.xhat - tr.states[res.t]), axis=1)[:usable]
    half = usable // 2
    rms1, rms2 = np.sqrt(np.mean(perr[:half] ** 2)), np.sqrt(np.mean(perr[half:] ** 2))
    bounded = bool(np.all(np.isfinite(perr)) and perr.max() < 10 and rms2 < 2 * rms1)
    ok = hand_ok and growth >= 1.5 and bounded
    report(capsys, 8, ok,
           f"hand case G={g:.12f} H={h:.12f}, product mismatch "
           f"{diag['product_mismatch']:.1e}, all-pass deviation "
           f"{diag['allpass_deviation']:.1e} (tol 1e-8), max outer zero modulus "
           f"{diag['max_outer_zero_modulus']:.3f}; S2 plain error growth {growth:.3f}^t "
           f"(>= 1.5), pipeline max error {perr.max():.3f} with half-interval RMS "
           f"{rms1:.3f} -> {rms2:.3f} (bounded)")


# -- 9 ------------------------------------------------------------------------

def test_acceptance_9_time_varying(capsys):
    rng = np.random.default_rng(9)
    worst = 0.0
    for sys in (make_s1(), make_s4(), scalar(H=2.0)):
        tr = simulate(sys, rng.normal(size=(300, sys.m)), horizon=300, seed=9)
        lti = run_filter(sys, tr.measurements)
        tv = run_filter(lambda t, s=sys: s, tr.measurements)
        worst = max(worst, float(np.max(np.abs(lti.xhat - tv.xhat))),
                    float(np.max(np.abs(lti.P - tv.P))))

    s_a = make_s4()
    s_b = make_s4(A=[[0.3, -0.5], [0.2, 1.3]], C=[[1.0, 0.0], [0.5, 1.0]])
    schedule = (s_a, s_b)
    per_step_detectable = all(
        detectable(*zf_riccati_data(s)[::2]).detectable for s in schedule)
    steps = 10_000
    X = np.eye(2)
    traces = np.empty(steps)
    # step t uses A[t], G[t-1] and the output split at t, producing X[t+1]
    for t in range(1, steps + 1):
        prev, cur = schedule[(t - 1) % 2], schedule[t % 2]
        ts = transform_zero_feedthrough(cur)
        X = rde_tv_step(X, cur.A, prev.G, ts.C1, ts.C2, ts.R1, ts.R2, cur.Q)
        traces[t - 1] = np.trace(X)
    ys = rng.normal(size=(steps + 1, 2))
    est = run_filter(lambda t: schedule[t % 2], ys, variant="zf")
    filter_traces = np.trace(est.X, axis1=1, axis2=2)
    periodic = abs(traces[-1] - traces[-3]) < 1e-8
    # the filter starts from a diffuse covariance, the RDE from I; compare once settled
    agree = float(np.max(np.abs(filter_traces[-1000:] - traces[-1001:-1])))
    bounded = bool(np.all(np.isfinite(traces)) and traces.max() < 1e3 and agree < 1e-8)
    ok = worst < 1e-12 and per_step_detectable and periodic and bounded
    report(capsys, 9, ok, f"constant provider vs LTI max difference {worst:.1e} (tol 1e-12); "
           f"periodic schedule over {steps} steps: max trace(X) {traces.max():.4f}, "
           f"period-2 settled {periodic}, filter vs RDE {agree:.1e}, "
           f"per-step detectable {per_step_detectable}")
