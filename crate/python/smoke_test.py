"""Smoke test for the qsd_lab extension.

Build and install first:  pip install --no-build-isolation -e crates/python
"""

import json
import math

import qsd_lab as q


def close(a, b, tol):
    assert abs(a - b) <= tol * max(1.0, abs(b)), (a, b)


def main():
    # Brownian motion on (-1, 1): λ₀ = π²/8, gap = 3π²/8.
    grid = q.Grid(-1.0, 1.0, 1999)
    pair = q.solve_eigen(q.Potential.zero(), grid)
    close(pair.lambda0, math.pi**2 / 8, 1e-5)
    close(pair.gap, 3 * math.pi**2 / 8, 1e-4)
    alpha = pair.qsd()
    assert len(alpha.density) == grid.n
    close(alpha.mean(), 0.0, 1e-9)

    lam0, gap, kappa, alpha_inv_eta, _ = q.closed_form_constants("brownian", 1.0, 1)
    close(pair.lambda0, lam0, 1e-5)
    assert kappa <= gap

    # The conditioned law forgets a lopsided start.
    mu = q.Measure.uniform(grid, 0.2, 0.9)
    mu_t, survival = q.conditioned_flow(q.Potential.zero(), mu, 1.0)
    assert 0.0 < survival < 1.0
    assert q.tv_distance(mu_t, alpha) < 0.1 * q.tv_distance(mu, alpha)
    assert q.w1_distance(mu_t, alpha) >= 0.0
    assert q.chi2_divergence(mu_t, alpha) >= 0.0

    # Decay report for OU on (0, 8).
    ou = q.Potential.quadratic(1.0)
    og = q.Grid(0.0, 8.0, 799)
    times = [0.05 * k for k in range(1, 61)]
    report = json.loads(q.decay_report(ou, q.Measure.uniform(og, 0.5, 2.0), times, example="ou"))
    close(report["lambda0"], 1.0, 1e-3)
    assert report["checks"]["gap_bound"]
    assert report["fit_tv"]["rate"] >= 2.0 - 1e-2

    # κ̃ for the shifted power with λ₀ ≥ 1.
    sp_grid = q.Grid(0.0, 12.0, 1199)
    basic = q.cdfi_rate(q.Potential.shifted_power(3.0), 1.0, sp_grid, "basic")
    refined = q.cdfi_rate(q.Potential.shifted_power(3.0), 1.0, sp_grid, "refined")
    assert 0.0 < basic <= refined

    # Particles: same seed, same positions.
    a = q.simulate(q.Potential.zero(), mu, -1.0, 1.0, 1e-3, 0.5, 2000, seed=3)
    b = q.simulate(q.Potential.zero(), mu, -1.0, 1.0, 1e-3, 0.5, 2000, seed=3)
    assert a[0] == b[0] and a[2] == b[2]

    try:
        q.Grid(0.0, 1.0, 2)
    except ValueError:
        pass
    else:
        raise AssertionError("n = 2 accepted")

    print(f"ok: lambda0={pair.lambda0:.8f} gap={pair.gap:.6f} "
          f"ou_tv_rate={report['fit_tv']['rate']:.4f} kappa_tilde={basic:.4f}/{refined:.4f}")


if __name__ == "__main__":
    main()
