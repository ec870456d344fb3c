"""Matrix Riccati solver tests against scalar closed forms and scipy."""

import math

import numpy as np
import pytest

from growthtail import (
    LinearFactor1D,
    LinearFactorMD,
    gamma_md,
    lg1d_D,
    lg1d_gamma,
    lg1d_riccati_roots,
    policy_md,
    riccati_residual,
    solve_care,
    theta_sweep,
)
from growthtail.errors import NoStabilizingSolution
from growthtail.riccati import model_from_dict, solution_record


def embed_1d(K, B1, B0, s, g, rho) -> LinearFactorMD:
    """d=m=1 embedding with sigma=(s,0) and gamma=(rho*g, sqrt(1-rho^2)*g)."""
    return LinearFactorMD(
        K=[[K]],
        B1=[[B1]],
        B0=[B0],
        sigma=[[s, 0.0]],
        gamma=[[rho * g, math.sqrt(max(0.0, 1.0 - rho**2)) * g]],
    )


def scalar_twin(K, B1, B0, s, g, rho) -> LinearFactor1D:
    return LinearFactor1D(K=K, B1=B1, B0=B0, sigma_norm=s, gamma_norm=g, rho=rho)


EMBEDDINGS = [
    (-1.0, 1.0, 0.5, 1.0, 1.0, 0.0),
    (-0.5, -0.5, 0.02, 0.2, 0.2, 1.0),  # OU log-price special case
    (-1.2, 0.8, 0.4, 0.9, 1.1, 0.5),
]


def synthetic_m2() -> LinearFactorMD:
    rng = np.random.default_rng(7)
    return LinearFactorMD(
        K=np.diag([-1.0, -2.0]),
        B1=0.5 * rng.normal(size=(2, 2)),
        B0=np.array([0.5, 0.3]),
        sigma=np.hstack([np.diag([0.3, 0.4]), 0.05 * rng.normal(size=(2, 2))]),
        gamma=np.hstack([0.05 * rng.normal(size=(2, 2)), np.diag([0.6, 0.7])]),
    )


class TestSolveCare:
    def test_zero_tilt_is_zero(self):
        model = synthetic_m2()
        qv = solve_care(model, 0.0)
        assert np.all(qv.C == 0.0)
        assert np.all(qv.D == 0.0)

    def test_rho0_embedding_frozen_values(self):
        model = embed_1d(-1.0, 1.0, 0.5, 1.0, 1.0, 0.0)
        qv = solve_care(model, -1.0)
        assert qv.C[0, 0] == pytest.approx(1.0 - math.sqrt(1.5), abs=1e-10)
        assert qv.D[0] == pytest.approx(-0.5 / math.sqrt(6.0), abs=1e-10)
        assert gamma_md(model, -1.0, qv) == pytest.approx(-0.15403910236246117, abs=1e-10)

    def test_ou_logprice_embedding_closed_form(self):
        model = embed_1d(-0.5, -0.5, 0.02, 0.2, 0.2, 1.0)
        qv = solve_care(model, 0.5)
        assert qv.C[0, 0] == pytest.approx(12.5 * (1.0 - math.sqrt(0.5)), abs=1e-8)
        assert qv.D[0] == pytest.approx(-0.25, abs=1e-10)

    @pytest.mark.parametrize("params", EMBEDDINGS)
    def test_scalar_equivalence_across_grid(self, params):
        model = embed_1d(*params)
        twin = scalar_twin(*params)
        from growthtail import lg1d_beta_thetabar

        _, theta_bar = lg1d_beta_thetabar(twin)
        hi = theta_bar - 1e-3 if theta_bar < 1 else 0.97
        for theta in np.linspace(-2.0, hi, 20):
            theta = float(theta)
            qv = solve_care(model, theta)
            assert abs(qv.C[0, 0] - lg1d_riccati_roots(twin, theta)[0]) <= 1e-8
            assert abs(qv.D[0] - lg1d_D(twin, theta)) <= 1e-8
            assert abs(gamma_md(model, theta, qv) - lg1d_gamma(twin, theta)) <= 1e-8

    def test_returned_solution_certificates(self):
        model = synthetic_m2()
        for theta in (-0.8, -0.3, 0.2, 0.4):
            qv = solve_care(model, theta)
            assert np.array_equal(qv.C, qv.C.T)  # stored exactly symmetric
            assert riccati_residual(model, theta, qv.C) <= 1e-9
            rec = solution_record(model, qv)
            assert rec["eig_max_real"] <= -1e-10

    def test_d_solves_linear_system_exactly(self):
        model = synthetic_m2()
        theta = -0.6
        qv = solve_care(model, theta)
        t1 = theta / (1.0 - theta)
        S = model.sigma @ model.sigma.T
        Sinv = np.linalg.inv(S)
        q = model.sigma.shape[1]
        M = model.gamma @ (np.eye(q) + t1 * model.sigma.T @ Sinv @ model.sigma) @ model.gamma.T
        Kt = model.K + t1 * model.gamma @ model.sigma.T @ Sinv @ model.B1
        A_cl = Kt + M @ qv.C
        rhs = t1 * (model.sigma @ model.gamma.T @ qv.C + model.B1).T @ Sinv @ model.B0
        assert np.max(np.abs(A_cl.T @ qv.D + rhs)) <= 1e-12

    def test_scipy_cross_check_m2(self):
        from scipy.linalg import solve_continuous_are

        model = synthetic_m2()
        for theta in (-0.8, 0.3):
            qv = solve_care(model, theta)
            t1 = theta / (1.0 - theta)
            S = model.sigma @ model.sigma.T
            Sinv = np.linalg.inv(S)
            q = model.sigma.shape[1]
            M = model.gamma @ (np.eye(q) + t1 * model.sigma.T @ Sinv @ model.sigma) @ model.gamma.T
            Kt = model.K + t1 * model.gamma @ model.sigma.T @ Sinv @ model.B1
            N = 0.5 * t1 * model.B1.T @ Sinv @ model.B1
            evals, evecs = np.linalg.eigh(M)
            b = evecs @ np.diag(np.sqrt(np.maximum(evals, 0.0)))
            X = solve_continuous_are(Kt, b, 2.0 * N, -np.eye(2))
            assert np.max(np.abs(X - qv.C)) <= 1e-8

    def test_no_stabilizing_solution_past_boundary(self):
        # scalar twin has theta_bar = 0.5
        model = embed_1d(-1.0, 1.0, 0.5, 1.0, 1.0, 0.0)
        with pytest.raises(NoStabilizingSolution):
            solve_care(model, 0.6)


class TestResidual:
    def test_zero_matrix_at_zero_tilt(self):
        model = synthetic_m2()
        assert riccati_residual(model, 0.0, np.zeros((2, 2))) == 0.0

    def test_zero_matrix_residual_is_constant_term(self):
        model = synthetic_m2()
        theta = 0.5  # t1 = 1
        S = model.sigma @ model.sigma.T
        expected = np.linalg.norm(0.5 * model.B1.T @ np.linalg.inv(S) @ model.B1, "fro")
        assert riccati_residual(model, theta, np.zeros((2, 2))) == pytest.approx(
            expected, rel=1e-12
        )
        assert expected > 0


class TestThetaSweep:
    def test_negative_grid_always_solvable(self):
        model = synthetic_m2()
        sweep = theta_sweep(model, np.linspace(-1.0, 0.0, 21))
        assert all(p.ok for p in sweep.points)
        assert all(p.eig_max_real < 0 for p in sweep.points)
        zero_row = sweep.points[-1]
        assert zero_row.theta == 0.0
        assert zero_row.gamma == 0.0

    def test_breakdown_near_scalar_boundary(self):
        model = embed_1d(-1.0, 1.0, 0.5, 1.0, 1.0, 0.0)
        grid = np.round(np.arange(0.0, 0.66, 0.05), 10)
        sweep = theta_sweep(model, grid)
        assert sweep.breakdown_theta is not None
        assert 0.45 < sweep.breakdown_theta <= 0.55
        for p in sweep.points:
            assert p.ok == (p.theta < sweep.breakdown_theta)

    def test_no_loading_reduces_to_constant_drift_value(self):
        # B1 = 0 forces C = D = 0 and Gamma = (theta/(2(1-theta))) B0'(ss')^-1 B0
        model = LinearFactorMD(
            K=np.diag([-1.0, -0.5]),
            B1=np.zeros((2, 2)),
            B0=np.array([0.5, 0.3]),
            sigma=np.hstack([np.diag([0.3, 0.4]), np.zeros((2, 2))]),
            gamma=np.hstack([np.zeros((2, 2)), np.diag([0.6, 0.7])]),
        )
        S = model.sigma @ model.sigma.T
        base = model.B0 @ np.linalg.solve(S, model.B0)
        for theta in (-1.5, -0.4, 0.3, 0.8):
            qv = solve_care(model, theta)
            assert np.max(np.abs(qv.C)) <= 1e-12
            assert np.max(np.abs(qv.D)) <= 1e-12
            expected = 0.5 * theta / (1.0 - theta) * base
            assert gamma_md(model, theta, qv) == pytest.approx(expected, abs=1e-12)

    def test_sweep_values_convex_in_tilt(self):
        sweep = theta_sweep(synthetic_m2(), np.linspace(-0.9, 0.45, 28))
        gammas = [p.gamma for p in sweep.points]
        second_diffs = [a - 2 * b + c for a, b, c in zip(gammas, gammas[1:], gammas[2:])]
        assert min(second_diffs) >= -1e-9

    def test_continuation_has_no_root_jumps(self):
        model = synthetic_m2()
        grid = np.linspace(-0.9, 0.45, 28)
        sweep = theta_sweep(model, grid)
        assert all(p.ok for p in sweep.points)
        dtheta = grid[1] - grid[0]
        slopes = [
            np.linalg.norm(b.quad.C - a.quad.C, "fro") / dtheta
            for a, b in zip(sweep.points, sweep.points[1:])
        ]
        assert max(slopes) <= 100.0 * max(np.median(slopes), 1e-6)

    def test_unsorted_grid_rejected(self):
        with pytest.raises(ValueError):
            theta_sweep(synthetic_m2(), [0.2, 0.1])


class TestPolicyMD:
    def test_merton_limit(self):
        model = synthetic_m2()
        qv = solve_care(model, 0.0)
        pol = policy_md(model, 0.0, qv)
        S = model.sigma @ model.sigma.T
        expected = np.linalg.solve(S, model.B0)
        np.testing.assert_allclose(pol.intercept, expected, atol=1e-12)

    def test_rho0_embedding_policy(self):
        model = embed_1d(-1.0, 1.0, 0.5, 1.0, 1.0, 0.0)
        qv = solve_care(model, -1.0)
        pol = policy_md(model, -1.0, qv)
        # sigma gamma' = 0: gain = B1/(2 ss'), intercept = B0/(2 ss')
        assert pol.gain[0, 0] == pytest.approx(0.5, abs=1e-10)
        assert pol.intercept[0] == pytest.approx(0.25, abs=1e-10)

    def test_ou_logprice_policy_reduction(self):
        model = embed_1d(-0.5, -0.5, 0.02, 0.2, 0.2, 1.0)
        theta = 11.0 / 36.0  # conjugate tilt of target 0.155
        qv = solve_care(model, theta)
        pol = policy_md(model, theta, qv)
        assert pol.gain[0, 0] == pytest.approx(-15.0, abs=1e-8)
        assert pol.intercept[0] == pytest.approx(0.5, abs=1e-10)


class TestModelValidation:
    def test_from_dict_roundtrip(self):
        record = {
            "K": [[-1.0, 0.0], [0.0, -2.0]],
            "B1": [[0.1, 0.2], [0.0, 0.3]],
            "B0": [0.5, 0.3],
            "sigma": [[0.3, 0.0, 0.01, 0.0], [0.0, 0.4, 0.0, 0.01]],
            "gamma": [[0.01, 0.0, 0.6, 0.0], [0.0, 0.01, 0.0, 0.7]],
        }
        model = model_from_dict(record)
        assert model.m == 2 and model.d == 2

    def test_non_hurwitz_rejected(self):
        with pytest.raises(ValueError):
            LinearFactorMD(
                K=[[1.0]], B1=[[1.0]], B0=[0.5], sigma=[[1.0, 0.0]], gamma=[[0.0, 1.0]]
            )

    def test_rank_deficient_sigma_rejected(self):
        with pytest.raises(ValueError):
            LinearFactorMD(
                K=np.diag([-1.0, -1.0]),
                B1=np.zeros((2, 2)),
                B0=[0.5, 0.5],
                sigma=np.vstack([np.ones(4), np.ones(4)]),
                gamma=np.hstack([np.zeros((2, 2)), np.eye(2)]),
            )

    def test_field_set_enforced(self):
        with pytest.raises(ValueError):
            model_from_dict({"K": [[-1.0]]})
