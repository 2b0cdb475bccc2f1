import numpy as np
import pytest

from conftest import alpha_system, example_surface
from gmae.characteristics import SeedCurve, solve_surface
from gmae.verify import (NotInjectiveError, PreconditionError, ResidualSummary, discrete_residuals,
                         fd_crosscheck_suite, grid_derivative, pde_residual_on_graph, pullback_residuals)

PATCH = (1.0, 2.0, 0.1, 0.5)


def graph_patch_surface(n):
    return solve_surface(alpha_system("q"), "generic", "t^3", 0.0, PATCH[:2], PATCH[2:], (n, n))


class TestGridDerivative:
    @pytest.mark.parametrize("n,tol", [(41, 1e-11), (5, 1e-9), (3, 1e-12)])
    def test_orders(self, n, tol):
        x = np.linspace(0, 1, n)
        f = x**2 if n == 3 else (x**4 if n == 5 else np.sin(3 * x))
        df = 2 * x if n == 3 else (4 * x**3 if n == 5 else 3 * np.cos(3 * x))
        d = grid_derivative(f, x[1] - x[0], 0)
        ok = np.isfinite(d)
        assert ok.sum() >= 1
        if n == 41:
            assert np.abs(d[ok] - df[ok]).max() < 1e-7
        else:
            assert np.abs(d[ok] - df[ok]).max() < tol

    def test_holes_propagate(self):
        f = np.linspace(0, 1, 20)
        f[10] = np.nan
        d = grid_derivative(f, 1 / 19, 0)
        assert np.isnan(d[7:14]).all() and np.isfinite(d[3:7]).all()


class TestPullback:
    @pytest.mark.parametrize("name,n", [("q", 3), ("q", 4), ("q", 5), ("nongeneric", 3), ("beaks", 4)])
    def test_examples_pass_gate(self, name, n):
        S = example_surface(name, n)
        r = pullback_residuals(S.sys, S)
        assert r.max_contact_residual < 1e-8 and r.max_psi_residual < 1e-8
        assert r.closed_form_contact < 1e-8 and r.closed_form_psi < 1e-8
        assert r.nodes_checked > 0 and r.passes(1e-6)

    @pytest.mark.parametrize("delta", [1e-6, 1e-4, 1e-3, 1e-2])
    def test_corruption_detected_linearly(self, delta):
        S = example_surface("q", 3)
        jet = S.jet.copy()
        jet[..., 2] += delta * jet[..., 0]
        c, _, _ = discrete_residuals(S.sys, S.s_grid, S.t_grid, jet)
        assert c == pytest.approx(delta, rel=1e-3)

    def test_one_by_one_grid(self):
        with pytest.raises(PreconditionError):
            discrete_residuals(alpha_system("q"), [0.0], [0.0], np.zeros((1, 1, 5)))

    def test_summary_rejects_negative(self):
        with pytest.raises(ValueError):
            ResidualSummary(-1.0, 0.0)

    def test_planar_singular_solution(self):
        # alpha = 0, xi = 1, p = 0 reproduces the jets (s, 0, 1, 0, t)
        S = solve_surface(alpha_system("0"), "generic", "1", 0.0, (0, 1), (-1, 1), (11, 11))
        s, t = np.meshgrid(S.s_grid, S.t_grid, indexing="ij")
        np.testing.assert_allclose(S.jet, np.stack([s, 0 * s, 1 + 0 * s, 0 * s, t], -1), atol=1e-14)
        r = pullback_residuals(S.sys, S)
        assert r.max_contact_residual < 1e-14 and r.max_psi_residual < 1e-14
        with pytest.raises(NotInjectiveError):
            pde_residual_on_graph(S.sys, S, (0, 1, -1, 1))


class TestPDEResidual:
    def test_graph_patch_and_refinement(self):
        coarse = pde_residual_on_graph(alpha_system("q"), graph_patch_surface(41), PATCH)
        fine = pde_residual_on_graph(alpha_system("q"), graph_patch_surface(81), PATCH)
        assert max(fine) < 1e-3
        assert coarse[0] / fine[0] >= 3.5 and coarse[1] / fine[1] >= 3.5

    def test_planar_graph_is_exact(self):
        S = solve_surface(alpha_system("0"), "generic", "t^2/2", 1.0, (0, 1), (-1, 1), (21, 21))
        r = pde_residual_on_graph(S.sys, S, (0, 1, -1, 1))
        assert max(r) < 1e-9

    def test_straddling_patch(self):
        S = example_surface("q", 3)
        with pytest.raises(NotInjectiveError):
            pde_residual_on_graph(S.sys, S, (-0.5, 0.5, -0.5, 0.5))

    def test_too_small_patch(self):
        with pytest.raises(PreconditionError):
            pde_residual_on_graph(alpha_system("q"), graph_patch_surface(41), (1.0, 1.05, 0.1, 0.5))


class TestFDSuite:
    def test_alpha_q(self):
        assert fd_crosscheck_suite(alpha_system("q")) < 1e-9

    def test_rational_family(self):
        box = {v: (1.0, 2.0) for v in "xyzpq"}
        assert fd_crosscheck_suite(alpha_system("-z/(q*x) + 1/x + p/q"), box=box) < 1e-6

    def test_seed_derivatives(self):
        assert fd_crosscheck_suite(alpha_system("q"), SeedCurve("(t - log(2))^4", (0, 1))) < 1e-6
