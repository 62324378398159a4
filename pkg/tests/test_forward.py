import numpy as np
import pytest
from hypothesis import example, given, strategies as st

from breakid import forward as fw
from breakid.errors import DomainError, IncompatibleGridError, IntegrationError
from breakid.forward import (ContinuousStoich, KernelSpec, Monomial, ProductDeltaStoich,
                             SingleDeltaStoich, build_operator, case_kernels, generate_case,
                             initial_condition, kernel_from_dict, kernel_to_dict, moment_report,
                             point_share, sampling_matrix, simulate, uniform_share)
from breakid.griddata import Grid2D, case_grid, make_grid, moment


class TestKernels:
    def test_case1(self):
        k = case_kernels(1)
        assert isinstance(k.stoich, ContinuousStoich)
        (t,) = k.stoich.terms
        assert (t.coef, t.p, t.q) == (4.0, -1, -1)
        assert k.rate_at(2.0, 3.0) == 1.0
        assert k.fragment_count(2.0, 3.0) == pytest.approx(4.0)

    def test_case4_rate_and_split(self):
        k = case_kernels(4)
        assert k.rate_at(2.0, 3.0) == pytest.approx(5.0)
        # 2/(v'w') uniform daughters: each birth term carries 2 B(1/v') + 2 B(1/w') after
        # multiplying by the rate v' + w'
        assert k.fragment_count(2.0, 3.0) == pytest.approx(2.0)

    def test_case5_count(self):
        k = case_kernels(5)
        assert isinstance(k.stoich, SingleDeltaStoich)
        assert k.fragment_count(2.0, 3.0) == pytest.approx(2.0)

    def test_case6(self):
        k = case_kernels(6)
        assert k.stoich == ProductDeltaStoich(4.0, 0.5, 0.5)
        assert k.rate_at(1.0, 1.0) == 0.25

    def test_unknown(self):
        with pytest.raises(DomainError):
            case_kernels(7)

    @pytest.mark.parametrize("case", range(1, 7))
    def test_manifest_roundtrip(self, case):
        k = case_kernels(case)
        assert kernel_from_dict(kernel_to_dict(k)) == k

    def test_manifest_malformed(self):
        with pytest.raises(DomainError):
            kernel_from_dict({"stoich": {"type": "continuous"}, "rate": [[1, 0, 0]]})

    def test_ratio_range(self):
        with pytest.raises(DomainError):
            ProductDeltaStoich(4.0, 1.5, 0.5)

    def test_single_fragment_rejected(self):
        k = KernelSpec(ContinuousStoich((Monomial(0.5, -1, -1),)), (Monomial(1.0),))
        with pytest.raises(DomainError):
            build_operator(k, case_grid(1))


class TestInitialCondition:
    def test_zero(self):
        assert not initial_condition("monodisperse", case_grid(1), 0.0).any()

    def test_monodisperse_moments(self):
        g = case_grid(1)
        W = g.cell_weights
        V, Wc = g.mesh()
        n = initial_condition("monodisperse", g, 1.0)
        assert (n * W).sum() == pytest.approx(1.0, rel=1e-14)
        assert (n * W * V * Wc).sum() == pytest.approx(25.0, rel=1e-14)

    def test_polydisperse_truncated(self):
        ax = make_grid(1e-3, 10, 80)
        g = Grid2D(ax, ax)
        n = initial_condition("polydisperse", g, 1.0)
        V, Wc = g.mesh()
        assert (n * g.cell_weights).sum() == pytest.approx(1.0, rel=0.02)
        assert (n * g.cell_weights * V * Wc).sum() == pytest.approx(1.0, rel=0.02)

    def test_negative(self):
        with pytest.raises(DomainError):
            initial_condition("monodisperse", case_grid(1), -1.0)


class TestShares:
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20), st.integers(3, 30))
    def test_point_packets_conserve(self, u, n):
        x = make_grid(0.1, 5, n).pivots
        s = x[0] + np.array(u) * (x[-1] - x[0])
        P = point_share(x, s, allow_interpolation=True)
        np.testing.assert_allclose(P.sum(axis=0), 1.0, rtol=1e-12)
        np.testing.assert_allclose(x @ P, s, rtol=1e-12)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(3, 20))
    @example(0.0, 5.140751251148571e-12, 3)
    def test_bilinear_conserves_four_moments(self, a, b, n):
        x = make_grid(0.1, 5, n).pivots
        sv, sw = x[0] + a * (x[-1] - x[0]), x[0] + b * (x[-1] - x[0])
        Pv = point_share(x, np.array([sv]), allow_interpolation=True)[:, 0]
        Pw = point_share(x, np.array([sw]), allow_interpolation=True)[:, 0]
        W = np.outer(Pv, Pw)
        V, Wm = np.meshgrid(x, x, indexing="ij")
        for f, target in ((1, 1), (V, sv), (Wm, sw), (V * Wm, sv * sw)):
            assert np.sum(W * f) == pytest.approx(target, rel=1e-10)

    @given(st.integers(3, 30))
    def test_uniform_share_moments(self, n):
        x = make_grid(0.1, 5, n).pivots
        H = uniform_share(x, "drop")
        np.testing.assert_allclose(H.sum(axis=0), x - x[0], rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(x @ H, (x ** 2 - x[0] ** 2) / 2, rtol=1e-12, atol=1e-15)
        Ha = uniform_share(x, "assign")
        np.testing.assert_allclose(Ha.sum(axis=0), x, rtol=1e-12)

    def test_off_pivot_packet_needs_interpolation(self):
        with pytest.raises(IncompatibleGridError):
            point_share(np.array([1.0, 2.0, 4.0]), np.array([1.5]))


class TestOperator:
    @pytest.mark.parametrize("case", range(1, 7))
    def test_metzler(self, case):
        M = build_operator(case_kernels(case), case_grid(case)).matrix
        off = M - np.diag(np.diag(M))
        assert off.min() >= 0
        assert np.diag(M).max() <= 1e-14

    @pytest.mark.parametrize("case", range(1, 6))
    def test_net_production(self, case):
        # sub-grid fragments kept, so every parent produces exactly nu - 1 extra particles
        g = case_grid(case)
        k = case_kernels(case)
        op = build_operator(k, g, subgrid="assign")
        V, W = g.mesh()
        expect = ((k.fragment_count(V, W) - 1) * k.rate_at(V, W)).ravel()
        np.testing.assert_allclose(op.matrix.sum(axis=0), expect, rtol=1e-10)

    def test_case6_index_shift(self):
        g = case_grid(6)
        op = build_operator(case_kernels(6), g)
        x, y = g.shape
        B = op.birth
        for i in range(x):
            for j in range(y):
                row = B[i * y + j]
                if i == x - 1 or j == y - 1:
                    assert not row.any()
                else:
                    assert np.flatnonzero(row).tolist() == [(i + 1) * y + j + 1]
                    assert row[(i + 1) * y + j + 1] == 4.0
        # interior parents: 4 daughters at rate 1/4, one parent lost
        cols = op.matrix.sum(axis=0).reshape(x, y)
        np.testing.assert_allclose(cols[1:, 1:], 0.75, rtol=1e-12)

    def test_case6_needs_compatible_grid(self):
        with pytest.raises(IncompatibleGridError):
            build_operator(case_kernels(6), case_grid(1))

    def test_zero_rate(self):
        k = KernelSpec(ContinuousStoich((Monomial(4.0, -1, -1),)), (Monomial(0.0),))
        assert not build_operator(k, case_grid(1)).matrix.any()

    def test_death_diagonal(self):
        g = case_grid(2)
        op = build_operator(case_kernels(2), g)
        V, W = g.mesh()
        # the diagonal is -Gamma plus the self-birth share
        self_birth = np.diag(op.birth) * (V * W).ravel()
        np.testing.assert_allclose(np.diag(op.matrix), -(V * W).ravel() + self_birth, rtol=1e-12)

    def test_apply_matches_matrix(self, rng):
        op = build_operator(case_kernels(4), case_grid(4))
        N = rng.random((op.size, 3))
        np.testing.assert_allclose(op.apply(N), op.matrix @ N, rtol=1e-12, atol=1e-12)


class TestSimulate:
    def test_zero_ic(self):
        op = build_operator(case_kernels(1), case_grid(1))
        s = simulate(op, np.zeros(case_grid(1).shape), np.linspace(0, 1, 4))
        assert not s.density.any()

    def test_superposition_and_positivity(self, rng):
        g = case_grid(3)
        op = build_operator(case_kernels(3), g)
        t = np.linspace(0, 1, 5)
        a, b = rng.random(g.shape), rng.random(g.shape)
        sa = simulate(op, a, t).density
        sb = simulate(op, b, t).density
        sab = simulate(op, 2 * a + 3 * b, t).density
        np.testing.assert_allclose(sab, 2 * sa + 3 * sb, rtol=1e-6, atol=1e-6 * sab.max())
        assert sab.min() >= -1e-12 * sab.max()

    def test_tolerance_insensitive(self):
        g = case_grid(3)
        op = build_operator(case_kernels(3), g)
        ic = initial_condition("monodisperse", g)
        t = np.linspace(0, 1, 5)
        a = simulate(op, ic, t, rel_tol=1e-8).density
        b = simulate(op, ic, t, rel_tol=1e-10).density
        assert np.abs(a - b).max() <= 1e-6 * np.abs(b).max()

    def test_backends_agree(self):
        g = case_grid(6)
        op = build_operator(case_kernels(6), g)
        ic = initial_condition("polydisperse", g)
        t = np.linspace(0, 1, 6)
        a = simulate(op, ic, t, backend="ivp").density
        b = simulate(op, ic, t, backend="expm").density
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-9 * b.max())

    def test_case6_moments(self):
        s = generate_case(6, n_times=11)
        m00, m11 = moment(s, 0, 0), moment(s, 1, 1)
        # bottom-row parents shed daughters below the mesh, a ~1e-6 effect
        np.testing.assert_allclose(m00 / m00[0], np.exp(0.75 * s.times), rtol=1e-4)
        np.testing.assert_allclose(m11 / m11[0], 1.0, rtol=1e-4)

    def test_integration_failure(self, monkeypatch):
        class Fail:
            success, message, status, nfev = False, "step size too small", -1, 12
            t = np.array([0.0, 0.3])

        monkeypatch.setattr(fw, "solve_ivp", lambda *a, **k: Fail())
        g = case_grid(1)
        op = build_operator(case_kernels(1), g)
        with pytest.raises(IntegrationError) as exc:
            simulate(op, initial_condition("monodisperse", g), np.linspace(0, 1, 3))
        assert exc.value.diagnostics["t_reached"] == 0.3

    def test_bad_times(self):
        g = case_grid(1)
        op = build_operator(case_kernels(1), g)
        with pytest.raises(DomainError):
            simulate(op, initial_condition("monodisperse", g), [0.0, 1.0, 0.5])


class TestRefinedGeneration:
    def test_output_on_data_grid(self):
        s = generate_case(1, n_times=5, refine=2)
        assert s.density.shape == (25, 25, 5)
        assert s.meta["refine"] == 2 and s.meta["case_id"] == 1
        # the top pivot keeps the count of the surviving parent particles
        top = s.density[-1, -1] * s.grid.cell_weights[-1, -1]
        assert top[0] == pytest.approx(1.0, rel=1e-12)

    def test_sampling_matrix_identity_rows(self):
        coarse = make_grid(0.1, 5, 5).pivots
        fine = fw.refine_axis(make_grid(0.1, 5, 5), 3).pivots
        S = sampling_matrix(fine, coarse)
        np.testing.assert_allclose(S[:-1] @ fine, coarse[:-1], rtol=1e-12)

    def test_sampling_matrix_incompatible(self):
        with pytest.raises(IncompatibleGridError):
            sampling_matrix(make_grid(0.1, 5, 7).pivots, make_grid(0.1, 5, 5).pivots)

    def test_moment_report(self):
        s = generate_case(6, n_times=3)
        rep = moment_report(s)
        assert rep.shape == (3, 5)
        np.testing.assert_allclose(rep[:, 0], s.times)
