import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from breakid import dmd
from breakid.errors import DomainError
from breakid.griddata import Grid2D, SnapshotSeries, make_grid


def _series_from(data, shape, dt=0.1):
    g = Grid2D(make_grid(0.1, 5, shape[0]), make_grid(0.1, 5, shape[1]))
    z = data.shape[1]
    return SnapshotSeries(g, np.arange(z) * dt, data.reshape(shape + (z,)))


class TestSnapshotMatrices:
    def test_two_snapshots(self, rng):
        X, Xp, dt = dmd.snapshot_matrices(_series_from(rng.random((12, 2)), (3, 4)))
        assert X.shape == Xp.shape == (12, 1)
        assert dt == pytest.approx(0.1)

    def test_constant(self, rng):
        col = rng.random((12, 1))
        X, Xp, _ = dmd.snapshot_matrices(_series_from(np.repeat(col, 5, axis=1), (3, 4)))
        assert np.array_equal(X, Xp)

    def test_case_dimensions(self, series_of):
        X, Xp, _ = dmd.snapshot_matrices(series_of(1, 25))
        assert X.shape == Xp.shape == (625, 24)

    def test_non_uniform(self, rng):
        g = Grid2D(make_grid(0.1, 5, 3), make_grid(0.1, 5, 3))
        s = SnapshotSeries(g, np.array([0, 0.1, 0.3]), rng.random((3, 3, 3)))
        with pytest.raises(DomainError):
            dmd.snapshot_matrices(s)


class TestComputeDMD:
    def test_steady(self, rng):
        u = rng.random((20, 2))
        X = np.column_stack([u[:, 0], u[:, 1], u[:, 0] + u[:, 1]])
        res = dmd.compute_dmd(X, X, 2)
        np.testing.assert_allclose(res.discrete_eigs, 1.0, atol=1e-10)
        np.testing.assert_allclose(dmd.reconstruct(res, 0.0), X[:, 0], atol=1e-10)

    def test_rank_one_decay(self, rng):
        u = rng.random(30)
        data = np.column_stack([0.8 ** k * u for k in range(8)])
        res = dmd.compute_dmd(data[:, :-1], data[:, 1:], 1, dt=0.5)
        assert res.discrete_eigs[0] == pytest.approx(0.8, rel=1e-12)
        mode = res.modes[:, 0].real
        assert abs(mode @ u) / np.linalg.norm(u) == pytest.approx(1.0, rel=1e-12)
        rec = dmd.reconstruct(res, 0.5 * np.arange(7))
        np.testing.assert_allclose(rec, data[:, :-1], rtol=1e-10)

    def test_rank_beyond_numerical(self, rng):
        u = rng.random(30)
        data = np.column_stack([0.8 ** k * u for k in range(8)])
        res = dmd.compute_dmd(data[:, :-1], data[:, 1:], 3)
        assert res.rank == 1

    def test_rank_range(self, rng):
        X = rng.random((5, 3))
        with pytest.raises(DomainError):
            dmd.compute_dmd(X, X, 4)

    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_linear_system_recovered(self, seed, r):
        rng = np.random.default_rng(seed)
        Q, _ = np.linalg.qr(rng.normal(size=(40, r)))
        lam = rng.uniform(0.5, 1.2, size=r)
        A = Q @ np.diag(lam) @ Q.T
        x = Q @ rng.uniform(0.5, 1.5, size=r)
        snaps = [x]
        for _ in range(r + 3):
            snaps.append(A @ snaps[-1])
        D = np.column_stack(snaps)
        res = dmd.compute_dmd(D[:, :-1], D[:, 1:], r)
        np.testing.assert_allclose(np.sort(res.discrete_eigs.real), np.sort(lam), rtol=1e-8)

    @given(st.integers(0, 10_000))
    def test_conjugate_pairs_and_energy(self, seed):
        rng = np.random.default_rng(seed)
        th = rng.uniform(0.1, 1.0)
        R = 0.95 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        B = rng.normal(size=(25, 2))
        y = np.array([1.0, 0.3])
        snaps = []
        for _ in range(10):
            snaps.append(B @ y + 1e-3 * rng.normal(size=25))
            y = R @ y
        D = np.column_stack(snaps)
        res = dmd.compute_dmd(D[:, :-1], D[:, 1:], 2)
        eig = res.discrete_eigs
        np.testing.assert_allclose(np.sort_complex(eig), np.sort_complex(eig.conj()), atol=1e-10)
        energies = [dmd.compute_dmd(D[:, :-1], D[:, 1:], s).energy_fraction for s in range(1, 8)]
        assert all(0 <= e <= 1 for e in energies)
        assert all(b >= a - 1e-15 for a, b in zip(energies, energies[1:]))
        assert np.all(np.sign(res.continuous_eigs.real) == np.sign(res.radii - 1))


class TestSeriesDMD:
    def test_case1_energy_and_reconstruction(self, series_of):
        s = series_of(1, 25)
        res = dmd.dmd_of_series(s, 10)
        assert res.energy_fraction > 0.99
        D = s.density.reshape(-1, 25)[:, 1:].copy()
        D[res.masked] = 0.0
        rec = dmd.reconstruct(res, s.times[1:] - res.t0)
        assert np.linalg.norm(rec - D) / np.linalg.norm(D) <= 0.05
        full = dmd.reconstruct(res, s.times[1:] - res.t0)
        assert full.dtype == float

    def test_feed_masking(self, series_of):
        s = series_of(1, 25)
        assert dmd.feed_pivots(s).tolist() == [624]
        assert dmd.feed_pivots(series_of(6, 25)).size == 0

    def test_energy_fallback(self, rng):
        data = rng.random((30, 12))
        s = _series_from(data, (5, 6))
        res = dmd.dmd_of_series(s, 1, mask_feed=False)
        assert res.rank > 1 and res.energy_fraction >= 0.99


class TestDynamics:
    def test_unit_eigenvalue(self):
        res = dmd.DMDResult(np.ones((1, 1)), np.array([1.0 + 0j]), np.ones(1), 1, 1.0, 0.1)
        np.testing.assert_allclose(dmd.continuous_time_dynamics(res, [0, 1, 2]), 1.0)

    def test_decay(self):
        res = dmd.DMDResult(np.ones((1, 1)), np.array([0.5 + 0j]), np.ones(1), 1, 1.0, 0.1)
        assert res.continuous_eigs[0].real == pytest.approx(np.log(0.5) / 0.1)
        assert res.continuous_eigs[0].real == pytest.approx(-6.9315, abs=1e-4)
        tr = dmd.continuous_time_dynamics(res, np.linspace(0, 1, 11))[0]
        assert np.all(np.diff(tr) < 0)
        assert "positive" in dmd.SIGN_NOTE


class TestDiagnostics:
    def test_single_mode(self):
        res = dmd.DMDResult(np.ones((4, 1)), np.array([1.1 + 0j]), np.ones(1), 1, 1.0, 0.1)
        d = dmd.spectral_diagnostics(res)
        assert d.radii_dispersion == 0 and d.size_dependence == "independent"
        assert d.growth_count == 1

    def test_all_filtered(self):
        res = dmd.DMDResult(np.ones((4, 1)), np.array([1.0 + 0j]), np.zeros(1), 1, 1.0, 0.1)
        with pytest.raises(DomainError):
            dmd.spectral_diagnostics(res)

    def test_fractions_bounded(self, series_of):
        s = series_of(4, 25)
        d = dmd.spectral_diagnostics(dmd.dmd_of_series(s), s.grid)
        assert d.radii_dispersion >= 0
        for f in (d.edge_fraction, d.diagonal_fraction):
            assert np.all((f >= 0) & (f <= 1))

    def test_bands(self):
        g = Grid2D(make_grid(0.1, 5, 25), make_grid(0.1, 5, 25))
        edge, inner, diag, near = dmd.localization_bands(g)
        assert edge.sum() == 48 and not edge[-1, -1]
        assert np.array_equal(diag, np.eye(25, dtype=bool))
        assert not (diag & near).any()

    def test_case1_majority_growth(self, series_of):
        s = series_of(1, 25)
        d = dmd.spectral_diagnostics(dmd.dmd_of_series(s), s.grid)
        assert d.growth_count > len(d.radii) / 2

    @pytest.mark.parametrize("case,hint", [(1, "continuous"), (2, "continuous"),
                                           (3, "continuous"), (4, "continuous"),
                                           (5, "semi-continuous-candidate"),
                                           (6, "product-delta-candidate")])
    def test_advice(self, series_of, case, hint):
        s = series_of(case, 25)
        res = dmd.dmd_of_series(s)
        adv = dmd.library_advice(dmd.spectral_diagnostics(res, s.grid))
        assert adv["continuity"] == hint
        expect_rate = "independent" if case in (1, 3, 6) else "dependent"
        assert adv["rate"] == expect_rate

    def test_advice_mode(self):
        assert dmd.advice_library_mode({"continuity": "product-delta-candidate",
                                        "rate": "independent"}) == ("discontinuous", True)


def test_report_files(series_of, tmp_path):
    s = series_of(6, 25)
    res = dmd.dmd_of_series(s)
    diag = dmd.spectral_diagnostics(res, s.grid)
    adv = dmd.dmd_report(res, diag, tmp_path)
    assert (tmp_path / f"mode_{res.rank - 1}.csv").exists()
    assert np.loadtxt(tmp_path / "mode_0.csv", delimiter=",").shape == (15, 15)
    tab = np.loadtxt(tmp_path / "eigenvalues.csv", delimiter=",", skiprows=1)
    assert tab.shape == (res.rank, 7)
    header = (tmp_path / "eigenvalues.csv").read_text().splitlines()[0]
    assert header == "mode,re_lambda,im_lambda,radius,re_omega,im_omega,abs_b"
    rec = json.loads((tmp_path / "dmd_advice.json").read_text())
    assert rec["advice"] == adv and rec["advice"]["continuity"] == "product-delta-candidate"
