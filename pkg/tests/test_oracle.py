import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surrogate_hmc import oracle
from surrogate_hmc.exceptions import DomainError, InstabilityError
from surrogate_hmc.oracle import (DomainBox, FluxSpectrum, HelioParams, OracleConfig,
                                  generate_dataset, lis_flux, modulated_flux, rigidity_grid,
                                  solve_flux)

BOX = DomainBox()
NO_FAIL = OracleConfig(p_fail=0.0)


def scalar_flux(z, R, A=1.8e4, gamma=2.7, m=0.938272, rb=4.0, w=0.2, phi0=0.35):
    """The oracle's formula chain written out one rigidity at a time."""
    alpha, i_hmf, v_sw, k0, a_par, b_par, a_perp, b_perp = z

    def s(r, a, b):
        return (r / rb) ** a if r <= rb else (r / rb) ** b

    beta = R / math.sqrt(R * R + m * m)
    kappa = k0 * beta * (w * s(R, a_par, b_par) + (1 - w) * s(R, a_perp, b_perp))
    phi = phi0 * (v_sw / 400) * (i_hmf / 5) ** 0.8 * (1 + alpha / 90) / kappa
    t = math.sqrt(R * R + m * m) - m
    r_is = R + phi
    t_is = math.sqrt(r_is * r_is + m * m) - m
    return A * r_is ** (-gamma) * (t * (t + 2 * m)) / (t_is * (t_is + 2 * m))


def random_params(rng, n=None):
    u = rng.random((n or 1, 8))
    p = BOX.lower + u * BOX.width
    return p if n else p[0]


class TestGrid:
    def test_endpoints(self):
        r = rigidity_grid()
        assert r.shape == (32,)
        assert r[0] == 0.2 and r[31] == 200.0

    def test_second_point(self):
        assert abs(rigidity_grid()[1] - 0.24988) < 1e-4
        assert rigidity_grid()[1] == pytest.approx(0.2 * 10 ** (3 / 31), rel=1e-15)

    def test_constant_ratio(self):
        r = rigidity_grid()
        ratios = r[1:] / r[:-1]
        assert np.ptp(ratios) < 1e-12
        assert np.all(np.diff(r) > 0)


class TestLis:
    def test_unit_rigidity(self):
        assert lis_flux(1.0) == 1.8e4

    def test_ten_gv(self):
        assert lis_flux(10.0) == pytest.approx(1.8e4 * 10 ** -2.7, rel=1e-14)
        assert abs(lis_flux(10.0) - 35.91) < 0.01

    def test_monotone(self):
        r = np.geomspace(0.1, 1000, 50)
        assert np.all(np.diff(lis_flux(r)) < 0)

    def test_non_positive_rigidity(self):
        with pytest.raises(ValueError):
            lis_flux(0.0)


class TestEffectiveDc:
    def test_at_break(self):
        z = HelioParams(30, 5, 400, 2.0, 0.7, 1.3, 0.9, 1.1)
        expected = 2.0 * oracle.beta(4.0)
        assert oracle.effective_dc(z, 4.0) == pytest.approx(expected, rel=1e-15)

    def test_zero_slopes(self):
        z = HelioParams(30, 5, 400, 1.7, 0.0, 0.0, 0.0, 0.0)
        r = rigidity_grid()
        np.testing.assert_allclose(oracle.effective_dc(z, r), 1.7 * oracle.beta(r), rtol=1e-15)

    def test_matches_scalar_reimplementation(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            z = random_params(rng)
            R = float(np.exp(rng.uniform(np.log(0.2), np.log(200))))
            k0, a_par, b_par, a_perp, b_perp = z[3:]
            b = R / math.sqrt(R * R + 0.938272**2)
            x = R / 4.0
            sp = x**a_par if x <= 1 else x**b_par
            sq = x**a_perp if x <= 1 else x**b_perp
            expected = k0 * b * (0.2 * sp + 0.8 * sq)
            assert oracle.effective_dc(z, R) == pytest.approx(expected, rel=1e-13)

    def test_continuous_at_break(self):
        z = HelioParams(30, 5, 400, 1.0, 0.5, 1.8, 1.2, 0.4)
        lo, hi = oracle.effective_dc(z, 4.0 * (1 - 1e-12)), oracle.effective_dc(z, 4.0 * (1 + 1e-12))
        assert abs(hi - lo) < 1e-9

    def test_rejects_bad_inputs(self):
        z = HelioParams(30, 5, 400, 1.0, 0.5, 1.0, 0.5, 1.0)
        with pytest.raises(ValueError):
            oracle.effective_dc(z, -1.0)
        with pytest.raises(ValueError):
            oracle.effective_dc(HelioParams(30, 5, 400, 0.0, 0.5, 1.0, 0.5, 1.0), 1.0)


class TestSolve:
    def test_zero_potential_returns_lis(self):
        cfg = OracleConfig(phi0=0.0, p_fail=0.0)
        z = random_params(np.random.default_rng(1))
        spec = solve_flux(z, np.random.default_rng(0), cfg)
        np.testing.assert_array_equal(spec.flux, lis_flux(rigidity_grid()))

    def test_flux_below_lis(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            spec = solve_flux(random_params(rng), rng, NO_FAIL)
            assert np.all(spec.flux <= lis_flux(rigidity_grid()))

    def test_matches_formula_chain(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            z = random_params(rng)
            spec = solve_flux(z, np.random.default_rng(7), NO_FAIL)
            expected = [scalar_flux(z, R) for R in rigidity_grid()]
            np.testing.assert_allclose(spec.flux, expected, rtol=1e-10)

    def test_force_field_jacobian_is_rigidity_ratio(self):
        z = random_params(np.random.default_rng(4))
        r = rigidity_grid()
        phi = oracle.modulation_potential(z)[0]
        expected = lis_flux(r + phi) * r**2 / (r + phi) ** 2
        np.testing.assert_allclose(modulated_flux(z)[0], expected, rtol=1e-9)

    def test_deterministic_given_seed(self):
        z = random_params(np.random.default_rng(5))
        a = solve_flux(z, np.random.default_rng(11))
        b = solve_flux(z, np.random.default_rng(11))
        np.testing.assert_array_equal(a.flux, b.flux)

    def test_failure_injection_rate(self):
        rng = np.random.default_rng(6)
        cfg = OracleConfig(p_fail=0.3)
        z = random_params(rng)
        fails = 0
        for _ in range(2000):
            try:
                solve_flux(z, rng, cfg)
            except InstabilityError:
                fails += 1
        # binomial(2000, 0.3): sd ~ 20.5
        assert abs(fails - 600) < 4 * 20.5

    def test_no_failures_when_disabled(self):
        rng = np.random.default_rng(7)
        z = random_params(rng)
        for _ in range(100_000):
            solve_flux(z, rng, NO_FAIL)

    def test_domain_error_names_field(self):
        z = random_params(np.random.default_rng(8))
        z[1] = 100.0
        with pytest.raises(DomainError) as err:
            solve_flux(z, np.random.default_rng(0))
        assert err.value.field == "i_hmf"
        assert "i_hmf" in str(err.value)


class TestProperties:
    def test_positive_over_box(self):
        P = random_params(np.random.default_rng(9), 10_000)
        flux = modulated_flux(P, NO_FAIL)
        assert np.all(flux > 0) and np.all(np.isfinite(flux))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(1.001, 2.0))
    def test_stronger_field_never_raises_flux(self, seed, factor):
        z = random_params(np.random.default_rng(seed))
        z2 = z.copy()
        z2[1] = min(z[1] * factor, BOX.upper[1])
        assert np.all(modulated_flux(z2) <= modulated_flux(z))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(1.001, 3.0))
    def test_larger_diffusion_never_lowers_flux(self, seed, factor):
        z = random_params(np.random.default_rng(seed))
        z2 = z.copy()
        z2[3] = min(z[3] * factor, BOX.upper[3])
        assert np.all(modulated_flux(z2) >= modulated_flux(z))

    @pytest.mark.parametrize("k", range(8))
    def test_continuity(self, k):
        P = random_params(np.random.default_rng(10 + k), 2000)
        f0 = modulated_flux(P)

        def rel_change(step):
            Q = P.copy()
            Q[:, k] *= 1 + step
            return np.abs(modulated_flux(Q) / f0 - 1)

        big, small = rel_change(1e-4), rel_change(5e-5)
        # linear response: halving the step halves the change
        moving = big > 1e-12
        np.testing.assert_allclose(big[moving] / small[moving], 2.0, rtol=2e-3)
        if oracle.PARAM_NAMES[k] not in ("a_par", "a_perp"):
            assert big.max() < 10 * 1e-4


class TestDataset:
    def test_exact_split(self):
        ds = generate_dataset(1000, seed=0, p_fail=0.0)
        assert ds.is_train.sum() == 900 and (~ds.is_train).sum() == 100
        assert ds.inputs.shape == (1000, 8) and ds.targets.shape == (1000, 32)

    def test_failures_dropped(self):
        ds = generate_dataset(1000, seed=1, p_fail=0.02)
        # binomial(1000, 0.02) failures: mean 20, sd ~4.4
        assert abs(len(ds) - 980) <= 18
        assert ds.metadata["n_failed"] == 1000 - len(ds)
        assert np.all(np.isfinite(ds.inputs)) and np.all(np.isfinite(ds.targets))
        n_test = (~ds.is_train).sum()
        assert abs(ds.is_train.sum() - 0.9 * len(ds)) <= 1
        assert n_test == round(0.1 * len(ds))

    def test_rows_inside_box_and_log_targets(self):
        ds = generate_dataset(500, seed=2, p_fail=0.0)
        assert np.all(ds.inputs >= BOX.lower) and np.all(ds.inputs <= BOX.upper)
        np.testing.assert_allclose(10 ** ds.targets, modulated_flux(ds.inputs), rtol=1e-12)

    def test_reproducible(self):
        a = generate_dataset(300, seed=5)
        b = generate_dataset(300, seed=5)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.targets, b.targets)
        np.testing.assert_array_equal(a.is_train, b.is_train)

    def test_too_small(self):
        with pytest.raises(ValueError):
            generate_dataset(50)

    def test_degenerate_box(self):
        lower = np.array(oracle.DEFAULT_LOWER)
        with pytest.raises(ValueError, match="volume"):
            DomainBox(lower, lower.copy())

    def test_csv_round_trip(self, tmp_path):
        ds = generate_dataset(200, seed=3)
        path = tmp_path / "data.csv"
        oracle.save_dataset(ds, path)
        back = oracle.load_dataset(path)
        np.testing.assert_array_equal(back.inputs, ds.inputs)
        np.testing.assert_array_equal(back.targets, ds.targets)
        np.testing.assert_array_equal(back.is_train, ds.is_train)
        assert back.metadata == ds.metadata
        header = path.read_text().splitlines()[0].split(",")
        assert header[:8] == list(oracle.PARAM_NAMES) and header[-1] == "split"
        assert len(header) == 8 + 32 + 1


class TestSpectrumFile:
    def test_round_trip(self, tmp_path):
        flux = modulated_flux(random_params(np.random.default_rng(12)))[0]
        spec = FluxSpectrum(flux, 0.03 * flux)
        oracle.save_spectrum(spec, tmp_path / "obs.csv")
        back = oracle.load_spectrum(tmp_path / "obs.csv")
        np.testing.assert_array_equal(back.flux, spec.flux)
        np.testing.assert_array_equal(back.sigma, spec.sigma)

    def test_wrong_row_count(self, tmp_path):
        path = tmp_path / "obs.csv"
        path.write_text("rigidity,flux,sigma\n1,2,3\n")
        with pytest.raises(ValueError):
            oracle.load_spectrum(path)

    def test_negative_flux_rejected(self):
        with pytest.raises(ValueError):
            FluxSpectrum(-np.ones(32))
