import numpy as np
import pytest

from crossimpact import hawkes
from crossimpact.hawkes import (EventStream, ExpTerm, HawkesError, HawkesSpec,
                                analytic_flow_spectrum, analytic_kernel,
                                imbalance_l1, simulate, stationary_intensity,
                                validate_spec)


def poisson_spec(mu=(1.0, 1.0), sizes=(1.0, 1.0)):
    return HawkesSpec.from_matrices(mu=list(mu), sizes=list(sizes), beta=1.0)


def scalar_hawkes(alpha=0.5, beta=1.0, mu=1.0, size=1.0):
    return HawkesSpec.from_matrices(mu=[mu], sizes=[size], beta=beta,
                                    aa=[[alpha * beta]], bb=[[alpha * beta]])


class TestValidate:
    def test_no_excitation_passes(self):
        rep = validate_spec(poisson_spec())
        assert rep.ok
        assert rep.spectral_radius == 0.0

    def test_unstable_branching(self):
        spec = HawkesSpec.from_matrices(mu=[1.0], sizes=[1.0], beta=1.0,
                                        aa=[[1.2]])
        rep = validate_spec(spec)
        assert not rep.stable

    def test_symmetric_self_excitation_radius(self):
        # brute force: eigenvalues of the 2x2 matrix of integrated kernels
        spec = scalar_hawkes(alpha=0.5)
        rep = validate_spec(spec)
        assert rep.ok
        full = np.array([[0.5, 0.0], [0.0, 0.5]])
        assert rep.spectral_radius == pytest.approx(
            np.abs(np.linalg.eigvals(full)).max(), abs=1e-12)
        assert rep.spectral_radius == pytest.approx(0.5, abs=1e-12)

    def test_unbalanced_blocks_flagged(self):
        spec = HawkesSpec.from_matrices(mu=[1.0], sizes=[1.0], beta=1.0,
                                        aa=[[0.3]], bb=[[0.2]])
        rep = validate_spec(spec)
        assert not rep.balanced
        assert not rep.martingale_compatible

    def test_compatible_cross_terms(self):
        # aa - ba == bb - ab term by term
        spec = HawkesSpec.from_matrices(mu=[1.0], sizes=[1.0], beta=2.0,
                                        aa=[[0.6]], ba=[[0.2]],
                                        bb=[[0.7]], ab=[[0.3]])
        rep = validate_spec(spec)
        assert rep.martingale_compatible
        assert rep.balanced

    def test_bad_parameters_rejected(self):
        with pytest.raises(HawkesError):
            HawkesSpec(mu=np.array([-1.0]), phi={},
                       sizes=np.array([1.0]))
        with pytest.raises(HawkesError):
            HawkesSpec(mu=np.array([1.0]),
                       phi={"aa": [[[ExpTerm(0.1, -1.0)]]]},
                       sizes=np.array([1.0]))


class TestStationaryIntensity:
    def test_poisson(self):
        theta = stationary_intensity(poisson_spec(mu=(1.5, 0.7)))
        assert np.allclose(theta, [1.5, 0.7])

    def test_scalar_fixed_point(self):
        theta = stationary_intensity(scalar_hawkes(alpha=0.5, mu=1.0))
        assert theta[0] == pytest.approx(2.0, rel=1e-12)

    def test_unstable_rejected(self):
        spec = HawkesSpec.from_matrices(mu=[1.0], sizes=[1.0], beta=1.0,
                                        aa=[[1.2]])
        with pytest.raises(HawkesError):
            stationary_intensity(spec)

    def test_matches_simulated_rate(self):
        spec = scalar_hawkes(alpha=0.4, mu=0.8)
        theta = stationary_intensity(spec)[0]
        horizon = 20000.0
        stream = simulate(spec, horizon, seed=5)
        buys = (stream.sides > 0).sum()
        # Hawkes counts are overdispersed; allow 6 Poisson sigmas
        assert abs(buys / horizon - theta) < 6 * np.sqrt(theta / horizon)


class TestSimulate:
    def test_poisson_count(self):
        spec = HawkesSpec.from_matrices(mu=[2.0], sizes=[1.0], beta=1.0)
        stream = simulate(spec, 1000.0, seed=42)
        buys = (stream.sides > 0).sum()
        assert abs(buys - 2000.0) < 4 * np.sqrt(2000.0)

    def test_deterministic(self):
        spec = scalar_hawkes()
        s1 = simulate(spec, 500.0, seed=9)
        s2 = simulate(spec, 500.0, seed=9)
        assert np.array_equal(s1.times, s2.times)
        assert np.array_equal(s1.assets, s2.assets)
        assert np.array_equal(s1.sides, s2.sides)

    def test_unstable_rejected(self):
        spec = HawkesSpec.from_matrices(mu=[1.0], sizes=[1.0], beta=1.0,
                                        aa=[[1.5]])
        with pytest.raises(HawkesError):
            simulate(spec, 10.0, seed=0)

    def test_sizes_match_spec(self):
        spec = HawkesSpec.from_matrices(mu=[1.0, 1.0], sizes=[2.0, 5.0],
                                        beta=1.0)
        stream = simulate(spec, 200.0, seed=1)
        assert np.all(stream.sizes == spec.sizes[stream.assets])

    def test_buy_sell_balance(self):
        spec = scalar_hawkes(alpha=0.3, mu=1.0)
        stream = simulate(spec, 10000.0, seed=17)
        buys = (stream.sides > 0).sum()
        sells = (stream.sides < 0).sum()
        n = buys + sells
        # two-sided binomial test at 4 sigma
        assert abs(buys - sells) < 4 * np.sqrt(n)

    def test_zero_horizon(self):
        stream = simulate(poisson_spec(), 0.0, seed=0)
        assert len(stream) == 0

    def test_csv_roundtrip(self, tmp_path):
        spec = HawkesSpec.from_matrices(mu=[1.0, 0.5], sizes=[1.0, 3.0],
                                        beta=1.0)
        stream = simulate(spec, 100.0, seed=3)
        path = tmp_path / "events.csv"
        stream.to_csv(path)
        back = EventStream.from_csv(path, d=2, horizon=100.0)
        assert np.allclose(back.times, stream.times, atol=1e-9)
        assert np.array_equal(back.assets, stream.assets)
        assert np.array_equal(back.sides, stream.sides)
        assert np.allclose(back.sizes, stream.sizes)


class TestFlowSpectrum:
    def test_white_flow_flat(self):
        spec = poisson_spec(mu=(1.5, 0.5), sizes=(2.0, 1.0))
        om = np.linspace(0.0, 3.0, 7)
        s = analytic_flow_spectrum(spec, om)
        expect = 2.0 * np.diag([1.5 * 4.0, 0.5 * 1.0])
        for k in range(len(om)):
            assert np.allclose(s[k], expect, atol=1e-12)

    def test_scalar_closed_form(self):
        # textbook one-asset form derived by hand:
        # 2 theta |1 - phihat|^{-2} with phihat = alpha beta/(beta + i w)
        alpha, beta, mu = 0.5, 2.0, 1.0
        spec = scalar_hawkes(alpha=alpha, beta=beta, mu=mu)
        theta = mu / (1 - alpha)
        om = np.linspace(0.0, 10.0, 21)
        phihat = alpha * beta / (beta + 1j * om)
        expect = 2 * theta * np.abs(1 - phihat) ** -2
        s = analytic_flow_spectrum(spec, om)
        assert np.allclose(s[:, 0, 0].real, expect, rtol=1e-12)
        assert np.abs(s.imag).max() < 1e-12

    def test_hermitian_psd_on_grid(self):
        spec = HawkesSpec.from_matrices(
            mu=[0.6, 0.45], sizes=[1.0, 2.0], beta=0.25,
            aa=[[0.06, 0.02], [0.035, 0.08]],
            bb=[[0.06, 0.02], [0.035, 0.08]])
        om = np.linspace(-8.0, 8.0, 129)
        s = analytic_flow_spectrum(spec, om)
        herm = np.abs(s - s.conj().transpose(0, 2, 1)).max()
        assert herm < 1e-10 * np.abs(s).max()
        eigs = np.linalg.eigvalsh(0.5 * (s + s.conj().transpose(0, 2, 1)))
        assert eigs.min() >= -1e-10 * np.abs(eigs).max()

    def test_matches_periodogram(self):
        # long-run averaged periodogram of binned simulated flow
        spec = scalar_hawkes(alpha=0.4, beta=0.8, mu=1.0)
        n_days, t_day, delta = 20, 2000.0, 1.0
        n_bins = int(t_day / delta)
        acc = None
        for day in range(n_days):
            stream = simulate(spec, t_day, seed=300 + day)
            q = np.zeros(n_bins)
            idx = np.clip(np.ceil(stream.times / delta).astype(int) - 1,
                          0, n_bins - 1)
            np.add.at(q, idx, stream.sides * stream.sizes)
            pg = np.abs(np.fft.fft(q)) ** 2 / n_bins
            acc = pg if acc is None else acc + pg
        acc /= n_days
        # smooth the periodogram over neighboring frequencies
        k = 21
        kernel = np.ones(k) / k
        smooth = np.convolve(np.concatenate([acc, acc[:k]]), kernel,
                             mode="same")[:n_bins]
        om = 2 * np.pi * np.arange(n_bins) / n_bins
        om = np.where(om <= np.pi, om, om - 2 * np.pi)
        s = analytic_flow_spectrum(spec, om)[:, 0, 0].real
        sel = (np.abs(om) > 0.3) & (np.abs(om) < 2.8)
        rel = np.abs(smooth[sel] - s[sel]) / s[sel]
        assert np.median(rel) < 0.15


class TestAnalyticKernel:
    def test_no_imbalance_constant(self):
        spec = poisson_spec(mu=(1.0, 1.0), sizes=(2.0, 3.0))
        lam = np.array([[1.0, 0.2], [0.2, 0.8]])
        k = analytic_kernel(spec, lam, delta=1.0, tau_max=5)
        for t in range(6):
            assert np.allclose(k.values[t], lam, atol=1e-14)

    def test_scalar_closed_form(self):
        alpha_over_beta, beta = 0.5, 0.7
        spec = scalar_hawkes(alpha=alpha_over_beta, beta=beta)
        lam = np.array([[1.3]])
        k = analytic_kernel(spec, lam, delta=0.5, tau_max=40)
        k0 = lam[0, 0] / (1 - alpha_over_beta)
        t = 0.5 * np.arange(41)
        expect = k0 * (1 - alpha_over_beta * (1 - np.exp(-beta * t)))
        assert np.allclose(k.values[:, 0, 0], expect, rtol=1e-12)

    def test_tail_reaches_permanent(self):
        spec = scalar_hawkes(alpha=0.5, beta=0.7)
        lam = np.array([[1.0]])
        k = analytic_kernel(spec, lam, delta=1.0, tau_max=40)
        rel = abs(k.values[-1, 0, 0] - 1.0) / 1.0
        assert rel < 1e-6

    def test_boundary_recovery_invariant(self):
        # K(0) diag(v) (I - int phi) = Lambda diag(v) at 1e-10 relative
        spec = HawkesSpec.from_matrices(
            mu=[0.6, 0.45], sizes=[1.0, 2.5], beta=0.25,
            aa=[[0.06, 0.02], [0.035, 0.08]],
            bb=[[0.06, 0.02], [0.035, 0.08]])
        lam = np.array([[1.0, 0.2], [0.2, 1.1]])
        k = analytic_kernel(spec, lam, delta=1.0, tau_max=10)
        dv = np.diag(spec.sizes)
        lhs = k.k0 @ dv @ (np.eye(2) - imbalance_l1(spec))
        rhs = lam @ dv
        assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(rhs).max()

    def test_incompatible_spec_rejected(self):
        spec = HawkesSpec.from_matrices(mu=[1.0], sizes=[1.0], beta=1.0,
                                        aa=[[0.3]], bb=[[0.2]])
        with pytest.raises(HawkesError):
            analytic_kernel(spec, np.array([[1.0]]), 1.0, 5)
