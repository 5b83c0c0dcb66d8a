import itertools

import numpy as np
import pytest

from gaindelay import clicks
from gaindelay.errors import InputDataError

from oracles import fock_click_probabilities, fock_tmsv_moments, thermal_click_probability

PATTERNS = ["".join(b) for b in itertools.product("01", repeat=4)]


class TestStates:
    def test_vacuum(self):
        np.testing.assert_allclose(clicks.tmsv_state(0.0).sigma, 0.5 * np.eye(4), atol=1e-15)

    def test_tmsv_moments(self):
        st = clicks.tmsv_state(1.0)
        mean, cov = fock_tmsv_moments(1.0, cutoff=40)
        np.testing.assert_allclose(st.mean_photons(), 1.3810978455418157, rtol=1e-12)
        assert st.number_covariance()[0, 1] == pytest.approx(3.2885291045020608, rel=1e-12)
        # truncated Fock oracle agrees with the closed forms
        assert mean == pytest.approx(1.3810978455418157, rel=1e-4)
        assert cov == pytest.approx(3.2885291045020608, rel=1e-3)

    def test_rejects_negative_squeezing(self):
        with pytest.raises(ValueError):
            clicks.tmsv_state(-0.1)

    def test_rejects_unphysical(self):
        with pytest.raises(ValueError, match="uncertainty"):
            clicks.GaussianState(0.1 * np.eye(2))

    def test_loss(self):
        st = clicks.tmsv_state(1.0)
        np.testing.assert_allclose(clicks.apply_loss(st, 1.0).sigma, st.sigma)
        np.testing.assert_allclose(clicks.apply_loss(st, 0.0).sigma, 0.5 * np.eye(4), atol=1e-15)
        np.testing.assert_allclose(clicks.apply_loss(st, 0.07).mean_photons(),
                                   0.09667684918792710, rtol=1e-12)
        with pytest.raises(ValueError):
            clicks.apply_loss(st, 1.2)

    def test_split(self):
        st = clicks.apply_loss(clicks.tmsv_state(0.8), 0.3)
        out = clicks.split_to_detectors(st)
        assert out.n_modes == 4
        n = st.mean_photons()
        np.testing.assert_allclose(out.mean_photons(), [n[0] / 2, n[0] / 2, n[1] / 2, n[1] / 2],
                                   rtol=1e-12)
        vac = clicks.split_to_detectors(clicks.GaussianState.vacuum(2))
        np.testing.assert_allclose(vac.sigma, 0.5 * np.eye(8), atol=1e-15)


class TestPatterns:
    def test_vacuum(self):
        p = clicks.all_pattern_probabilities(clicks.GaussianState.vacuum(4))
        assert p["0000"] == 1.0
        assert all(p[k] == 0.0 for k in PATTERNS[1:])

    def test_thermal(self):
        st = clicks.GaussianState.thermal(1.0)
        assert clicks.pattern_probability(st, "1") == pytest.approx(0.5, abs=1e-15)
        assert clicks.pattern_probability(st, "1") == pytest.approx(thermal_click_probability(1.0))

    @pytest.mark.parametrize("eps, eta", [(0.5, 0.07), (0.5, 0.5), (0.8814, 1.0), (0.3, 0.9)])
    def test_fock_oracle(self, eps, eta):
        model = clicks.detector_model(eps, eta)
        ref = fock_click_probabilities(eps, eta, cutoff=20)
        assert max(abs(model[k] - ref[k]) for k in PATTERNS) < 1e-6

    def test_cutoff_doubling_converges(self):
        model = clicks.detector_model(1.0, 0.5)
        e20 = max(abs(model[k] - v) for k, v in fock_click_probabilities(1.0, 0.5, 20).items())
        e40 = max(abs(model[k] - v) for k, v in fock_click_probabilities(1.0, 0.5, 40).items())
        assert e40 < 1e-3 * e20

    def test_single_pattern_matches_table(self):
        st = clicks.split_to_detectors(clicks.apply_loss(clicks.tmsv_state(0.7), 0.2))
        table = clicks.all_pattern_probabilities(st)
        for k in PATTERNS:
            assert clicks.pattern_probability(st, k) == pytest.approx(table[k], abs=1e-14)

    def test_permutation_covariance(self):
        st = clicks.split_to_detectors(clicks.apply_loss(clicks.tmsv_state(0.9), [0.3, 0.6]))
        perm = [2, 0, 3, 1]
        P = np.eye(4)[perm]
        moved = clicks.passive(st, P)
        a, b = clicks.all_pattern_probabilities(st), clicks.all_pattern_probabilities(moved)
        for k in PATTERNS:
            # mode perm[j] of the original becomes mode j
            relabel = "".join(k[perm.index(j)] for j in range(4))
            assert b[k] == pytest.approx(a[relabel], abs=1e-14)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            clicks.pattern_probability(clicks.GaussianState.vacuum(4), "010")


class TestClickStats:
    def test_normalisation_enforced(self):
        with pytest.raises(ValueError, match="sum"):
            clicks.ClickStats({"0": 0.5, "1": 0.4})
        with pytest.raises(ValueError):
            clicks.ClickStats({"0": 1.2, "1": -0.2})

    def test_sampling_deterministic(self):
        p = clicks.detector_model(1.0, 0.07)
        a, b = clicks.sample_clicks(p, 10**5, seed=2), clicks.sample_clicks(p, 10**5, seed=2)
        assert a.probabilities == b.probabilities and a.shots == 10**5

    def test_json_round_trip(self, tmp_path):
        obs = clicks.sample_clicks(clicks.detector_model(1.0, 0.07), 1000, seed=1)
        obs.save(tmp_path / "c.json")
        back = clicks.ClickStats.load(tmp_path / "c.json")
        assert back.probabilities == pytest.approx(obs.probabilities) and back.shots == 1000

    def test_csv(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("# counts\npattern,count\n0000,90\n1010,10\n")
        st = clicks.ClickStats.load(p)
        assert st["1010"] == pytest.approx(0.1) and st["0101"] == 0.0 and st.shots == 100

    @pytest.mark.parametrize("body, line, col", [("0000,90\n1010,x\n", 2, 6),
                                                 ("0000,90\n10a0,3\n", 2, 1),
                                                 ("0000,90,1\n", 1, 1)])
    def test_csv_errors(self, tmp_path, body, line, col):
        p = tmp_path / "bad.csv"
        p.write_text(body)
        with pytest.raises(InputDataError) as exc:
            clicks.ClickStats.load(p)
        assert (exc.value.line, exc.value.column) == (line, col)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"shots": 3}')
        with pytest.raises(InputDataError):
            clicks.ClickStats.load(p)


class TestGainEstimate:
    @pytest.mark.parametrize("eps, tol", [(0.5, 0.02), (1.0, 0.02), (1.407, 0.02), (3.0, 0.05)])
    def test_round_trip(self, eps, tol):
        obs = clicks.sample_clicks(clicks.detector_model(eps, 0.07), 10**6, seed=11)
        est = clicks.estimate_gain(obs, 0.07)
        assert est.eps == pytest.approx(eps, rel=tol) and not est.degenerate

    def test_mle(self):
        obs = clicks.sample_clicks(clicks.detector_model(1.0, 0.07), 10**6, seed=5)
        assert clicks.estimate_gain(obs, 0.07, method="mle").eps == pytest.approx(1.0, rel=0.02)

    def test_noiseless_exact(self):
        assert clicks.estimate_gain(clicks.detector_model(0.8, 0.07), 0.07).eps == \
            pytest.approx(0.8, abs=1e-6)

    def test_no_clicks(self):
        est = clicks.estimate_gain(clicks.ClickStats({"0000": 1.0}), 0.07)
        assert est.eps == 0.0 and est.degenerate

    def test_monotone_in_coincidences(self):
        eps = [0.2, 0.6, 1.0, 1.5, 2.0, 3.0]
        fits = [clicks.estimate_gain(clicks.detector_model(e, 0.07), 0.07).eps for e in eps]
        # signal-idler coincidence: at least one click in each arm
        coinc = [sum(v for k, v in clicks.detector_model(e, 0.07).probabilities.items()
                     if "1" in k[:2] and "1" in k[2:]) for e in eps]
        assert np.all(np.diff(coinc) > 0) and np.all(np.diff(fits) > 0)

    def test_rejects_method(self):
        with pytest.raises(ValueError):
            clicks.estimate_gain(clicks.detector_model(1.0, 0.07), 0.07, method="bayes")


class TestKlyshko:
    def test_seven_percent_heralding(self):
        r = clicks.klyshko_efficiency(1e5, 1e5, 7e3)
        assert (r.eta_a, r.eta_b) == pytest.approx((0.07, 0.07))

    def test_limits(self):
        assert clicks.klyshko_efficiency(10, 10, 0).eta_a == 0.0
        assert clicks.klyshko_efficiency(10, 10, 10).eta_b == 1.0

    def test_zero_singles(self):
        with pytest.raises(ValueError):
            clicks.klyshko_efficiency(0, 10, 0)

    def test_high_gain_flag(self):
        assert clicks.klyshko_efficiency(1e5, 1e5, 7e3, pulses=6e7).low_gain_valid
        assert not clicks.klyshko_efficiency(1e5, 1e5, 7e3, pulses=1e5).low_gain_valid
