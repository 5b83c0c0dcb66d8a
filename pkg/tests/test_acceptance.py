"""End-to-end acceptance checks, one test per criterion.

Tolerances are fixed by the build contract; nothing here is tuned to the
implementation.  Delays are in ps, frequencies in rad/ps.
"""
import json
import time

import numpy as np
import pytest

from gaindelay import analysis, cli, clicks, interferometry as itf, magnus, model, nlfit
from gaindelay import propagator as prop
from oracles import fock_click_probabilities

TAU = 0.132
S1 = model.CrystalParams()
CHAIN = itf.DetectionChain()


def _sum_sinh2(dec):
    return float(np.sum(np.sinh(dec.r) ** 2))


class TestCriterion01WalkOff:
    def test_beta0(self):
        t0 = time.perf_counter()
        b0 = model.walkoff_beta0(S1)
        assert b0 == pytest.approx(0.325, rel=0.01)
        assert time.perf_counter() - t0 < 1.0


class TestCriterion02AnalyticNumeric:
    @pytest.mark.slow
    @pytest.mark.parametrize("eps", [0.1, 0.25, 0.5, 0.75, 1.0])
    def test_phase_delay_matches_magnus(self, propagated, eps):
        cr, _, _, dec = propagated("ideal", eps)
        expect = model.walkoff_beta0(cr) - magnus.beta_of_gain(TAU, eps)
        assert analysis.extract_delay_phase(dec.jsa).T == pytest.approx(expect, rel=0.10)


class TestCriterion03LowGainFidelity:
    def test_fidelity(self, propagated):
        cr, _, tm, dec = propagated("ideal", 0.01)
        ref = prop.lab_frame_phase(magnus.jsa_order1(tm.grid, TAU), cr)
        assert dec.jsa.fidelity(ref) >= 0.99


class TestCriterion04Structure:
    @pytest.mark.parametrize("eps", [0.5, 1.0, 2.0, 3.0])
    def test_invariants_and_singular_values(self, propagated, eps):
        *_, tm, _ = propagated("s1", eps)
        assert tm.worst_residual < 1e-8
        su = np.sort(np.linalg.svd(tm.U_ss, compute_uv=False))
        sv = np.sort(np.linalg.svd(tm.V_si, compute_uv=False))
        # cosh r_k and sinh r_k pair up: s_U^2 = 1 + s_V^2
        assert np.abs(su - np.sqrt(1 + sv**2)).max() < 1e-6


class TestCriterion05PhotonNumber:
    @pytest.mark.slow
    @pytest.mark.parametrize("eps", [0.5, 0.75, 1.0])
    def test_single_mode_limit(self, propagated, eps):
        *_, dec = propagated("ideal", eps)
        assert _sum_sinh2(dec) == pytest.approx(float(magnus.mean_pairs(eps)), rel=0.05)

    def test_high_gain_report(self, propagated):
        *_, dec = propagated("s1", 3.0)
        total, single = _sum_sinh2(dec), float(magnus.mean_pairs(3.0))
        print(f"eps=3: sum sinh^2 r = {total:.4g}, sinh^2 eps = {single:.4g}, "
              f"ratio {total / single:.3g}")
        assert total > 0


class TestCriterion06Dynamics:
    @pytest.mark.slow
    def test_exit_delay_decreases(self):
        s = prop.SolverSettings(n_freq=201, chi3=False)
        delays = [prop.pulse_dynamics(S1, model.PumpParams(gain=g), s).exit_delay()
                  for g in (0.3, 1.0, 2.0, 3.0)]
        assert all(a > b for a, b in zip(delays, delays[1:])), delays


class TestCriterion07RoundTrip:
    def test_fft_delay_and_visibility(self):
        t0 = time.perf_counter()
        dens = itf.coincidence_density_attenuated(itf.Marginal.gaussian(TAU), 0.325, 1 / 3)
        h = itf.synthesize_histogram(dens, CHAIN, 1e6, seed=0)
        est = analysis.extract_delay_fft(h, CHAIN)
        fit = analysis.fit_visibility(h, 0.325, CHAIN)
        elapsed = time.perf_counter() - t0
        assert CHAIN.bin_width == 30.0 and CHAIN.jitter_ghz == pytest.approx(12.0, rel=0.01)
        assert est.sideband_separation == pytest.approx(1.158, abs=est.uncertainty)
        assert abs(est.T - 0.325) <= est.uncertainty
        assert fit.visibility == pytest.approx(1 / 3, abs=0.02)
        assert elapsed < 30


class TestCriterion08Contrast:
    def test_one_third(self):
        T = 0.4
        m = itf.Marginal.gaussian(TAU)
        # identical marginals: the envelope is symmetric, the fringe cos[T (w1 - w2)]
        w = np.linspace(-0.3, 0.3, 7) / TAU
        d = np.pi * np.arange(8)[:, None] / T
        w1, w2 = w + d / 2, w - d / 2
        model_ = itf.coincidence_density_attenuated(m, T).model
        env = m(w1) ** 2 * m(w2) ** 2
        ratio = model_(w1, w2) / env
        hi, lo = ratio[1::2], ratio[0::2]  # cos = -1 and +1
        contrast = (hi.max() - lo.min()) / (hi.max() + lo.min())
        assert contrast == pytest.approx(1 / 3, abs=1e-10)
        assert np.ptp(hi) < 1e-10 and np.ptp(lo) < 1e-10


class TestCriterion09ClickOracle:
    @pytest.mark.parametrize("eps", [0.2, 0.5, 1.0])
    def test_fock_oracle(self, eps):
        state = clicks.split_to_detectors(clicks.apply_loss(clicks.tmsv_state(eps), 0.07))
        ref = fock_click_probabilities(eps, 0.07, cutoff=20)
        for pattern, p in ref.items():
            assert abs(clicks.pattern_probability(state, pattern) - p) < 1e-6, pattern


class TestCriterion10GainRoundTrip:
    @pytest.mark.parametrize("eps, rel", [(0.5, 0.02), (1.0, 0.02), (1.407, 0.02), (3.0, 0.05)])
    def test_estimate(self, eps, rel):
        obs = clicks.sample_clicks(clicks.detector_model(eps, 0.07), 10**6, seed=11)
        assert clicks.estimate_gain(obs, 0.07).eps == pytest.approx(eps, rel=rel)


class TestCriterion11Chi3:
    cfg = cli.load_config()

    def test_critical_power(self):
        pc = nlfit.critical_power(self.cfg.crystal, self.cfg.pump)
        assert pc.self_focusing and pc.P_cr == pytest.approx(1.6e4, rel=0.10)

    def test_self_focusing_distance(self):
        pump = self.cfg.pump_at(3.0)
        z = nlfit.self_focusing_distance(self.cfg.crystal, pump, pump.peak_power)
        assert z.focusing and z.distance == pytest.approx(8.0, rel=0.10)

    def test_gamma_fit(self):
        cr, pump = self.cfg.crystal, self.cfg.pump
        w = np.linspace(-150, 150, 401)
        spectra = [nlfit.MeasuredSpectrum(p, w, nlfit.spm_spectrum(pump, cr, p, w).intensity)
                   for p in (0.4e6, 0.8e6, 1.6e6)]
        fit = nlfit.fit_gamma_p(spectra, pump, cr)
        assert fit.identifiable and fit.gamma_p == pytest.approx(cr.gamma_p, rel=0.05)


def _artifacts(directory):
    out = {}
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            data = p.read_bytes()
            if p.name == "manifest.json":
                m = json.loads(data)
                m.pop("wall_time_s")  # the only field that records wall-clock time
                data = json.dumps(m, sort_keys=True).encode()
            out[p.relative_to(directory).as_posix()] = data
    return out


@pytest.fixture(scope="module")
def cli_inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("det")
    data = json.loads(cli.bundled_config_path().read_text())
    data["solver"].update({"n_freq": 61, "n_zsteps": 60, "chi3": False})
    data["run"].update({"delay": 0.325})
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(data))
    assert cli.main(["interferogram", "--config", str(cfg), "--out", str(root / "h")]) == 0
    clicks.sample_clicks(clicks.detector_model(1.0, 0.07), 10**5, seed=2).save(root / "c.json")
    cr, pump = model.CrystalParams(gamma_p=5e-4), model.PumpParams()
    w = np.linspace(-150, 150, 201)
    spec = []
    for p in (0.8e6, 1.6e6):
        lam = nlfit.detuning_to_wavelength(w, pump.center_wavelength)[::-1]
        I = nlfit.spm_spectrum(pump, cr, p, w[::-1]).intensity
        spec.append(str(nlfit.write_spectrum(root / f"s{p:g}.csv", lam, I, p)))
    return root, str(cfg), {"jsa": [], "dynamics": [], "interferogram": [],
                            "extract": [str(root / "h" / "histogram.csv")],
                            "gain": [str(root / "c.json")], "spmfit": spec}


class TestCriterion12Determinism:
    @pytest.mark.parametrize("command", ["jsa", "dynamics", "interferogram", "extract",
                                         "gain", "spmfit"])
    def test_rerun_identical(self, cli_inputs, command):
        root, cfg, extra = cli_inputs
        runs = []
        for k in range(2):
            out = root / f"{command}{k}"
            assert cli.main([command, "--config", cfg, "--seed", "3", "--out", str(out),
                             *extra[command]]) == 0
            runs.append(_artifacts(out))
        assert runs[0] and runs[0] == runs[1]
