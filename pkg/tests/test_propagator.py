import numpy as np
import pytest

from gaindelay import analysis, magnus, model
from gaindelay import propagator as prop
from gaindelay.errors import ConfigError, SolverError
from gaindelay.jsa import JsaGrid

from oracles import born_jsa

TAU = 0.132
S1 = model.CrystalParams()
SMALL = prop.SolverSettings(n_freq=101, n_zsteps=60, chi3=False)


def _delay(crystal, gain, settings, **kw):
    tm = prop.propagate(crystal, model.PumpParams(gain=gain, **kw), settings)
    return analysis.extract_delay_phase(prop.jsa_from_transfer(tm).jsa).T


class TestSettings:
    @pytest.mark.parametrize("kw, path", [({"n_freq": 100}, "n_freq"), ({"n_zsteps": 49}, "n_zsteps"),
                                          ({"integrator": "euler"}, "integrator"),
                                          ({"window_halfwidth": -1.0}, "window_halfwidth")])
    def test_rejects(self, kw, path):
        with pytest.raises(ConfigError) as exc:
            prop.SolverSettings(**kw)
        assert exc.value.path == path

    def test_default_window(self):
        assert prop.SolverSettings().grid(TAU).half_width == pytest.approx(8 / TAU)


class TestGenerator:
    def test_free_propagation_is_diagonal(self):
        G = prop.build_generator(0.3, S1, model.PumpParams(gain=0.0), SMALL)
        assert np.count_nonzero(G - np.diag(np.diag(G))) == 0

    @pytest.mark.parametrize("kind", ["sinc", "gaussian"])
    def test_bogoliubov_structure(self, kind):
        cr = S1.replace(pmf_kind=kind, gamma_p=5e-4)
        pump = model.PumpParams(gain=1.0, peak_power=1e6)
        G = prop.build_generator(0.2, cr, pump, SMALL.replace(chi3=True))
        n = G.shape[0] // 2
        S = np.diag(np.r_[np.ones(n), -np.ones(n)])
        assert np.abs(G.conj().T @ S + S @ G).max() < 1e-12 * np.abs(G).max()
        # off-diagonal blocks are minus conjugate transposes of each other
        np.testing.assert_allclose(G[n:, :n], G[:n, n:].conj().T, atol=1e-15)

    def test_pump_shift_moves_kernel(self):
        shift = 3
        sys0 = prop._System(S1, model.PumpParams(gain=0.5), SMALL)
        d = sys0.grid.spacing
        sys1 = prop._System(S1, model.PumpParams(gain=0.5), SMALL, center_offset=shift * d)
        C0, C1 = sys0.coupling(0.0) / sys0.kappa, sys1.coupling(0.0) / sys1.kappa
        # C_jk depends on j + k only; a pump displaced by 3 steps moves it by 3 along j + k
        np.testing.assert_allclose(C1[shift:, :], C0[:-shift, :], rtol=1e-12, atol=1e-14)

    def test_window_too_small(self):
        with pytest.raises(ConfigError) as exc:
            prop.propagate(S1, model.PumpParams(gain=0.5), SMALL.replace(window_halfwidth=10.0))
        assert exc.value.path == "solver.window_halfwidth" and "need" in exc.value.message


class TestPropagate:
    def test_zero_gain(self):
        tm = prop.propagate(S1, model.PumpParams(gain=0.0), SMALL)
        assert not np.any(tm.V_si) and not np.any(tm.V_is)
        for U in (tm.U_ss, tm.U_ii):
            assert np.count_nonzero(U - np.diag(np.diag(U))) == 0
            np.testing.assert_allclose(np.abs(np.diag(U)), 1.0, atol=1e-14)

    def test_low_gain_matches_first_order(self, propagated):
        cr, pump, tm, dec = propagated("ideal", 0.01)
        ref = prop.lab_frame_phase(magnus.jsa_order1(tm.grid, TAU), cr)
        assert dec.jsa.fidelity(ref) >= 0.99
        assert np.sum(dec.r**2) == pytest.approx(0.01**2, rel=0.02)

    def test_sinc_low_gain_matches_born_oracle(self):
        s = prop.SolverSettings(n_freq=201, chi3=False)
        tm = prop.propagate(S1, model.PumpParams(gain=0.01), s)
        w = tm.grid.detunings
        amp = born_jsa(w, w, TAU, S1.length, S1.group_index_pump, S1.group_index_signal,
                       S1.group_index_idler)
        ref = JsaGrid(tm.grid, tm.grid, amp)
        assert prop.jsa_from_transfer(tm).jsa.fidelity(ref) > 0.999

    def test_zstep_convergence(self):
        s = prop.SolverSettings(chi3=False)
        t1 = _delay(S1, 1.0, s)
        t2 = _delay(S1, 1.0, s.replace(n_zsteps=400))
        assert abs(t2 - t1) / abs(t1) < 0.005

    @pytest.mark.parametrize("offset", [-2, -1, 1, 2])
    def test_frame_shift(self, offset):
        s = prop.SolverSettings(n_freq=201, chi3=False)
        t0 = _delay(S1, 1.0, s)
        assert abs(_delay(S1, 1.0, s.replace(grid_offset_steps=offset)) - t0) / t0 < 0.005

    def test_peak_power_irrelevant_without_chi3(self):
        s = SMALL.replace(chi3=False)
        cr = S1.replace(gamma_p=5e-4)
        a = prop.propagate(cr, model.PumpParams(gain=1.0, peak_power=1e5), s)
        b = prop.propagate(cr, model.PumpParams(gain=1.0, peak_power=2e5), s)
        np.testing.assert_array_equal(a.V_si, b.V_si)
        np.testing.assert_array_equal(a.U_ss, b.U_ss)

    def test_expm_matches_split(self):
        cr = model.symmetric_crystal(TAU)
        s = prop.SolverSettings(n_freq=61, n_zsteps=80, chi3=False)
        a = prop.propagate(cr, model.PumpParams(gain=1.0), s)
        b = prop.propagate(cr, model.PumpParams(gain=1.0), s.replace(integrator="expm"))
        assert np.abs(a.V_si - b.V_si).max() < 1e-3 * np.abs(a.V_si).max()

    def test_rk4_runs_and_reports(self):
        s = prop.SolverSettings(n_freq=41, n_zsteps=400, integrator="rk4", chi3=False)
        tm = prop.propagate(S1, model.PumpParams(gain=0.5), s, check=False)
        assert 0 < tm.worst_residual < 1e-4

    def test_violation_raises(self):
        s = prop.SolverSettings(n_freq=41, n_zsteps=50, integrator="rk4", chi3=False)
        with pytest.raises(SolverError, match="n_zsteps"):
            prop.propagate(S1, model.PumpParams(gain=3.0), s)

    def test_invariants_at_every_slice(self):
        s = prop.SolverSettings(n_freq=61, n_zsteps=60, chi3=True)
        cr = S1.replace(gamma_p=5e-4)
        worst = max(tm.worst_residual for _, tm in
                    prop.iter_transfer(cr, model.PumpParams(gain=2.0, peak_power=1e6), s))
        assert worst < 1e-10

    def test_singular_value_relation(self, propagated):
        *_, tm, _ = propagated("ideal", 1.0)
        su = np.linalg.svd(tm.U_ss, compute_uv=False)
        sv = np.linalg.svd(tm.V_si, compute_uv=False)
        assert np.abs(np.sort(su) - np.sort(np.sqrt(1 + sv**2))).max() < 1e-6

    def test_save(self, tmp_path):
        tm = prop.propagate(S1, model.PumpParams(gain=0.2), SMALL)
        paths = tm.save(tmp_path / "tm")
        assert len(paths) == 9 and all(p.exists() for p in paths)


class TestJsaFromTransfer:
    @staticmethod
    def _diag(r):
        n = len(r)
        U, V = np.diag(np.cosh(r)), np.diag(np.sinh(r))
        return prop.TransferMatrices(U, V, U.copy(), V.copy(), model.FrequencyGrid(n, 1.0))

    def test_vacuum(self):
        dec = prop.jsa_from_transfer(self._diag(np.zeros(5)))
        assert not np.any(dec.jsa.amplitude) and not np.any(dec.r)

    def test_rank_one(self):
        dec = prop.jsa_from_transfer(self._diag(np.array([1.0, 0, 0, 0, 0])))
        assert dec.r[0] == pytest.approx(1.0, rel=1e-12)
        assert np.all(dec.r[1:] < 1e-15)
        assert dec.mean_photons == pytest.approx(1.3810978455418157, rel=1e-12)

    def test_r_matches_v_singular_values(self, propagated):
        *_, tm, dec = propagated("ideal", 1.0)
        sv = np.linalg.svd(tm.V_si, compute_uv=False)
        np.testing.assert_allclose(np.sort(dec.r)[::-1][:10], np.arcsinh(sv)[:10], rtol=1e-9)

    def test_rejects_invalid(self):
        tm = self._diag(np.array([0.5, 0.2, 0.0]))
        bad = prop.TransferMatrices(tm.U_ss * 1.01, tm.V_si, tm.U_ii, tm.V_is, tm.grid)
        with pytest.raises(SolverError):
            prop.jsa_from_transfer(bad)


class TestLabFrame:
    @pytest.fixture(scope="class")
    def j1(self):
        return magnus.jsa_order1(model.FrequencyGrid.default(TAU), TAU)

    def test_identity_without_walkoff(self, j1):
        cr = model.CrystalParams(group_index_pump=1.8, group_index_signal=1.8,
                                 group_index_idler=1.8)
        np.testing.assert_array_equal(prop.lab_frame_phase(j1, cr).amplitude, j1.amplitude)

    def test_delay_is_beta0(self, j1):
        cr = model.symmetric_crystal(TAU)
        est = analysis.extract_delay_phase(prop.lab_frame_phase(j1, cr))
        assert est.T == pytest.approx(model.walkoff_beta0(cr), rel=1e-9)

    def test_twice(self, j1):
        cr = model.symmetric_crystal(TAU)
        twice = prop.lab_frame_phase(prop.lab_frame_phase(j1, cr), cr)
        assert analysis.extract_delay_phase(twice).T == pytest.approx(
            2 * model.walkoff_beta0(cr), rel=1e-9)

    def test_inverse(self, j1):
        cr = model.symmetric_crystal(TAU)
        back = prop.lab_frame_phase(prop.lab_frame_phase(j1, cr), cr, inverse=True)
        np.testing.assert_allclose(back.amplitude, j1.amplitude, atol=1e-15)


class TestDynamics:
    @pytest.fixture(scope="class")
    def low(self):
        return prop.pulse_dynamics(S1, model.PumpParams(gain=0.01),
                                   prop.SolverSettings(n_freq=201, chi3=False))

    @pytest.fixture(scope="class")
    def high(self):
        return prop.pulse_dynamics(S1, model.PumpParams(gain=3.0),
                                   prop.SolverSettings(n_freq=201, chi3=False))

    def test_low_gain_exit_delay(self, low):
        assert abs(low.exit_delay() - model.walkoff_beta0(S1)) / model.walkoff_beta0(S1) < 0.05

    def test_pump_velocity(self, low, high):
        vp = model.group_velocity(S1.group_index_pump)
        for dm in (low, high):
            slope = np.polyfit(dm.centroids("pump"), dm.z, 1)[0]
            assert slope == pytest.approx(vp, rel=1e-6)

    def test_late_signal_velocity(self, low):
        # after generation the low-gain centroids move at v_s and v_i
        z, sig, idl = low.z, low.centroids("signal"), low.centroids("idler")
        tail = z > 0.5
        assert np.polyfit(sig[tail], z[tail], 1)[0] == pytest.approx(
            model.group_velocity(S1.group_index_signal), rel=0.05)
        assert np.polyfit(idl[tail], z[tail], 1)[0] == pytest.approx(
            model.group_velocity(S1.group_index_idler), rel=0.05)

    def test_high_gain_sticks(self, low, high):
        assert high.exit_delay() < low.exit_delay()

    def test_nonnegative_and_totals(self, high):
        for beam in ("pump", "signal", "idler"):
            assert high.densities[beam].min() >= 0
        tm = prop.propagate(S1, model.PumpParams(gain=3.0),
                            prop.SolverSettings(n_freq=201, chi3=False))
        n = prop.jsa_from_transfer(tm).mean_photons
        assert high.totals("signal")[-1] == pytest.approx(n, rel=0.02)
        assert high.totals("idler")[-1] == pytest.approx(n, rel=0.02)

    def test_zero_gain(self):
        dm = prop.pulse_dynamics(S1, model.PumpParams(gain=0.0), SMALL)
        assert not np.any(dm.densities["signal"]) and not np.any(dm.densities["idler"])

    def test_density_repeats_are_dropped(self, low):
        # totals stay at <n> even though the time window spans several alias periods
        assert low.t[-1] - low.t[0] > 2 * np.pi / model.FrequencyGrid.default(TAU, 201).spacing

    def test_save(self, low, tmp_path):
        paths = low.save(tmp_path / "dyn")
        assert all(p.exists() for p in paths)
        assert "z_mm,t_ps,density,beam" in paths[0].read_text()


@pytest.mark.slow
class TestChi3:
    def test_sign_and_size(self):
        cr = S1.replace(gamma_p=5e-4, gamma_s=3e-4, gamma_i=9e-4)
        off = _delay(cr, 1.407, prop.SolverSettings(chi3=False), peak_power=1.6e6)
        on = _delay(cr, 1.407, prop.SolverSettings(chi3=True), peak_power=1.6e6)
        shift = model.walkoff_beta0(cr) - off
        assert on < off
        assert (off - on) < 0.3 * shift
