"""Reduced-order prediction: latent integration, ensembles, error metric,
diagnostic exports."""

import math

import numpy as np
import pytest
from conftest import identity_mlp

from thermorom import autoencoder as ae
from thermorom import gp, rom, storage
from thermorom import latent as lat
from thermorom.errors import DimensionMismatch


def decay_xi(k: int, rate: float = -0.5) -> np.ndarray:
    """dz/dt = rate * z, no constant term."""
    xi = np.zeros((k, k + 1))
    xi[:, 1:] = rate * np.eye(k)
    return xi


class TestIntegrateLatent:
    def test_zero_coefficients_hold_the_state(self):
        z0 = np.array([1.5, -2.0])
        traj, blew = rom.integrate_latent(z0, np.zeros((2, 3)), np.linspace(0, 1, 7))
        assert not blew
        assert traj.shape == (7, 2)
        assert np.all(traj == z0)

    def test_first_row_is_the_initial_state(self):
        z0 = np.array([0.3, 0.7, -0.1])
        traj, _ = rom.integrate_latent(z0, decay_xi(3), np.linspace(0, 1, 11))
        assert np.array_equal(traj[0], z0)

    def test_exponential_decay_is_accurate(self):
        # dz/dt = -z from 1.0: ten RK4 steps of 0.1 land close to 1/e
        traj, blew = rom.integrate_latent(np.array([1.0]), decay_xi(1, -1.0),
                                          np.linspace(0.0, 1.0, 11))
        assert not blew
        assert abs(traj[-1, 0] - math.exp(-1.0)) < 1e-6

    def test_fourth_order_convergence(self):
        errs = []
        steps = [5, 10, 20, 40]
        for n in steps:
            traj, _ = rom.integrate_latent(np.array([1.0]), decay_xi(1, -1.0),
                                           np.linspace(0.0, 1.0, n + 1))
            errs.append(abs(traj[-1, 0] - math.exp(-1.0)))
        slope = np.polyfit(np.log([1.0 / n for n in steps]), np.log(errs), 1)[0]
        assert 3.8 <= slope <= 4.2

    def test_affine_fixed_point_is_exact(self):
        # dz/dt = b + A z with z0 at the equilibrium -A^-1 b stays put
        xi = np.array([[0.8, -2.0]])
        z0 = np.array([0.4])
        traj, blew = rom.integrate_latent(z0, xi, np.linspace(0, 1, 21))
        assert not blew
        assert np.allclose(traj, 0.4, atol=1e-13)

    def test_blow_up_truncates_without_nan(self):
        traj, blew = rom.integrate_latent(np.array([1.0]), decay_xi(1, 200.0),
                                          np.linspace(0.0, 1.0, 101))
        assert blew
        assert traj.shape[0] < 101
        assert np.all(np.isfinite(traj))
        assert np.max(np.abs(traj)) <= rom.BLOWUP_LIMIT

    def test_validation_errors(self):
        z0 = np.array([1.0])
        xi = decay_xi(1)
        with pytest.raises(DimensionMismatch):
            rom.integrate_latent(np.ones((2, 1)), xi, np.linspace(0, 1, 5))
        with pytest.raises(DimensionMismatch):
            rom.integrate_latent(z0, np.zeros((2, 3)), np.linspace(0, 1, 5))
        with pytest.raises(DimensionMismatch):
            rom.integrate_latent(z0, xi, np.array([0.0]))
        with pytest.raises(ValueError):
            rom.integrate_latent(z0, xi, np.array([0.0, 0.5, 0.6]))
        with pytest.raises(ValueError):
            rom.integrate_latent(z0, xi, np.array([0.0, -0.1, -0.2]))
        with pytest.raises(ValueError):
            rom.integrate_latent(np.array([np.nan]), xi, np.linspace(0, 1, 5))


class TestMaxRelativeError:
    def test_exact_match_is_zero(self):
        u = 300.0 + np.random.default_rng(0).random((11, 8))
        assert rom.max_relative_error(u, u) == 0.0

    def test_uniform_scaling_gives_the_factor(self):
        u = 300.0 + np.random.default_rng(1).random((11, 8))
        assert abs(rom.max_relative_error(1.1 * u, u) - 0.1) < 1e-12

    def test_matches_a_per_frame_oracle(self):
        gen = np.random.default_rng(2)
        for _ in range(20):
            truth = 1.0 + gen.random((7, 5))
            pred = truth + 0.1 * gen.standard_normal((7, 5))
            worst = 0.0
            for n in range(7):
                num = math.sqrt(float(np.sum((pred[n] - truth[n]) ** 2)))
                den = math.sqrt(float(np.sum(truth[n] ** 2)))
                worst = max(worst, num / den)
            assert abs(rom.max_relative_error(pred, truth) - worst) < 1e-12

    def test_exactly_homogeneous_under_power_of_two_scaling(self):
        gen = np.random.default_rng(3)
        truth = 1.0 + gen.random((9, 4))
        pred = truth + gen.standard_normal((9, 4))
        assert rom.max_relative_error(2.0 * pred, 2.0 * truth) \
            == rom.max_relative_error(pred, truth)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionMismatch):
            rom.max_relative_error(np.ones((3, 2)), np.ones((4, 2)))
        with pytest.raises(DimensionMismatch):
            rom.max_relative_error(np.ones(3), np.ones(3))


@pytest.fixture(scope="module")
def trained(tiny_run, tiny_dataset):
    (result, config) = tiny_run[0], tiny_run[1]
    tau = np.linspace(0.0, 1.0, tiny_dataset.values.shape[1])
    return result, config, tiny_dataset, tau


class TestPredict:
    def test_same_seed_reproduces_bitwise(self, trained):
        result, _, dataset, tau = trained
        mu = np.array([140.0, 0.1])
        u0 = result.norm.apply(dataset.values[0, 0])
        a = rom.predict(result.state.mlp, result.norm, result.surrogate,
                        mu, u0, tau, n_samples=4, seed=5)
        b = rom.predict(result.state.mlp, result.norm, result.surrogate,
                        mu, u0, tau, n_samples=4, seed=5)
        assert np.array_equal(a.mean_trajectory, b.mean_trajectory)
        assert np.array_equal(a.variance_trajectory, b.variance_trajectory)
        for za, zb in zip(a.latent_samples, b.latent_samples):
            assert np.array_equal(za, zb)

    def test_seed_changes_the_draws(self, trained):
        result, _, dataset, tau = trained
        mu = np.array([140.0, 0.1])  # interior point, posterior spread > 0
        u0 = result.norm.apply(dataset.values[0, 0])
        a = rom.predict(result.state.mlp, result.norm, result.surrogate,
                        mu, u0, tau, n_samples=3, seed=0)
        b = rom.predict(result.state.mlp, result.norm, result.surrogate,
                        mu, u0, tau, n_samples=3, seed=1)
        assert not np.array_equal(a.latent_samples[0], b.latent_samples[0])

    def test_mean_path_only_when_no_samples(self, trained):
        result, _, dataset, tau = trained
        mu = np.array([140.0, 0.1])
        u0 = result.norm.apply(dataset.values[0, 0])
        pred = rom.predict(result.state.mlp, result.norm, result.surrogate,
                           mu, u0, tau, n_samples=0, seed=0)
        assert pred.latent_samples == []
        assert pred.n_valid_samples == 1
        assert np.array_equal(pred.mean_trajectory, pred.mean_path)
        assert np.all(pred.variance_trajectory == 0.0)

    def test_zero_spread_posterior_collapses_the_ensemble(self, trained, monkeypatch):
        result, config, dataset, tau = trained
        k = config.n_latent
        flat = gp.XiPosterior(mean=decay_xi(k), std=np.zeros((k, k + 1)))
        monkeypatch.setattr(rom.gp_mod, "predict", lambda s, m: flat)
        u0 = result.norm.apply(dataset.values[0, 0])
        pred = rom.predict(result.state.mlp, result.norm, result.surrogate,
                           np.array([140.0, 0.1]), u0, tau, n_samples=3, seed=0)
        assert pred.n_valid_samples == 4
        assert not pred.any_blew_up
        assert np.all(pred.variance_trajectory == 0.0)
        assert np.array_equal(pred.mean_trajectory, pred.mean_path)

    def test_every_member_blowing_up_is_survivable(self, trained, monkeypatch):
        result, config, dataset, tau = trained
        k = config.n_latent
        bomb = gp.XiPosterior(mean=decay_xi(k, 400.0), std=np.zeros((k, k + 1)))
        monkeypatch.setattr(rom.gp_mod, "predict", lambda s, m: bomb)
        u0 = result.norm.apply(dataset.values[0, 0])
        pred = rom.predict(result.state.mlp, result.norm, result.surrogate,
                           np.array([140.0, 0.1]), u0, tau, n_samples=2, seed=0)
        assert pred.mean_blew_up
        assert pred.any_blew_up
        assert pred.n_valid_samples == 0
        assert pred.sample_blew_up == [True, True]
        assert pred.mean_trajectory.shape[0] < tau.shape[0]
        assert np.all(np.isfinite(pred.mean_trajectory))
        assert np.all(pred.variance_trajectory == 0.0)

    def test_training_point_follows_its_own_coefficients(self, trained):
        # with pinned noise the GP interpolates, so the rollout at a training
        # parameter should track the rollout under that sample's fitted
        # coefficients
        result, _, dataset, tau = trained
        state = result.state
        params = dataset.parameter_array()
        pinned = gp.fit_gp(params[state.active], state.xi, noise_variance=1e-8)
        i = state.active[0]
        u0 = result.norm.apply(dataset.values[i, 0])
        pred = rom.predict(state.mlp, result.norm, pinned, params[i], u0, tau,
                           n_samples=0, seed=0)
        z0 = ae.encode(state.mlp, u0)
        own, blew = rom.integrate_latent(z0, state.xi[0], tau)
        assert not blew and not pred.mean_blew_up
        assert np.allclose(pred.latent_mean, own, rtol=1e-3, atol=1e-3)


class TestExportDiagnostics:
    @pytest.fixture()
    def bundle(self, tmp_path, monkeypatch):
        # identity autoencoder and identity normalization make the latent
        # space equal the data space, so every file is checkable by hand
        k = 3
        mlp = identity_mlp(k)
        norm = ae.NormalizationSpec(lo=0.0, hi=1.0)
        truth = np.array([[0.1, 0.2, 0.3],
                          [0.2, 0.3, 0.4],
                          [0.3, 0.4, 0.5],
                          [0.4, 0.5, 0.6],
                          [0.5, 0.6, 0.7]])
        xi = decay_xi(k, -0.25)
        post = gp.XiPosterior(mean=xi, std=np.zeros((k, k + 1)))
        monkeypatch.setattr(rom.gp_mod, "predict", lambda s, m: post)
        tau = np.linspace(0.0, 1.0, truth.shape[0])
        pred = rom.predict(mlp, norm, None, np.array([140.0, 0.1]),
                           truth[0], tau, n_samples=2, seed=0)
        times = 0.03125 * tau
        paths = rom.export_diagnostics(str(tmp_path), pred, truth, mlp, norm, times)
        return tmp_path, pred, truth, xi, times, paths

    def test_returns_all_five_files(self, bundle):
        tmp_path, _, _, _, _, paths = bundle
        names = [p.rsplit("/", 1)[1] for p in paths]
        assert names == ["projection_error.csv", "latent_trajectories.csv",
                         "phase_portrait.csv", "prediction.json", "prediction.bin"]
        for p in paths:
            assert (tmp_path / p.rsplit("/", 1)[1]).exists()

    def test_identity_autoencoder_has_zero_projection_error(self, bundle):
        tmp_path, _, truth, _, _, _ = bundle
        lines = (tmp_path / "projection_error.csv").read_text().strip().split("\n")
        assert lines[0] == "frame,time,relative_error"
        assert len(lines) == 1 + truth.shape[0]
        for line in lines[1:]:
            assert float(line.split(",")[2]) == 0.0

    def test_latent_file_covers_truth_and_every_draw(self, bundle):
        tmp_path, pred, truth, _, _, _ = bundle
        lines = (tmp_path / "latent_trajectories.csv").read_text().strip().split("\n")
        kinds = [line.split(",")[0] for line in lines[1:]]
        n = truth.shape[0]
        assert len(lines) == 1 + 3 * n
        assert kinds.count("true") == n
        assert kinds.count("sample-0") == n
        assert kinds.count("sample-1") == n

    def test_phase_portrait_round_trips_bitwise(self, bundle):
        tmp_path, pred, truth, xi, _, _ = bundle
        lines = (tmp_path / "phase_portrait.csv").read_text().strip().split("\n")
        k = 3
        n = truth.shape[0]
        assert len(lines) == 1 + (1 + 2 * k) * n
        for line in lines[1:]:
            cells = line.split(",")
            z = np.array([float(c) for c in cells[3:3 + k]])
            v = np.array([float(c) for c in cells[3 + k:3 + 2 * k]])
            again = lat.latent_velocity(z, xi)
            assert np.array_equal(v, again)

    def test_probe_offsets_are_centered_on_the_truth(self, bundle):
        tmp_path, _, truth, _, _, _ = bundle
        lines = (tmp_path / "phase_portrait.csv").read_text().strip().split("\n")
        on = [l for l in lines[1:] if l.startswith("on,")]
        plus = [l for l in lines[1:] if l.startswith("offset+z0,")]
        z_on = float(on[0].split(",")[3])
        z_plus = float(plus[0].split(",")[3])
        assert z_plus == z_on + rom.PHASE_OFFSET
        assert z_on == truth[0, 0]

    def test_prediction_blob_round_trips(self, bundle):
        tmp_path, pred, _, _, times, _ = bundle
        manifest = storage.read_json(str(tmp_path / "prediction.json"))
        blob = storage.read_blob(str(tmp_path / "prediction.bin"))
        arrays = storage.unpack_arrays(blob, manifest["layout"])
        by_name = {e["name"]: a for e, a in zip(manifest["layout"], arrays)}
        assert manifest["kind"] == "rom-prediction"
        assert manifest["element_type"] == "f64-le"
        assert manifest["n_valid_samples"] == pred.n_valid_samples
        assert manifest["mean_blew_up"] is False
        assert manifest["n_blown_samples"] == 0
        assert np.array_equal(by_name["mean_trajectory"], pred.mean_trajectory)
        assert np.array_equal(by_name["variance_trajectory"],
                              pred.variance_trajectory)
        assert np.array_equal(by_name["times"], times)
        assert np.array_equal(by_name["mu_star"], pred.mu_star)
