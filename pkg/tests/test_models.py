import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srds.errors import ConfigError, DomainError, NumericError, ShapeError
from srds.models import (
    GaussianModel,
    GMMModel,
    LinearDrift,
    MLPModel,
    NoiseSchedule,
    alpha_bar,
    diffusion_time,
    drift,
    eps_from_score,
    load_model,
    make_preset,
    resolve_model,
    score,
)

SCHED = NoiseSchedule()


def fd_gradient(f, x, h=1e-5):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestSchedule:
    def test_alpha_bar_endpoints(self):
        assert alpha_bar(SCHED, 0.0) == 1.0
        assert alpha_bar(SCHED, 1.0) == pytest.approx(np.exp(-10.05), rel=1e-15)
        assert alpha_bar(SCHED, 1.0) == pytest.approx(4.32e-5, rel=1e-3)

    def test_alpha_bar_matches_trapezoid_integral(self):
        s = 0.5
        grid = np.linspace(0.0, s, 200_001)
        betas = np.array([SCHED.beta(v) for v in grid[::1000]])  # spot-check beta itself
        assert betas[0] == pytest.approx(0.1)
        integral = np.trapezoid(0.1 + grid * (20.0 - 0.1), grid)
        assert alpha_bar(SCHED, s) == pytest.approx(np.exp(-integral), abs=1e-10)
        # beta_min * s + (beta_max - beta_min) * s**2 / 2 with s = 0.5
        assert alpha_bar(SCHED, s) == pytest.approx(np.exp(-0.05 - 9.95 * 0.25), rel=1e-15)

    @pytest.mark.parametrize("s", [-1e-9, 1.0 + 1e-9, float("nan")])
    def test_domain(self, s):
        with pytest.raises(DomainError):
            SCHED.alpha_bar(s)

    def test_monotone_and_positive(self):
        grid = np.linspace(0.0, 1.0, 1000)
        a = np.array([SCHED.alpha_bar(s) for s in grid])
        assert np.all(np.diff(a) < 0)
        assert np.all((a > 0) & (a <= 1))
        assert all(SCHED.beta(s) > 0 for s in grid)

    def test_time_map(self):
        assert diffusion_time(0.0) == 1.0
        assert diffusion_time(1.0) == 0.0
        u = np.linspace(0, 1, 50)
        assert np.all(np.diff([diffusion_time(v) for v in u]) < 0)


class TestScore:
    def test_gaussian_clean_data(self):
        m = GaussianModel([0.0], [4.0])
        np.testing.assert_allclose(score(m, SCHED, np.array([2.0]), 0.0), [-0.5])

    def test_symmetric_gmm_zero_at_origin(self):
        m = GMMModel([0.5, 0.5], [[1.3, -0.4], [-1.3, 0.4]], [[0.5, 0.5], [0.5, 0.5]])
        for s in (0.0, 0.3, 0.9):
            np.testing.assert_allclose(score(m, SCHED, np.zeros(2), s), 0.0, atol=1e-15)

    def test_gaussian_matches_finite_difference(self):
        m = GaussianModel([1.0], [1.0])
        x = np.array([0.37])
        fd = fd_gradient(lambda z: m.log_density(z, 0.5, SCHED), x)
        np.testing.assert_allclose(score(m, SCHED, x, 0.5), fd, rtol=1e-6)

    @pytest.mark.parametrize("preset", ["gaussian", "gmm-2"])
    def test_score_density_consistency(self, preset):
        m = make_preset(preset, 3)
        rng = np.random.default_rng(7)
        for _ in range(100):
            x = rng.normal(scale=2.0, size=3)
            s = rng.uniform(0.0, 1.0)
            fd = fd_gradient(lambda z: m.log_density(z, s, SCHED), x)
            sc = score(m, SCHED, x, s)
            assert np.linalg.norm(sc - fd) <= 1e-6 * np.linalg.norm(sc)

    def test_gmm_stable_far_from_modes(self):
        m = make_preset("gmm-2", 2)
        out = score(m, SCHED, np.array([80.0, -90.0]), 0.0)
        assert np.all(np.isfinite(out))

    def test_shape_and_numeric_errors(self):
        m = make_preset("gaussian", 3)
        with pytest.raises(ShapeError):
            score(m, SCHED, np.zeros(2), 0.5)
        with pytest.raises(NumericError):
            score(m, SCHED, np.array([0.0, np.nan, 1.0]), 0.5)

    def test_invalid_parameters(self):
        with pytest.raises(DomainError):
            GMMModel([0.6, 0.5], [[0.0], [1.0]], [[1.0], [1.0]])
        with pytest.raises(DomainError):
            GaussianModel([0.0], [0.0])


class TestEps:
    @pytest.mark.parametrize(
        "sc, abar, expected",
        [([-1.0], 0.75, [0.5]), ([0.0, 0.0], 0.3, [0.0, 0.0]), ([2.0], 0.96, [-0.4])],
    )
    def test_examples(self, sc, abar, expected):
        np.testing.assert_allclose(eps_from_score(np.array(sc), abar), expected, atol=1e-15)

    def test_abar_one_gives_zero(self):
        np.testing.assert_array_equal(eps_from_score(np.array([3.0]), 1.0), [0.0])

    @pytest.mark.parametrize("abar", [0.0, -0.1])
    def test_nonpositive_abar(self, abar):
        with pytest.raises(DomainError):
            eps_from_score(np.array([1.0]), abar)


class TestDrift:
    @given(
        x=st.lists(st.floats(-100, 100), min_size=1, max_size=6),
        u=st.floats(0.0, 1.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_stationary_gaussian(self, x, u):
        x = np.array(x)
        m = GaussianModel(np.zeros(x.size), np.ones(x.size))
        assert np.linalg.norm(drift(m, SCHED, x, u)) <= 1e-12

    def test_plug_in_value(self):
        m = GaussianModel([0.0], [4.0])
        np.testing.assert_allclose(drift(m, SCHED, np.array([2.0]), 1.0), [0.075], rtol=1e-14)

    def test_finite_over_sweep(self):
        rng = np.random.default_rng(3)
        for preset in ("gaussian", "gmm-2", "linear"):
            m = make_preset(preset, 4)
            for u in np.linspace(0, 1, 41):
                x = rng.normal(size=4)
                x *= rng.uniform(0, 100) / np.linalg.norm(x)
                assert np.all(np.isfinite(drift(m, SCHED, x, u)))

    def test_linear_field_drift_and_score_agree(self):
        m = LinearDrift(2, rate=1.5)
        x = np.array([0.4, -2.0])
        for u in (0.0, 0.25, 0.9):
            via_score = 0.5 * SCHED.beta(1 - u) * (x + m.score(x, 1 - u, SCHED))
            np.testing.assert_allclose(via_score, drift(m, SCHED, x, u), rtol=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            drift(make_preset("gaussian", 1), SCHED, np.zeros(1), 1.5)


class TestModelFiles:
    def test_gaussian_and_gmm(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text(json.dumps({"type": "gaussian", "mu": [1, 2], "var": [1, 3]}))
        m = load_model(p)
        assert isinstance(m, GaussianModel) and m.dim == 2
        p.write_text(json.dumps({"type": "gmm", "w": [0.25, 0.75], "mu": [[0], [1]], "var": [[1], [2]]}))
        m = load_model(p)
        assert isinstance(m, GMMModel) and m.dim == 1

    def test_mlp_forward(self, tmp_path):
        doc = {
            "dims": [3, 4, 2],
            "layers": [
                {"w": [[0.1, -0.2, 0.3], [0.0, 0.5, 0.1], [0.2, 0.2, 0.2], [-0.3, 0.1, 0.0]],
                 "b": [0.0, 0.1, -0.1, 0.2], "act": "tanh"},
                {"w": [[1.0, 0.0, -1.0, 0.5], [0.0, 1.0, 0.5, -0.5]], "b": [0.0, 0.0]},
            ],
        }
        p = tmp_path / "mlp.json"
        p.write_text(json.dumps(doc))
        m = load_model(p)
        assert isinstance(m, MLPModel) and m.dim == 2
        x, s = np.array([0.3, -0.7]), 0.4
        w1, b1 = np.array(doc["layers"][0]["w"]), np.array(doc["layers"][0]["b"])
        w2 = np.array(doc["layers"][1]["w"])
        expected = w2 @ np.tanh(w1 @ np.array([0.3, -0.7, 0.4]) + b1)
        np.testing.assert_allclose(score(m, SCHED, x, s), expected, rtol=1e-14)

    def test_mlp_bad_activation(self):
        with pytest.raises(ConfigError):
            MLPModel(({"w": [[1.0, 0.0]], "b": [0.0], "act": "gelu"},))

    def test_resolve(self, tmp_path):
        assert resolve_model("gmm-2", 3).dim == 3
        with pytest.raises(ConfigError):
            make_preset("nope", 2)
        p = tmp_path / "g.json"
        p.write_text(json.dumps({"type": "gaussian", "mu": [1, 2], "var": [1, 3]}))
        with pytest.raises(ConfigError):
            resolve_model(str(p), 3)
        with pytest.raises(OSError):
            resolve_model(str(tmp_path / "missing.json"), 2)
