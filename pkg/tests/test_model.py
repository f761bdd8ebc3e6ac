import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_model, random_model
from sparse_moe import (
    ConfigError,
    DimensionError,
    ExpertParams,
    GateParams,
    Hyperparams,
    expert_forward,
    gate_forward,
    load_model,
    predict_label,
    predict_proba,
    save_model,
)

E_RATIO = math.e / (math.e + 1.0)  # 0.7310585786300049


class TestGateForward:
    def test_zero_weights_uniform(self):
        gate = GateParams(np.zeros((3, 4)))
        out = gate_forward(gate, np.array([1.0, 2.0, -1.0, 1.0]), np.ones(3))
        np.testing.assert_allclose(out, 1.0 / 3.0, atol=1e-15)

    def test_hand_computed_binary(self):
        gate = GateParams(np.array([[1.0], [0.0]]))
        out = gate_forward(gate, np.array([1.0]), np.ones(2))
        np.testing.assert_allclose(out, [E_RATIO, 1.0 - E_RATIO], atol=1e-12)

    def test_all_ones_selector_is_plain_softmax(self, rng):
        nu = rng.normal(0, 1, (4, 3))
        x = rng.normal(0, 1, 3)
        gated = gate_forward(GateParams(nu), x, np.ones(4))
        logits = nu @ x
        e = np.exp(logits - logits.max())
        np.testing.assert_array_equal(gated, e / e.sum())

    def test_logit_offset_stability(self, rng):
        # A common +1000 shift of all logits must not change the output.
        nu = rng.normal(0, 1, (3, 2))
        x = np.array([1.0, 1.0])
        shifted = nu.copy()
        shifted[:, -1] += 1000.0  # bias slot sees x=1, so logits shift by 1000
        base = gate_forward(GateParams(nu), x, np.ones(3))
        out = gate_forward(GateParams(shifted), x, np.ones(3))
        np.testing.assert_allclose(out, base, atol=1e-10)

    def test_shape_mismatch(self):
        gate = GateParams(np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            gate_forward(gate, np.zeros(4), np.ones(2))
        with pytest.raises(DimensionError):
            gate_forward(gate, np.zeros(3), np.ones(3))

    @settings(deadline=None, max_examples=100)
    @given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_row_stochastic(self, k, dp, seed):
        r = np.random.default_rng(seed)
        out = gate_forward(
            GateParams(r.normal(0, 5, (k, dp))), r.normal(0, 5, dp), r.uniform(0, 1, k)
        )
        assert out.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(out > 0)


class TestExpertForward:
    def test_zero_weights_uniform(self):
        experts = ExpertParams(np.zeros((4, 2, 3)))
        out = expert_forward(experts, 1, np.array([1.0, 2.0, 1.0]))
        np.testing.assert_allclose(out, 0.25, atol=1e-15)

    def test_hand_computed(self):
        omega = np.zeros((2, 1, 3))
        omega[0, 0, 0] = 1.0
        out = expert_forward(ExpertParams(omega), 0, np.array([1.0, 0.0, 0.0]))
        np.testing.assert_allclose(out, [E_RATIO, 1.0 - E_RATIO], atol=1e-12)

    def test_shift_invariance(self, rng):
        omega = rng.normal(0, 1, (3, 2, 4))
        x = rng.normal(0, 1, 4)
        shifted = omega + rng.normal(0, 1, 4)  # same vector added to every class row
        base = expert_forward(ExpertParams(omega), 0, x)
        out = expert_forward(ExpertParams(shifted), 0, x)
        np.testing.assert_allclose(out, base, atol=1e-12)

    def test_index_out_of_range(self):
        experts = ExpertParams(np.zeros((2, 2, 3)))
        with pytest.raises(IndexError):
            expert_forward(experts, 2, np.zeros(3))


class TestPredictProba:
    def test_single_expert_equals_expert_forward(self, rng):
        model = random_model(rng, k=1, q=3, dp=4)
        x = rng.normal(0, 1, 3)
        xb = np.append(x, 1.0)
        np.testing.assert_array_equal(
            predict_proba(model, x), expert_forward(model.experts, 0, xb)
        )

    def test_identical_experts_ignore_gate(self, rng):
        omega = rng.normal(0, 1, (3, 1, 4))
        omega = np.repeat(omega, 2, axis=1)
        x = rng.normal(0, 1, 3)
        out1 = predict_proba(make_model(rng.normal(0, 2, (2, 4)), omega), x)
        out2 = predict_proba(make_model(rng.normal(0, 2, (2, 4)), omega), x)
        np.testing.assert_allclose(out1, out2, atol=1e-14)

    def test_brute_force_mixture_sum(self, rng):
        for _ in range(20):
            model = random_model(rng, k=3, q=4, dp=5)
            x = rng.normal(0, 1, 4)
            xb = np.append(x, 1.0).astype(np.longdouble)
            nu = model.gate.nu.astype(np.longdouble)
            om = model.experts.omega.astype(np.longdouble)
            logits = nu @ xb
            h = np.exp(logits - logits.max())
            h /= h.sum()
            ref = np.zeros(4, dtype=np.longdouble)
            for i in range(3):
                lo = om[:, i, :] @ xb
                p = np.exp(lo - lo.max())
                ref += (p / p.sum()) * h[i]
            np.testing.assert_allclose(
                predict_proba(model, x), ref.astype(float), atol=1e-12
            )

    def test_row_stochastic(self, rng):
        for _ in range(10):
            model = random_model(rng, k=2, q=3, dp=3, scale=4.0)
            out = predict_proba(model, rng.normal(0, 3, 2))
            assert out.sum() == pytest.approx(1.0, abs=1e-10)

    def test_expert_permutation_symmetry(self, rng):
        nu = rng.normal(0, 1, (3, 4))
        omega = rng.normal(0, 1, (2, 3, 4))
        x = rng.normal(0, 1, 3)
        mu = rng.uniform(0, 1, 3)
        perm = np.array([2, 0, 1])
        base = predict_proba(make_model(nu, omega), x, mu)
        out = predict_proba(make_model(nu[perm], omega[:, perm, :]), x, mu[perm])
        np.testing.assert_allclose(out, base, atol=1e-12)


class TestPredictLabel:
    def test_argmax(self, rng):
        omega = np.zeros((2, 1, 2))
        omega[1, 0, 0] = 2.0  # class 1 favored for positive x
        model = make_model(np.zeros((1, 2)), omega)
        assert predict_label(model, np.array([1.0])) == 1

    def test_tie_breaks_to_smallest_index(self):
        model = make_model(np.zeros((1, 3)), np.zeros((2, 1, 3)))
        assert predict_label(model, np.array([0.3, -0.7])) == 0

    def test_consistent_with_proba(self, rng):
        for _ in range(100):
            model = random_model(rng, k=2, q=4, dp=3)
            x = rng.normal(0, 1, 2)
            probs = predict_proba(model, x)
            assert predict_label(model, x) == int(np.argmax(probs))


class TestHyperparams:
    def test_valid(self):
        Hyperparams(k=2, lambda_nu=1.0, lambda_omega=1.0).validate()

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(k=0, lambda_nu=1.0, lambda_omega=1.0),
            dict(k=2, lambda_nu=0.0, lambda_omega=1.0),
            dict(k=2, lambda_nu=1.0, lambda_omega=-1.0),
            dict(k=2, lambda_nu=1.0, lambda_omega=1.0, selector_mode="l0"),
            dict(k=2, lambda_nu=1.0, lambda_omega=1.0, selector_mode="l0", lambda_mu=1.5),
            dict(k=2, lambda_nu=1.0, lambda_omega=1.0, selector_mode="l0", lambda_mu=3),
            dict(k=2, lambda_nu=1.0, lambda_omega=1.0, max_iters=0),
            dict(k=2, lambda_nu=1.0, lambda_omega=1.0, schedule="turbo"),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            Hyperparams(**kwargs).validate()


class TestSerialization:
    def test_round_trip_exact(self, rng, tmp_path):
        model = random_model(rng, k=3, q=2, dp=5, lambda_mu=1.5, selector_mode="l1")
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        np.testing.assert_array_equal(loaded.gate.nu, model.gate.nu)
        np.testing.assert_array_equal(loaded.experts.omega, model.experts.omega)
        np.testing.assert_array_equal(loaded.scaler.mean, model.scaler.mean)
        assert loaded.hyper.lambda_mu == model.hyper.lambda_mu
        assert loaded.hyper.selector_mode == "l1"

    def test_resave_byte_identical(self, rng, tmp_path):
        model = random_model(rng, k=2, q=2, dp=3)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_model(model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_format_version_checked(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format_version": 99}')
        with pytest.raises(ConfigError):
            load_model(path)
