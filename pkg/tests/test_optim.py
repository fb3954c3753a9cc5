import math

import numpy as np
import pytest

from core.optim import AdamState, OneCycleSchedule, adam_step, sgd_step
from utils.errors import ShapeError


class TestSgd:
    def test_exact_update(self):
        params = {"w": np.array([1.0, -2.0]), "b": np.array(0.5)}
        grads = {"w": np.array([0.5, 0.25]), "b": np.array(-1.0)}
        out = sgd_step(params, grads, lr=0.1)
        np.testing.assert_allclose(out["w"], [0.95, -2.025])
        np.testing.assert_allclose(out["b"], 0.6)

    def test_scaling_gradient_and_lr_inversely_keeps_the_step(self):
        rng = np.random.default_rng(0)
        params = {"w": rng.normal(size=(3, 2))}
        g = rng.normal(size=(3, 2))
        base = sgd_step(params, {"w": g}, lr=0.01)
        scaled = sgd_step(params, {"w": 4.0 * g}, lr=0.0025)
        np.testing.assert_allclose(scaled["w"], base["w"], rtol=1e-12)

    def test_inputs_untouched(self):
        params = {"w": np.array([1.0])}
        sgd_step(params, {"w": np.array([1.0])}, lr=1.0)
        assert params["w"][0] == 1.0


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        params = {"w": np.array([0.0, 1.0, -1.0])}
        grads = {"w": np.array([3.0, -0.01, 200.0])}
        out = adam_step(params, grads, AdamState(), lr=0.1)
        np.testing.assert_allclose(out["w"] - params["w"], [-0.1, 0.1, -0.1], rtol=1e-5)

    def test_missing_gradient_leaves_parameter_and_moments_alone(self):
        state = AdamState()
        params = {"w": np.array([1.0]), "frozen": np.array([2.0])}
        out = adam_step(params, {"w": np.array([1.0])}, state, lr=0.1)
        assert out["frozen"] is params["frozen"]
        assert "frozen" not in state.m
        assert state.step == 1

    def test_zero_lr_is_identity(self):
        params = {"w": np.array([0.3, -0.7])}
        out = adam_step(params, {"w": np.array([1.0, 2.0])}, AdamState(), lr=0.0)
        np.testing.assert_array_equal(out["w"], params["w"])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), lr=0.1)


class TestOneCycleSchedule:
    def test_key_points(self):
        schedule = OneCycleSchedule(max_lr=1e-2, total_steps=100)
        assert schedule.lr(0) == 0.0
        assert schedule.lr(10) == pytest.approx(1e-2)
        assert schedule.lr(5) == pytest.approx(5e-3)
        assert schedule.lr(99) == pytest.approx(1e-5)

    def test_ramps_are_monotone(self):
        schedule = OneCycleSchedule(max_lr=3e-3, total_steps=50)
        values = [schedule.lr(s) for s in range(50)]
        peak = int(math.ceil(schedule.warmup_steps))
        assert all(a < b for a, b in zip(values[:peak], values[1:peak + 1]))
        assert all(a >= b for a, b in zip(values[peak:], values[peak + 1:]))
        assert max(values) == pytest.approx(3e-3)

    def test_single_step_schedule(self):
        assert OneCycleSchedule(max_lr=0.1, total_steps=1).lr(0) == 0.0

    @pytest.mark.parametrize("step", [-1, 100])
    def test_step_out_of_range(self, step):
        with pytest.raises(ValueError):
            OneCycleSchedule(max_lr=0.1, total_steps=100).lr(step)

    @pytest.mark.parametrize("kwargs", [
        {"max_lr": 0.0, "total_steps": 10},
        {"max_lr": 0.1, "total_steps": 0},
        {"max_lr": 0.1, "total_steps": 10, "warmup_fraction": 1.0},
    ])
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ValueError):
            OneCycleSchedule(**kwargs)
