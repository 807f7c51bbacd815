import numpy as np
import pytest

from pedcross.autograd import Tensor
from pedcross.optim import Adam, WarmupLinearSchedule, lr_at_step


class TestSchedule:
    def test_warmup_start_is_zero(self):
        assert lr_at_step(5e-5, 10, 100, 0) == 0.0

    def test_peak_at_warmup_end(self):
        assert lr_at_step(5e-5, 10, 100, 10) == pytest.approx(5e-5)

    def test_decay_end_is_zero(self):
        assert lr_at_step(5e-5, 10, 100, 100) == 0.0

    def test_clamps_past_total(self):
        assert lr_at_step(5e-5, 10, 100, 150) == 0.0

    def test_piecewise_linear_and_peak_is_max(self):
        sched = WarmupLinearSchedule(3e-4, total_steps=50, warmup_steps=5)
        values = [sched.lr_at_step(s) for s in range(51)]
        assert max(values) == pytest.approx(3e-4)
        assert values.index(max(values)) == 5
        # linear on both sides
        np.testing.assert_allclose(np.diff(values[:6]), 3e-4 / 5, rtol=1e-9)
        np.testing.assert_allclose(np.diff(values[5:]), -3e-4 / 45,
                                   rtol=1e-9)

    def test_default_warmup_is_ten_percent(self):
        assert WarmupLinearSchedule(1e-3, total_steps=200).warmup_steps == 20

    def test_negative_step_rejected(self):
        with pytest.raises(ValueError):
            WarmupLinearSchedule(1e-3, 10).lr_at_step(-1)


class TestAdam:
    def test_zero_lr_leaves_params_bitwise_unchanged(self, rng):
        p = Tensor(rng.standard_normal(8).astype(np.float32),
                   requires_grad=True)
        before = p.data.copy()
        opt = Adam([p], WarmupLinearSchedule(0.0, total_steps=5,
                                             warmup_steps=0))
        for _ in range(5):
            p.grad = rng.standard_normal(8).astype(np.float32)
            opt.step()
        assert np.array_equal(p.data, before)

    def test_group_scale_zero_freezes_group(self, rng):
        a = Tensor(rng.standard_normal(4).astype(np.float32),
                   requires_grad=True)
        b = Tensor(rng.standard_normal(4).astype(np.float32),
                   requires_grad=True)
        before_b = b.data.copy()
        opt = Adam([{"params": [a], "scale": 1.0},
                    {"params": [b], "scale": 0.0}],
                   WarmupLinearSchedule(1e-2, total_steps=4, warmup_steps=0))
        for _ in range(4):
            a.grad = np.ones(4, dtype=np.float32)
            b.grad = np.ones(4, dtype=np.float32)
            opt.step()
        assert np.array_equal(b.data, before_b)
        assert not np.array_equal(a.data, np.zeros(4))

    def test_descends_a_quadratic(self):
        p = Tensor(np.array([5.0], dtype=np.float32), requires_grad=True)
        opt = Adam([p], WarmupLinearSchedule(0.5, total_steps=100,
                                             warmup_steps=5))
        for _ in range(100):
            p.grad = 2.0 * p.data
            opt.step()
        assert abs(float(p.data[0])) < 0.5

    def test_skips_params_without_grad(self, rng):
        p = Tensor(rng.standard_normal(3).astype(np.float32),
                   requires_grad=True)
        before = p.data.copy()
        opt = Adam([p], WarmupLinearSchedule(1e-2, total_steps=2,
                                             warmup_steps=0))
        opt.step()
        assert np.array_equal(p.data, before)
