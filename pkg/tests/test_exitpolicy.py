import math

import numpy as np
import pytest

from skipformer.exitpolicy import (ExitPolicyConfig, confidence_decision,
                                   decay_threshold, patience_decision,
                                   similarity_signal, static_decision)
from skipformer.model import HiddenState
from skipformer.numerics import SeededRng, tensor


class TestSimilaritySignal:
    def _pair(self, prev, curr, modality="text"):
        return (HiddenState(tensor(prev), modality, 0),
                HiddenState(tensor(curr), modality, 1))

    def test_identical_states(self):
        p, c = self._pair([1.0, 2.0], [1.0, 2.0])
        assert similarity_signal(p, c) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_states(self):
        p, c = self._pair([1.0, 0.0], [0.0, 1.0])
        assert similarity_signal(p, c) == 0.0

    def test_hand_oracle(self):
        p, c = self._pair([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
        assert similarity_signal(p, c) == pytest.approx(
            32.0 / (math.sqrt(14) * math.sqrt(77)), abs=1e-12)

    def test_modality_mismatch(self):
        p = HiddenState(tensor([1.0]), "image", 0)
        c = HiddenState(tensor([1.0]), "text", 1)
        with pytest.raises(ValueError, match="modality"):
            similarity_signal(p, c)

    def test_nonconsecutive_layers(self):
        p = HiddenState(tensor([1.0]), "text", 0)
        c = HiddenState(tensor([1.0]), "text", 2)
        with pytest.raises(ValueError, match="consecutive"):
            similarity_signal(p, c)

    def test_rescaling_invariance(self):
        rng = SeededRng(2)
        a, b = rng.normal(2, 3), rng.normal(2, 3)
        base = similarity_signal(HiddenState(a, "text", 0),
                                 HiddenState(b, "text", 1))
        scaled = similarity_signal(HiddenState(7.5 * a, "text", 0),
                                   HiddenState(7.5 * b, "text", 1))
        assert scaled == pytest.approx(base, abs=1e-12)


class TestStaticDecision:
    def test_exceeds_threshold(self):
        assert static_decision(0.97, 0.95).exit_now

    def test_strict_inequality_at_threshold(self):
        assert not static_decision(0.95, 0.95).exit_now

    def test_unreachable_threshold(self):
        for sig in (-1.0, 0.0, 0.5, 1.0):
            assert not static_decision(sig, 1.01).exit_now

    def test_decision_fields_consistent(self):
        d = static_decision(0.8, 0.7)
        assert d.exit_now == (d.signal_value > d.threshold_used)

    def test_monotone_in_theta(self):
        # exiting at a higher theta implies exiting at any lower theta
        for sig in np.linspace(-1, 1, 21):
            exited = [static_decision(sig, th).exit_now
                      for th in np.linspace(0, 1, 11)]
            assert exited == sorted(exited, reverse=True)


class TestDecayThreshold:
    def _cfg(self, theta=0.99, beta=0.95, tau=1.0, n=16):
        return ExitPolicyConfig(kind="decay", theta=theta, beta=beta,
                                tau=tau, total_steps=n)

    def test_beta_one_is_static(self):
        cfg = self._cfg(theta=0.9, beta=1.0)
        for t in range(20):
            assert decay_threshold(t, cfg) == pytest.approx(0.9, abs=1e-15)

    def test_reference_values_at_zero(self):
        cfg = self._cfg()
        assert decay_threshold(0, cfg) == pytest.approx(0.9905, abs=1e-12)

    def test_closed_form_at_full_horizon(self):
        cfg = self._cfg(n=10)
        expected = 0.95 * 0.99 + 0.05 * math.exp(-1.0)
        assert decay_threshold(10, cfg) == pytest.approx(expected, abs=1e-12)
        assert decay_threshold(10, cfg) == pytest.approx(0.958894, abs=1e-6)

    def test_monotone_nonincreasing(self):
        cfg = self._cfg(tau=2.0, beta=0.9)
        values = [decay_threshold(t, cfg) for t in range(cfg.total_steps + 1)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_bounds(self):
        cfg = self._cfg(theta=0.8, beta=0.7, tau=3.0)
        lo, hi = 0.7 * 0.8, 0.7 * 0.8 + 0.3
        for t in range(50):
            assert lo - 1e-12 <= decay_threshold(t, cfg) <= hi + 1e-12


class TestConfidenceDecision:
    def test_dominant_logit_exits(self):
        row = np.zeros((1, 8))
        row[0, 3] = 20.0
        assert confidence_decision(row, 0.5).exit_now

    def test_uniform_logits_no_exit(self):
        assert not confidence_decision(np.zeros((1, 64)), 0.5).exit_now

    def test_level_one_never_exits(self):
        row = np.zeros((1, 4))
        row[0, 0] = 100.0
        assert not confidence_decision(row, 1.0).exit_now

    def test_shift_invariance(self):
        rng = SeededRng(8)
        row = rng.normal(1, 16, 3.0)
        a = confidence_decision(row, 0.6)
        b = confidence_decision(row + 123.456, 0.6)
        assert a.exit_now == b.exit_now
        assert a.signal_value == pytest.approx(b.signal_value, abs=1e-12)


class TestPatienceDecision:
    def test_agreeing_tail_exits(self):
        assert patience_decision([3, 3], 2).exit_now

    def test_disagreeing_tail(self):
        assert not patience_decision([3, 5], 2).exit_now

    def test_insufficient_history(self):
        assert not patience_decision([7], 2).exit_now

    def test_only_tail_matters(self):
        assert patience_decision([1, 9, 4, 4, 4], 3).exit_now
        assert not patience_decision([4, 4, 4, 9, 1], 3).exit_now


class TestPolicyConfigValidation:
    def test_bad_kind(self):
        with pytest.raises(ValueError):
            ExitPolicyConfig(kind="sometimes")

    @pytest.mark.parametrize("kw", [dict(beta=1.5), dict(beta=-0.1),
                                    dict(tau=-1.0), dict(patience=0),
                                    dict(total_steps=0)])
    def test_bad_fields(self, kw):
        with pytest.raises(ValueError):
            ExitPolicyConfig(kind="static", **kw)
