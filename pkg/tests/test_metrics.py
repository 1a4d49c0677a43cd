import json
import math

import numpy as np
import pytest

from conftest import gaussian_sampler
from msfm.data import GMM, make_rng
from msfm.metrics import (MetricReport, consistency, flow_transport_cost, kl_model,
                          kl_static_samplebased, straightness, welch_compare, write_reports)
from msfm.nn import NetSpec, VectorFieldModel, init_model

C = np.array([1.0, -2.0])


def const_field(t, x):
    return np.broadcast_to(C, x.shape)


def zigzag_field(t, x):
    t = np.asarray(t, dtype=float)
    s = (1.0 - 2.0 * t).reshape(-1, 1) if t.ndim else 1.0 - 2.0 * t
    return s * np.broadcast_to(C, x.shape)


def test_report_stderr():
    r = MetricReport.from_samples("x", [1.0, 2.0, 3.0, 4.0])
    assert r.value == 2.5 and r.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    with pytest.raises(ValueError):
        MetricReport.from_samples("x", [1.0])


def test_welch():
    a = MetricReport("a", 1.0, 0.1, 10)
    assert welch_compare(a, a)[0] == 0.0
    b = MetricReport("b", 1.0 - 10 * math.sqrt(0.02), 0.1, 10)
    z, sig = welch_compare(a, b)
    assert z == pytest.approx(10.0) and sig
    assert welch_compare(b, a)[0] == pytest.approx(-z)


def test_straightness_constant_field_is_zero(rng):
    r = straightness(const_field, gaussian_sampler(2), 500, rng)
    # exact zero up to the floating-point floor of x0 + c - x0
    assert abs(r.value) <= 3 * r.stderr + 1e-12


def test_straightness_zigzag_positive(rng):
    # int_0^1 ||(1-2t) c||^2 dt - ||int_0^1 (1-2t) c dt||^2 = ||c||^2 / 3
    r = straightness(zigzag_field, gaussian_sampler(2), 2000, rng)
    assert r.value > 5 * r.stderr
    assert abs(r.value - C @ C / 3) < 4 * r.stderr


def test_transport_cost_zero_field(rng):
    m = VectorFieldModel(NetSpec(2, (4,)))
    r = flow_transport_cost(m, gaussian_sampler(2), 50, rng)
    assert r.value == 0.0 and r.stderr == 0.0


def test_transport_cost_constant_field(rng):
    r = flow_transport_cost(const_field, gaussian_sampler(2), 50, rng)
    assert r.value == pytest.approx(C @ C, rel=1e-9)


def test_kl_identity_is_zero(rng):
    base = GMM.standard_normal(2)
    m = VectorFieldModel(NetSpec(2, (4,)))
    r = kl_model(base, m, base, 2000, rng)
    assert abs(r.value) < 3 * r.stderr + 1e-12


def test_kl_gaussian_shift(rng):
    # KL(N(0,1) || N(1,1)) = 1/2
    q1 = GMM(np.ones(1), np.zeros((1, 1)), 1.0)
    base = GMM(np.ones(1), np.ones((1, 1)), 1.0)
    r = kl_model(q1, VectorFieldModel(NetSpec(1, (4,))), base, 4000, rng)
    assert abs(r.value - 0.5) < 3 * r.stderr


def test_kl_static_identity_small():
    q = GMM.standard_normal(2)
    r = kl_static_samplebased(q, lambda x: x, q.sample, 100_000, make_rng(3), n_eval=2000)
    assert abs(r.value) < 0.1


def test_kl_static_constant_map_is_large(rng):
    q = GMM.standard_normal(2)
    r = kl_static_samplebased(q, lambda x: np.zeros_like(x) + 1.0, q.sample, 10_000, rng)
    assert r.value > 3
    assert "diagnostic" in r.extra


def test_kl_static_narrow_map_is_large(rng):
    q = GMM.standard_normal(2)
    r = kl_static_samplebased(q, lambda x: 0.05 * x, q.sample, 10_000, rng)
    assert r.value > 3


def test_consistency_converges(rng):
    m = init_model(NetSpec(2, (16, 16)), rng)
    reps = consistency(m, [4, 8, 400], 200, rng, gaussian_sampler(2))
    assert [r.name for r in reps] == ["consistency_m4", "consistency_m8", "consistency_m400"]
    assert reps[-1].value < 1e-10
    assert reps[0].value >= reps[1].value >= reps[2].value


def test_write_reports(tmp_path):
    p = tmp_path / "m.jsonl"
    write_reports(p, [MetricReport("a", 1.0, 0.5, 3)], config_hash="abc")
    write_reports(p, [MetricReport("b", 2.0, 0.5, 3)], config_hash="abc")
    rows = [json.loads(line) for line in p.read_text().splitlines()]
    assert [r["name"] for r in rows] == ["a", "b"]
    assert set(rows[0]) == {"name", "value", "stderr", "n", "config_hash", "wall_time"}
