import math

import numpy as np
import pytest

import permattn as pa


def features(n, length, d, seed):
    rng = np.random.default_rng(seed)
    return pa.feature_map(rng.standard_normal((n, length, d)), seed=seed)


def test_version():
    assert pa.__version__.count(".") == 2


def test_feature_map_positive_and_wide():
    out = pa.feature_map(np.random.default_rng(0).standard_normal((5, 4)), epsilon=1e-3)
    assert out.shape == (5, 16)
    assert out.min() >= 1e-3


def test_permutation_helpers():
    pi = pa.sample_permutation(12, 3)
    assert sorted(pi) == list(range(12))
    assert pa.permutation_order([1, 2, 0, 4, 3]) == 6
    with pytest.raises(pa.ValidationError):
        pa.permutation_order([0, 0, 1])


def test_encode_gathers_by_powers():
    f = np.arange(12, dtype=float).reshape(3, 4)
    pi = [1, 2, 3, 0]
    out = pa.encode(f, pi)
    idx = list(range(4))
    for t in range(3):
        assert np.array_equal(out[t], f[t][idx])
        idx = [pi[i] for i in idx]


def test_linear_matches_quadratic():
    qf, kf = features(2, 10, 4, 1), features(2, 10, 4, 2)
    v = np.random.default_rng(3).standard_normal((2, 10, 4))
    for causal in (False, True):
        lin = pa.kernel_attention(qf, kf, v, causal=causal)
        quad = pa.kernel_attention(qf, kf, v, causal=causal, linear=False)
        assert np.abs(lin - quad).max() < 1e-10


def test_causal_recurrence_matches_encoded_quadratic():
    qf, kf = features(1, 12, 4, 4), features(1, 12, 4, 5)
    v = np.random.default_rng(6).standard_normal((1, 12, 4))
    pi, r = pa.sample_permutation(16, 7), 0.9
    rec = pa.causal_linear_attention(qf, kf, v, [pi], [r])
    qe = pa.encode(qf[0], pi, r, "query", causal=True)[None]
    ke = pa.encode(kf[0], pi, r, "key", causal=True)[None]
    quad = pa.kernel_attention(qe, ke, v, causal=True, linear=False)
    assert np.abs(rec - quad).max() < 1e-10


def test_softmax_shape():
    q = np.random.default_rng(8).standard_normal((2, 6, 3))
    assert pa.softmax_attention(q, q, q, causal=True).shape == (2, 6, 3)


@pytest.mark.parametrize("causal", [False, True])
def test_pipeline_shift_invariant(causal):
    x = np.random.default_rng(9).standard_normal((16, 8))
    a = pa.permuteformer_attention(x, heads=2, causal=causal, seed=1)
    b = pa.permuteformer_attention(x, heads=2, causal=causal, seed=1, offset=37)
    assert a.shape == (16, 8)
    assert np.abs(a - b).max() < 1e-9


def test_verify_suite():
    rows = pa.verify("L=16\nH=2\n")
    assert rows and all(r["passed"] for r in rows)
    assert any(r["negative_control"] for r in rows)
    with pytest.raises(ValueError):
        pa.verify("r_min=0.9\nr_max=0.9\n")
    with pytest.raises(pa.ConfigError):
        pa.verify("nonsense")


def test_order_stats_big_integers():
    st = pa.order_stats(m=32, samples=200, seed=1, heads=4)
    lcm = 1
    for o in st["head_orders"]:
        lcm = lcm * o // math.gcd(lcm, o)
    assert st["head_lcm"] == lcm
    assert st["mean"] >= 1


def test_bench_records():
    rows = pa.bench([16, 32], models=["softmax", "performer", "permuteformer"], repeats=5,
                    heads=2, d_head=4)
    assert len(rows) == 6
    assert all(r["mean_ms"] >= 0 for r in rows)


def test_probe_runs_and_validates():
    res = pa.train_probe("permuteformer", offset=2, length=8, steps=3)
    assert res["steps"] == 3
    assert 0.0 <= res["final_accuracy"] <= 1.0
    with pytest.raises(pa.UsageError):
        pa.train_probe("performer", offset=8, length=8, steps=1)


def test_dimension_errors_surface():
    with pytest.raises(pa.DimensionError):
        pa.kernel_attention(np.ones((1, 3, 4)), np.ones((1, 3, 5)), np.ones((1, 3, 2)))
