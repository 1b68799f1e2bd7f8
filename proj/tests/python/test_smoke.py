import json
import math

import numpy as np
import pytest

import wsampler as ws


def test_generators_shapes():
    x, y, beta = ws.generate_logistic(200, 3, 0.0, 42)
    assert x.shape == (200, 3) and y.shape == (200,) and beta.shape == (4,)
    assert set(np.unique(y)) <= {0.0, 1.0}
    b = ws.generate_bernoulli(1000, 0.1, 1)
    assert 0.05 < b.mean() < 0.15
    mix = ws.generate_mixture(2000, 3)
    assert abs(mix.mean() - 1.5) < 0.1


def test_partition_balanced():
    a = np.array(ws.partition(103, 4, 9))
    counts = np.bincount(a)
    assert counts.max() - counts.min() <= 1 and counts.sum() == 103


def test_gaussian_kl_formula():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5000, 1))
    assert ws.gaussian_kl(x, x) == pytest.approx(0.0, abs=1e-8)


def test_tv_distance_bounds():
    rng = np.random.default_rng(1)
    a = rng.normal(size=4000)
    assert ws.tv_distance(a, a) <= 0.01
    assert ws.tv_distance(a, a + 10.0) >= 0.99


def test_fukunaga_scalar():
    h = ws.fukunaga_bandwidth(1, 10000, np.eye(1))
    assert h[0, 0] == pytest.approx((3 / 4) ** -0.4 * 10000 ** -0.4, rel=1e-12)


def test_combine_gaussian_subsets():
    rng = np.random.default_rng(2)
    draws = [rng.normal(loc=mu, scale=1.0, size=(4000, 1)) for mu in (-0.2, 0.0, 0.2)]
    avg, w, diag = ws.combine("weighted_average", draws)
    assert w is None and avg.shape == (4000, 1)
    assert abs(avg.mean()) < 0.05
    assert avg.var() == pytest.approx(1.0 / 3.0, rel=0.1)
    rej, _, diag = ws.combine("rejection", draws, seed=3)
    assert 0.05 < diag["acceptance_rate"] < 0.2


def test_conditional_weight_single_set():
    rng = np.random.default_rng(3)
    assert ws.conditional_weight([list(rng.normal(size=500))]) == pytest.approx(1.0, abs=1e-6)


def test_pipeline_smoke(tmp_path):
    cfg = {
        "model": "beta_bernoulli",
        "seed": 5,
        "m": 4,
        "data": {"n": 2000, "prob": 0.2},
        "chain": {"iterations": 3000, "burnin": 500},
        "methods": ["simple_average", "weighted_average"],
    }
    code = ws.run_pipeline(json.dumps(cfg), str(tmp_path / "out"))
    assert code == 0
    assert (tmp_path / "out" / "eval" / "summary.csv").exists()
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"] == "complete"


def test_bad_config_raises():
    with pytest.raises(ws.WsamplerError):
        ws.run_pipeline(json.dumps({"model": "nope", "seed": 1, "m": 2, "methods": ["kernel"]}))
