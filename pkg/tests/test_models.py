import logging
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from config import N_PAIR_FEATURES
from conftest import write_embeddings
from embeddings import EmbeddingTable, load_embeddings
from models import (ModelParams, TRAINABLE, init_params, forward, backward, ModelBundle, score_pair,
                    save_model, load_model, load_bundle, PairEncoder)
from sparse import build_window_space, build_dependency_space, save_space, load_space


def _random_params(rng, dim, m, h, sdf, max_score=10.0):
    """initialised weights with random (nonzero) biases and slope"""
    params = init_params(dim, m, h, sdf, max_score, int(rng.integers(1 << 30)))
    return replace(params,
                   b_g1=rng.normal(scale=0.5, size=dim), b_g2=rng.normal(scale=0.5, size=dim),
                   b_m1=rng.normal(scale=0.5, size=m), b_m2=rng.normal(scale=0.5, size=m),
                   b_h=rng.normal(scale=0.5, size=h), b_y=np.array(rng.normal(scale=0.5)),
                   a=np.array(rng.uniform(0.5, 1.5)))


def _inputs(rng, params, batch=None):
    shape = (params.dim,) if batch is None else (batch, params.dim)
    x = None
    if params.sdf_enabled:
        x = rng.uniform(0, 1, size=shape[:-1] + (N_PAIR_FEATURES,))
    return rng.normal(size=shape), rng.normal(size=shape), x


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def _straight_line_forward(params, w1, w2, x):
    """element by element recomputation of the network, no matrix products"""
    p = params
    g1 = [_sigmoid(sum(p.w_g1[i, j] * w1[j] for j in range(p.dim)) + p.b_g1[i]) for i in range(p.dim)]
    g2 = [_sigmoid(sum(p.w_g2[i, j] * w2[j] for j in range(p.dim)) + p.b_g2[i]) for i in range(p.dim)]
    wt1 = [w1[i] * g2[i] for i in range(p.dim)]
    wt2 = [w2[i] * g1[i] for i in range(p.dim)]
    m1 = [math.tanh(sum(p.w_m1[i, j] * wt1[j] for j in range(p.dim)) + p.b_m1[i]) for i in range(p.m_size)]
    m2 = [math.tanh(sum(p.w_m2[i, j] * wt2[j] for j in range(p.dim)) + p.b_m2[i]) for i in range(p.m_size)]
    d = [m1[i] * m2[i] for i in range(p.m_size)]
    h = []
    for i in range(p.h_size):
        pre = sum(p.w_h[i, j] * d[j] for j in range(p.m_size)) + p.b_h[i]
        if x is not None:
            pre += sum(p.w_x[i, j] * x[j] for j in range(N_PAIR_FEATURES))
        h.append(math.tanh(pre))
    s = sum(p.w_y[i] * h[i] for i in range(p.h_size)) + float(p.b_y)
    return p.max_score * _sigmoid(float(p.a) * s)


def _batch_loss(params, w1, w2, x, coef):
    return float(np.sum(coef * forward(params, w1, w2, x, mode="eval").y))


class TestInit:

    def test_deterministic(self):
        assert init_params(4, 3, 2, True, 10.0, 5).equals(init_params(4, 3, 2, True, 10.0, 5))
        assert not init_params(4, 3, 2, True, 10.0, 5).equals(init_params(4, 3, 2, True, 10.0, 6))

    def test_initial_state(self):
        params = init_params(4, 3, 2, False, 10.0, 1)
        assert params.w_x is None
        assert float(params.a) == 1.0 and float(params.b_y) == 0.0
        assert not params.b_h.any()
        bound = math.sqrt(6.0 / (4 + 3))
        assert np.abs(params.w_m1).max() <= bound
        assert init_params(4, 3, 2, True, 10.0, 1).w_x.shape == (2, N_PAIR_FEATURES)

    def test_sdf_flag_keeps_other_weights(self):
        plain, with_sdf = init_params(4, 3, 2, False, 10.0, 9), init_params(4, 3, 2, True, 10.0, 9)
        np.testing.assert_array_equal(plain.w_g1, with_sdf.w_g1)
        np.testing.assert_array_equal(plain.w_y, with_sdf.w_y)

    def test_invalid(self):
        with pytest.raises(ValueError):
            init_params(0, 3, 2, False, 10.0, 1)
        with pytest.raises(ValueError):
            init_params(4, 3, 2, False, 0.0, 1)


class TestForward:

    def test_zero_params_give_half_scale(self):
        params = init_params(4, 3, 2, True, 10.0, 1)
        zeros = ModelParams(max_score=10.0, **{k: np.zeros_like(v) for k, v in params.trainable().items()})
        rng = np.random.default_rng(0)
        w1, w2, x = _inputs(rng, zeros)
        assert forward(zeros, w1, w2, x).y == 5.0

    def test_gating_saturation(self):
        rng = np.random.default_rng(1)
        params = replace(init_params(4, 3, 2, False, 10.0, 1), b_g1=np.full(4, -1000.0),
                         b_g2=np.full(4, -1000.0), b_h=rng.normal(size=2))
        w1, w2, _ = _inputs(rng, params)
        trace = forward(params, w1, w2)
        assert not trace.wt1.any() and not trace.wt2.any()
        expected = 10.0 * _sigmoid(float(params.a) * (params.w_y @ np.tanh(params.b_h) + float(params.b_y)))
        assert abs(trace.y - expected) < 1e-12

    def test_matches_straight_line_recomputation(self):
        rng = np.random.default_rng(2)
        for k in range(100):
            params = _random_params(rng, 4, 3, 2, sdf=k % 2 == 0)
            w1, w2, x = _inputs(rng, params)
            assert abs(forward(params, w1, w2, x).y - _straight_line_forward(params, w1, w2, x)) < 1e-12

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        params = _random_params(rng, 5, 4, 3, sdf=True)
        w1, w2, x = _inputs(rng, params, batch=7)
        batch_y = forward(params, w1, w2, x).y
        for i in range(7):
            assert abs(batch_y[i] - forward(params, w1[i], w2[i], x[i]).y) < 1e-12

    def test_output_strictly_inside_range(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            params = _random_params(rng, 4, 3, 2, sdf=bool(rng.integers(2)), max_score=float(rng.uniform(1, 10)))
            scale = 10.0 ** rng.uniform(-2, 3)
            params = ModelParams(max_score=params.max_score,
                                 **{k: v * scale for k, v in params.trainable().items()})
            w1, w2, x = _inputs(rng, params, batch=100)
            y = forward(params, w1 * scale, w2, x).y
            assert ((y > 0) & (y < params.max_score)).all()

    def test_eval_mode_consumes_no_randomness(self):
        rng = np.random.default_rng(5)
        params = _random_params(rng, 4, 3, 2, sdf=False)
        w1, w2, _ = _inputs(rng, params)
        state = rng.bit_generator.state
        first = forward(params, w1, w2, mode="eval", rng=rng).y
        assert rng.bit_generator.state == state
        assert forward(params, w1, w2, mode="eval").y == first

    def test_train_mode_applies_dropout_before_gates(self):
        rng = np.random.default_rng(6)
        params = _random_params(rng, 6, 3, 2, sdf=False)
        w1, w2, _ = _inputs(rng, params)
        trace = forward(params, w1, w2, mode="train", rng=np.random.default_rng(0), keep_prob=0.5)
        np.testing.assert_array_equal(trace.w1, w1 * trace.mask1)
        np.testing.assert_array_equal(trace.wt2, trace.w2 * trace.g1)
        assert set(np.unique(trace.mask1)) <= {0.0, 2.0}

    def test_asymmetric(self):
        rng = np.random.default_rng(7)
        params = _random_params(rng, 4, 3, 2, sdf=False)
        w1, w2, _ = _inputs(rng, params)
        assert forward(params, w1, w2).y != forward(params, w2, w1).y

    def test_shape_errors(self):
        params = init_params(4, 3, 2, True, 10.0, 1)
        with pytest.raises(ValueError):
            forward(params, np.zeros(3), np.zeros(3), np.zeros(N_PAIR_FEATURES))
        with pytest.raises(ValueError):
            forward(params, np.zeros(4), np.zeros(4))
        with pytest.raises(ValueError):
            forward(init_params(4, 3, 2, False, 10.0, 1), np.zeros(4), np.zeros(4), np.zeros(N_PAIR_FEATURES))
        with pytest.raises(ValueError):
            forward(params, np.zeros(4), np.zeros(4), np.zeros(N_PAIR_FEATURES), mode="train")


class TestBackward:

    @pytest.mark.parametrize("case", range(20))
    def test_matches_finite_differences(self, case):
        rng = np.random.default_rng(100 + case)
        dim, m, h = int(rng.choice([4, 8])), int(rng.choice([3, 6])), int(rng.choice([2, 5]))
        params = _random_params(rng, dim, m, h, sdf=case % 2 == 0)
        w1, w2, x = _inputs(rng, params, batch=3)
        coef = rng.normal(size=3)
        grads = backward(params, forward(params, w1, w2, x), coef)
        assert set(grads) == set(params.trainable())

        eps = 1e-4
        for name, value in params.trainable().items():
            numeric = np.zeros_like(value)
            for idx in np.ndindex(value.shape):
                original = value[idx]
                value[idx] = original + eps
                up = _batch_loss(params, w1, w2, x, coef)
                value[idx] = original - eps
                down = _batch_loss(params, w1, w2, x, coef)
                value[idx] = original
                numeric[idx] = (up - down) / (2 * eps)
            rel = np.abs(grads[name] - numeric) / np.maximum(np.maximum(np.abs(grads[name]), np.abs(numeric)), 1e-4)
            assert rel.max() < 1e-3, name

    def test_matches_autograd(self):
        rng = np.random.default_rng(8)
        params = _random_params(rng, 6, 4, 3, sdf=True)
        w1, w2, x = _inputs(rng, params, batch=5)
        coef = rng.normal(size=5)
        trace = forward(params, w1, w2, x, mode="train", rng=np.random.default_rng(1), keep_prob=0.5)
        grads = backward(params, trace, coef)

        t = {k: torch.tensor(v, dtype=torch.float64, requires_grad=True) for k, v in params.trainable().items()}
        tw1, tw2, tx = (torch.tensor(v, dtype=torch.float64) for v in (trace.w1, trace.w2, x))
        g1 = torch.sigmoid(tw1 @ t["w_g1"].T + t["b_g1"])
        g2 = torch.sigmoid(tw2 @ t["w_g2"].T + t["b_g2"])
        m1 = torch.tanh((tw1 * g2) @ t["w_m1"].T + t["b_m1"])
        m2 = torch.tanh((tw2 * g1) @ t["w_m2"].T + t["b_m2"])
        hidden = torch.tanh((m1 * m2) @ t["w_h"].T + tx @ t["w_x"].T + t["b_h"])
        y = params.max_score * torch.sigmoid(t["a"] * (hidden @ t["w_y"] + t["b_y"]))
        torch.sum(torch.tensor(coef) * y).backward()

        np.testing.assert_allclose(y.detach().numpy(), trace.y, atol=1e-12)
        for name in TRAINABLE:
            np.testing.assert_allclose(grads[name], t[name].grad.numpy(), rtol=1e-9, atol=1e-12, err_msg=name)

    def test_zero_upstream_gradient(self):
        rng = np.random.default_rng(9)
        params = _random_params(rng, 4, 3, 2, sdf=True)
        w1, w2, x = _inputs(rng, params)
        grads = backward(params, forward(params, w1, w2, x), 0.0)
        assert all(not g.any() for g in grads.values())

    def test_output_bias_closed_form(self):
        rng = np.random.default_rng(10)
        params = _random_params(rng, 4, 3, 2, sdf=False)
        w1, w2, _ = _inputs(rng, params)
        trace = forward(params, w1, w2)
        grads = backward(params, trace, 1.5)
        expected = 1.5 * params.max_score * trace.sig * (1 - trace.sig) * float(params.a)
        assert abs(grads["b_y"] - expected) < 1e-12

    def test_shape_mismatch(self):
        params = init_params(4, 3, 2, False, 10.0, 1)
        trace = forward(params, np.ones((2, 4)), np.ones((2, 4)))
        with pytest.raises(ValueError):
            backward(params, trace, np.ones(3))


@pytest.fixture
def bundle_files(tmp_path):
    rng = np.random.default_rng(12)
    words = ["captain", "officer", "dog", "animal"]
    emb = write_embeddings(tmp_path / "emb.txt", words, rng.normal(size=(4, 4)))
    (tmp_path / "c.txt").write_text("the captain is an officer\nthe dog is an animal\n", encoding="utf-8")
    (tmp_path / "d.conll").write_text("1\tcaptain\t2\tnsubj\n2\tofficer\t0\troot\n\n"
                                      "1\tdog\t2\tnsubj\n2\tanimal\t0\troot\n", encoding="utf-8")
    save_space(build_window_space(tmp_path / "c.txt"), tmp_path / "w.npz")
    save_space(build_dependency_space(tmp_path / "d.conll"), tmp_path / "dep.npz")
    return tmp_path, emb


def _save_checkpoint(path, params, table, extra=None):
    meta = {"paths": {"embeddings": str(extra["embeddings"])},
            "fingerprints": {"embeddings": table.fingerprint}, "task": "graded", "seed": 1, "threshold": 4.5}
    if params.sdf_enabled:
        meta["paths"].update(window_space=str(extra["window_space"]), dependency_space=str(extra["dependency_space"]))
    save_model(path, params, meta)


class TestCheckpoint:

    def test_round_trip_is_bit_exact(self, tmp_path):
        params = _random_params(np.random.default_rng(13), 4, 3, 2, sdf=True)
        save_model(tmp_path / "m.npz", params, {"seed": 3})
        loaded, meta = load_model(tmp_path / "m.npz")
        assert loaded.equals(params)
        assert meta["seed"] == 3 and meta["sdf"] is True and meta["max_score"] == 10.0
        save_model(tmp_path / "m2.npz", loaded, {"seed": 3})
        assert (tmp_path / "m.npz").read_bytes() == (tmp_path / "m2.npz").read_bytes()

    def test_truncated_checkpoint(self, tmp_path):
        save_model(tmp_path / "m.npz", init_params(4, 3, 2, False, 10.0, 1))
        data = (tmp_path / "m.npz").read_bytes()
        (tmp_path / "t.npz").write_bytes(data[:100])
        with pytest.raises(ValueError, match="t.npz"):
            load_model(tmp_path / "t.npz")

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_bundle(tmp_path / "none.npz")


class TestModelBundle:

    def test_score_pair_range_and_oov(self, bundle_files):
        tmp_path, emb = bundle_files
        table = load_embeddings(emb)
        bundle = ModelBundle(init_params(4, 3, 2, False, 10.0, 1), table)
        value = score_pair(bundle, "captain", "officer")
        assert 0 < value < 10
        assert score_pair(bundle, "captain", "unknown") is None
        scores, skipped = bundle.score_pairs([("captain", "officer"), ("x", "dog")])
        assert scores[0] == value and np.isnan(scores[1])
        assert skipped == [(1, "oov word1:x")]

    def test_sdf_bundle_from_checkpoint(self, bundle_files):
        tmp_path, emb = bundle_files
        table = load_embeddings(emb)
        params = init_params(4, 3, 2, True, 10.0, 2)
        paths = {"embeddings": emb, "window_space": tmp_path / "w.npz", "dependency_space": tmp_path / "dep.npz"}
        _save_checkpoint(tmp_path / "m.npz", params, table, paths)
        bundle, meta = load_bundle(tmp_path / "m.npz")
        assert bundle.threshold == 4.5
        assert 0 < bundle.score_pair("dog", "animal") < 10
        assert bundle.encoder.features("captain", "officer").shape == (N_PAIR_FEATURES,)

    def test_case_folded_feature_queries(self, bundle_files):
        tmp_path, emb = bundle_files
        table = load_embeddings(emb, lowercase=True)
        encoder = PairEncoder(table, [load_space(tmp_path / "w.npz"), load_space(tmp_path / "dep.npz")])
        lower = encoder.features("dog", "animal")
        assert lower.any()
        np.testing.assert_array_equal(encoder.features("Dog", "ANIMAL"), lower)
        assert not PairEncoder(load_embeddings(emb), encoder.spaces).features("Dog", "animal").any()

    def test_fingerprint_mismatch(self, bundle_files, caplog):
        tmp_path, emb = bundle_files
        table = load_embeddings(emb)
        _save_checkpoint(tmp_path / "m.npz", init_params(4, 3, 2, False, 10.0, 1), table, {"embeddings": emb})
        with open(emb, "a", encoding="utf-8") as f:
            f.write("extra 0.1 0.2 0.3 0.4\n")
        with caplog.at_level(logging.WARNING, logger="Graded_Lexical_Entailment"):
            load_bundle(tmp_path / "m.npz")
        assert any("fingerprint" in r.message for r in caplog.records)
        with pytest.raises(ValueError, match="fingerprint"):
            load_bundle(tmp_path / "m.npz", strict=True)

    def test_float32_inference(self, bundle_files):
        tmp_path, emb = bundle_files
        table = load_embeddings(emb)
        params = _random_params(np.random.default_rng(14), 4, 3, 2, sdf=False)
        _save_checkpoint(tmp_path / "m.npz", params, table, {"embeddings": emb})
        single, _ = load_bundle(tmp_path / "m.npz", float32=True)
        double, _ = load_bundle(tmp_path / "m.npz")
        assert single.params.dtype == np.float32
        assert abs(single.score_pair("dog", "animal") - double.score_pair("dog", "animal")) < 1e-4

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            ModelBundle(init_params(4, 3, 2, False, 10.0, 1), EmbeddingTable(["a"], [[1.0, 2.0]]))
