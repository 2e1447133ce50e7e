import json

import numpy as np
import pytest
import torch
import yaml

from windsr.datahub import DatasetSplit, SynthSpec, normalize, split, synth_stack
from windsr.errors import ConfigError, ShapeError, TrainingDivergenceError
from windsr.neuralcore import ModelConfig, build_model
from windsr.training import (LossBreakdown, QuerySet, TrainConfig, Trainer, composite_loss, grad_check, loss_cross,
                             loss_latent, loss_self, sample_queries, total_loss, train)
from windsr.baselines import bicubic_resize

torch.set_num_threads(1)

TINY_MODEL = dict(latent_channels=2, encoder_width=4, feature_channels=8, feature_blocks=1, global_dim=8,
                  global_widths=[4, 8, 8], decoder_hidden=[16, 16], positional_freqs=2)


def _split(n_train=8, n_test=4, seed=0, size=16, perturbation=0.1):
    stack = synth_stack(seed, SynthSpec(height=size, width=size, count=n_train + n_test, perturbation=perturbation))
    parts = split(stack.pair(10.0, 160.0), n_train, n_test, seed)
    tr, _ = normalize(parts.train)
    return DatasetSplit(tr, parts.test, seed)


def _inputs(seed=0, b=2, dtype=torch.float64):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.uniform(0, 1, (b, 16, 16)), rng.uniform(0, 1, (b, 16, 16))
    q = sample_queries(x1, x2, 1.5, 40, rng, dtype)
    return torch.as_tensor(x1, dtype=dtype)[:, None], torch.as_tensor(x2, dtype=dtype)[:, None], q


class _Echo(torch.nn.Module):
    """Stand-in bundle that returns scripted predictions per (source, target) route."""

    def __init__(self, outputs):
        super().__init__()
        self.outputs = outputs

    def __call__(self, x, s, t, coord, cell):
        return self.outputs[(s, t)]


# --- configuration -------------------------------------------------------------

def test_config_validation_and_file(tmp_path):
    with pytest.raises(ConfigError):
        TrainConfig(scale_range=(0.5, 2))
    with pytest.raises(ConfigError):
        TrainConfig(coords_per_instance=0)
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"epochs": 3, "learning_rate": 1e-3, "model": {"feature_channels": 8}}))
    c = TrainConfig.from_file(path, epochs=5, seed=None)
    assert c.epochs == 5 and c.learning_rate == 1e-3 and c.model_config().feature_channels == 8
    path.write_text(yaml.safe_dump({"epoch": 3}))
    with pytest.raises(ConfigError):
        TrainConfig.from_file(path)


def test_defaults():
    c = TrainConfig()
    assert (c.learning_rate, c.coords_per_instance, c.scale_range) == (1e-4, 1024, (1.0, 2.0))


# --- query sampling ------------------------------------------------------------

def test_sample_queries_targets_are_bicubic_values():
    rng = np.random.default_rng(0)
    x1, x2 = rng.normal(size=(2, 10, 12)), rng.normal(size=(2, 10, 12))
    q = sample_queries(x1, x2, 1.5, 50, np.random.default_rng(1), torch.float64)
    assert q.coord.shape == (2, 50, 2) and q.target1.shape == (2, 50)
    big = bicubic_resize(x2[1], size=(15, 18))
    iy = np.rint(((q.coord[1, :, 0].numpy() + 1) * 15 - 1) / 2).astype(int)
    ix = np.rint(((q.coord[1, :, 1].numpy() + 1) * 18 - 1) / 2).astype(int)
    assert np.array_equal(q.target2[1].numpy(), big[iy, ix])
    assert torch.allclose(q.cell, torch.tensor([2 / 15, 2 / 18], dtype=torch.float64).expand_as(q.cell))
    # without replacement
    assert len({tuple(c) for c in q.coord[0].tolist()}) == 50


def test_sample_queries_caps_at_grid_size():
    q = sample_queries(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)), 1.0, 100, np.random.default_rng(0))
    assert q.coord.shape == (1, 16, 2)


# --- losses --------------------------------------------------------------------

def _scripted(t1, t2, off):
    return _Echo({(1, 1): t1 + off[0], (2, 2): t2 + off[1], (2, 1): t1 + off[2], (1, 2): t2 + off[3]})


def test_loss_self_and_cross_arithmetic():
    t1, t2 = torch.randn(2, 30), torch.randn(2, 30)
    q = QuerySet(torch.zeros(2, 30, 2), torch.zeros(2, 30, 2), t1, t2)
    assert float(loss_self(_scripted(t1, t2, (0, 0, 0, 0)), None, None, q)) == 0.0
    assert float(loss_self(_scripted(t1, t2, (1, 1, 0, 0)), None, None, q)) == pytest.approx(2.0)
    assert float(loss_cross(_scripted(t1, t2, (0, 0, 0, 0)), None, None, q)) == 0.0
    assert float(loss_cross(_scripted(t1, t2, (5, 5, 0, 1)), None, None, q)) == pytest.approx(1.0)
    assert float(loss_cross(_scripted(t1, t2, (5, 5, 1, 0)), None, None, q)) == pytest.approx(1.0)


def test_loss_shape_mismatch():
    t = torch.zeros(1, 5)
    q = QuerySet(torch.zeros(1, 5, 2), torch.zeros(1, 5, 2), t, t)
    with pytest.raises(ShapeError):
        loss_self(_Echo({(1, 1): torch.zeros(1, 4), (2, 2): t}), None, None, q)
    with pytest.raises(ShapeError):
        loss_latent(torch.zeros(3), torch.zeros(4), torch.zeros(2), torch.zeros(2))


def _oracle_mse(pred, target):
    p, t = pred.detach().numpy().ravel(), target.detach().numpy().ravel()
    return sum((float(a) - float(b)) ** 2 for a, b in zip(p, t)) / p.size


def test_losses_match_independent_oracle():
    m = build_model(ModelConfig.tiny("GPEI"), seed=2).double()
    x1, x2, q = _inputs(3)
    with torch.no_grad():
        preds = {r: m(x1 if r[0] == 1 else x2, *r, q.coord, q.cell) for r in ((1, 1), (2, 2), (2, 1), (1, 2))}
        self_oracle = _oracle_mse(preds[1, 1], q.target1) + _oracle_mse(preds[2, 2], q.target2)
        cross_oracle = _oracle_mse(preds[2, 1], q.target1) + _oracle_mse(preds[1, 2], q.target2)
        assert float(loss_self(m, x1, x2, q)) == pytest.approx(self_oracle, rel=1e-7, abs=1e-12)
        assert float(loss_cross(m, x1, x2, q)) == pytest.approx(cross_oracle, rel=1e-7, abs=1e-12)
        l_s, l_c, _ = composite_loss(m, x1, x2, q)
        assert float(l_s) == pytest.approx(self_oracle, rel=1e-7) and float(l_c) == pytest.approx(cross_oracle, rel=1e-7)


def test_latent_loss_zero_and_identity():
    a, c = torch.randn(2, 1, 4, 4), torch.randn(2, 1, 4, 4)
    assert float(loss_latent(a, a.clone(), c, c.clone())) == 0.0
    g = torch.Generator().manual_seed(0)
    a, b, c, e = (torch.randn(3, 2, 5, 5, generator=g, dtype=torch.float64) for _ in range(4))
    closed = (torch.mean((a - b) ** 2) + torch.mean((c - e) ** 2)) / 2
    assert float(loss_latent(a, b, c, e)) == pytest.approx(float(closed), rel=1e-12)


def test_latent_loss_antisymmetric_pair():
    a = torch.tensor([1.0, -2.0, 3.0], dtype=torch.float64)
    z = torch.zeros(3, dtype=torch.float64)
    expected = 2 * float(torch.mean(a**2))
    assert float(loss_latent(a, -a, z, z)) == pytest.approx(expected, rel=1e-12)


def test_losses_batch_permutation_invariant():
    m = build_model(ModelConfig.tiny("GEI"), seed=0).double()
    x1, x2, q = _inputs(4, b=3)
    perm = torch.tensor([2, 0, 1])
    qp = QuerySet(q.coord[perm], q.cell[perm], q.target1[perm], q.target2[perm])
    with torch.no_grad():
        a = composite_loss(m, x1, x2, q)
        b = composite_loss(m, x1[perm], x2[perm], qp)
    for u, v in zip(a, b):
        assert float(u) == pytest.approx(float(v), rel=1e-12)


def test_breakdown_additivity():
    b = LossBreakdown(0.1, 0.25, 0.003)
    assert b.total == 0.1 + 0.25 + 0.003
    assert b.to_dict()["total"] == b.total


# --- gradients -----------------------------------------------------------------

def test_grad_check_gei_tiny():
    m = build_model(ModelConfig.tiny("GEI"), seed=0)
    x1, x2, q = _inputs(0)
    r = grad_check(m, x1, x2, q, n_params=60)
    assert r.n_checked == 60 and r.fraction_within >= 0.95


def test_grad_check_refuses_large_models():
    with pytest.raises(ConfigError):
        grad_check(build_model(ModelConfig()), *_inputs(0))


def test_perfect_targets_give_zero_gradient():
    m = build_model(ModelConfig.tiny("LIIF"), seed=0).double()
    x1, x2, q = _inputs(1)
    with torch.no_grad():
        # make all encoders identical so the latent term vanishes, then use the model's own outputs as targets
        m.encoders["21"].load_state_dict(m.encoders["11"].state_dict())
        m.encoders["12"].load_state_dict(m.encoders["22"].state_dict())
        x2 = x1.clone()
        m.encoders["22"].load_state_dict(m.encoders["11"].state_dict())
        m.encoders["12"].load_state_dict(m.encoders["11"].state_dict())
        m.encoders["21"].load_state_dict(m.encoders["11"].state_dict())
        t1 = m(x1, 1, 1, q.coord, q.cell)
        t2 = m(x2, 2, 2, q.coord, q.cell)
    m.decoders["2"].load_state_dict(m.decoders["1"].state_dict())
    m.feature_encoders["2"].load_state_dict(m.feature_encoders["1"].state_dict())
    with torch.no_grad():
        t2 = m(x2, 2, 2, q.coord, q.cell)
    qq = QuerySet(q.coord, q.cell, t1, t2)
    m.zero_grad()
    loss = total_loss(m, x1, x2, qq)
    loss.backward()
    assert float(loss.detach()) == 0.0
    norm = torch.sqrt(sum((p.grad**2).sum() for p in m.parameters() if p.grad is not None))
    assert float(norm) < 1e-6


def test_latent_term_reaches_encoders_with_frozen_reconstruction():
    m = build_model(ModelConfig.tiny("GEI"), seed=0).double()
    x1, x2, q = _inputs(2)
    a, e = m.encode(x1, 1, 1), m.encode(x1, 1, 2)
    c, b = m.encode(x2, 2, 2), m.encode(x2, 2, 1)
    loss_latent(a, b, c, e).backward()
    for k, enc in m.encoders.items():
        assert sum(float(p.grad.abs().sum()) for p in enc.parameters()) > 0, k
    assert all(p.grad is None for p in m.decoders.parameters())


# --- trainer -------------------------------------------------------------------

def _cfg(**kw):
    base = dict(epochs=1, batch_size=4, coords_per_instance=32, learning_rate=1e-3, d=4, seed=0,
                decoder_variant="GEI", model=TINY_MODEL)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_learning_rate_keeps_parameters():
    sp = _split()
    cfg = _cfg(learning_rate=0.0)
    m = build_model(cfg.model_config(), norm_stats=sp.train.norm_stats, altitudes=sp.train.altitudes)
    before = {k: v.clone() for k, v in m.state_dict().items()}
    t = Trainer(m, cfg)
    b = t.train_step(sp.train.stack(1)[:4], sp.train.stack(2)[:4])
    assert b.total == b.l_self + b.l_cross + b.l_latent
    for k, v in m.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_divergence_guard():
    sp = _split()
    x1, x2 = sp.train.stack(1)[:4], sp.train.stack(2)[:4]
    cfg = _cfg()
    t = Trainer(build_model(cfg.model_config()), cfg)
    t.train_step(x1, x2)
    bad = x1.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergenceError, match="l_self"):
        t.train_step(bad, x2)
    t.initial_loss = 1e-12
    with pytest.raises(TrainingDivergenceError):
        t.train_step(x1, x2)


def test_epochs_zero_writes_initial_checkpoint_only(tmp_path):
    res = train(_split(), _cfg(epochs=0), tmp_path)
    assert [p.name for p in res.checkpoints] == ["epoch_0000.pt"]
    assert res.log == []


def test_train_log_checkpoints_and_resume(tmp_path):
    sp = _split()
    res = train(sp, _cfg(epochs=2), tmp_path)
    assert len(res.checkpoints) == 3
    lines = [json.loads(l) for l in (tmp_path / "loss_log.jsonl").read_text().splitlines()]
    assert [l["epoch"] for l in lines] == [1, 2]
    assert set(lines[0]) >= {"epoch", "l_self", "l_cross", "l_latent", "total", "wall_seconds"}
    steps = res.trainer.step
    resumed = Trainer.resume(res.checkpoints[-1])
    assert resumed.step == steps and resumed.epoch == 2
    more = train(sp, _cfg(epochs=1), tmp_path, trainer=resumed)
    assert more.trainer.step == steps + steps // 2 and more.trainer.epoch == 3
    assert more.checkpoints[-1].name == "epoch_0003.pt"


def test_resume_matches_uninterrupted(tmp_path):
    sp = _split()
    full = train(sp, _cfg(epochs=2))
    part = train(sp, _cfg(epochs=1), tmp_path)
    cont = train(sp, _cfg(epochs=1), trainer=Trainer.resume(part.checkpoints[-1]))
    for (k, a), (_, b) in zip(full.trainer.model.state_dict().items(), cont.trainer.model.state_dict().items()):
        assert torch.equal(a, b), k


def test_training_is_deterministic():
    sp = _split()
    a = train(sp, _cfg(epochs=1))
    b = train(sp, _cfg(epochs=1))
    assert [r["total"] for r in a.log] == [r["total"] for r in b.log]


def test_requires_normalized_batch():
    sp = _split()
    with pytest.raises(ConfigError):
        train(DatasetSplit(sp.test, sp.test, 0), _cfg())


def test_toy_run_halves_loss_in_200_steps():
    sp = _split(n_train=16, n_test=0)
    cfg = _cfg(batch_size=4, coords_per_instance=64, learning_rate=3e-3, epochs=50)
    res = train(sp, cfg)
    assert res.trainer.step == 200
    first = res.log[0]["total"]
    assert res.log[-1]["total"] <= 0.5 * first
