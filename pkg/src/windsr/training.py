"""Composite self/cross/latent loss, coordinate-sampled training and gradient checks."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
import yaml

from .baselines.resample import bicubic_resize
from .datahub import DatasetSplit, ModalityPairBatch
from .errors import ConfigError, ShapeError, TrainingDivergenceError
from .neuralcore import ModelBundle, ModelConfig, build_model, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    coords_per_instance: int = 1024
    learning_rate: float = 1e-4
    scale_range: tuple[float, float] = (1.0, 2.0)
    d: int = 8
    seed: int = 0
    decoder_variant: str = "GEI"
    divergence_factor: float = 1e4
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scale_range = tuple(float(s) for s in self.scale_range)
        lo, hi = self.scale_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"scale range must satisfy 1 <= s_min <= s_max, got {self.scale_range}")
        if self.coords_per_instance < 1:
            raise ConfigError("coords_per_instance must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{**self.model, "d": self.d, "variant": self.decoder_variant})

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        data.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale_range"] = list(self.scale_range)
        return d


@dataclass
class LossBreakdown:
    l_self: float
    l_cross: float
    l_latent: float

    @property
    def total(self) -> float:
        return self.l_self + self.l_cross + self.l_latent

    def to_dict(self) -> dict:
        return {"l_self": self.l_self, "l_cross": self.l_cross, "l_latent": self.l_latent, "total": self.total}


@dataclass
class QuerySet:
    """Sampled query coordinates and bicubic targets for a batch of instances."""

    coord: torch.Tensor  # (B, Q, 2)
    cell: torch.Tensor  # (B, Q, 2)
    target1: torch.Tensor  # (B, Q)
    target2: torch.Tensor  # (B, Q)
    scale: float = 1.0


def sample_queries(x1: np.ndarray, x2: np.ndarray, scale: float, n_coords: int,
                   rng: np.random.Generator, dtype=torch.float32) -> QuerySet:
    """Draw ``n_coords`` target pixels per instance from the ``scale``-resized grid.

    ``x1``/``x2`` are ``(B, h, w)`` arrays of aligned fields; targets come from
    bicubic resizing of each field, and both modalities share one coordinate set.
    """
    B, h, w = x1.shape
    hs, ws = int(round(scale * h)), int(round(scale * w))
    n = min(n_coords, hs * ws)
    coords = np.empty((B, n, 2))
    t1 = np.empty((B, n))
    t2 = np.empty((B, n))
    for b in range(B):
        idx = rng.choice(hs * ws, size=n, replace=False)
        iy, ix = np.divmod(idx, ws)
        coords[b, :, 0] = -1.0 + (2.0 * iy + 1.0) / hs
        coords[b, :, 1] = -1.0 + (2.0 * ix + 1.0) / ws
        t1[b] = bicubic_resize(x1[b], size=(hs, ws)).ravel()[idx]
        t2[b] = bicubic_resize(x2[b], size=(hs, ws)).ravel()[idx]
    cell = np.broadcast_to(np.array([2.0 / hs, 2.0 / ws]), coords.shape)
    as_t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)  # noqa: E731
    return QuerySet(as_t(coords), as_t(cell), as_t(t1), as_t(t2), float(scale))


def _mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    return F.mse_loss(pred, target)


def loss_self(model: ModelBundle, x1: torch.Tensor, x2: torch.Tensor, q: QuerySet) -> torch.Tensor:
    """MSE of each modality reconstructed through its own self encoder."""
    return (_mse(model(x1, 1, 1, q.coord, q.cell), q.target1)
            + _mse(model(x2, 2, 2, q.coord, q.cell), q.target2))


def loss_cross(model: ModelBundle, x1: torch.Tensor, x2: torch.Tensor, q: QuerySet) -> torch.Tensor:
    """MSE of modality 1 predicted from ``x2`` (E21) plus modality 2 predicted from ``x1`` (E12)."""
    return (_mse(model(x2, 2, 1, q.coord, q.cell), q.target1)
            + _mse(model(x1, 1, 2, q.coord, q.cell), q.target2))


def loss_latent(a: torch.Tensor, b: torch.Tensor, c: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
    """Pull E11(x1)=a toward E21(x2)=b and E22(x2)=c toward E12(x1)=e via their pair means."""
    if a.shape != b.shape or c.shape != e.shape:
        raise ShapeError(f"latent pairs differ in shape: {tuple(a.shape)}/{tuple(b.shape)}, "
                         f"{tuple(c.shape)}/{tuple(e.shape)}")
    m1 = (a + b) / 2
    m2 = (c + e) / 2
    return F.mse_loss(a, m1) + F.mse_loss(b, m1) + F.mse_loss(c, m2) + F.mse_loss(e, m2)


def composite_loss(model: ModelBundle, x1: torch.Tensor, x2: torch.Tensor,
                   q: QuerySet) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(self, cross, latent) terms sharing one encoding pass per encoder."""
    a = model.encode(x1, 1, 1)
    e = model.encode(x1, 1, 2)
    c = model.encode(x2, 2, 2)
    b = model.encode(x2, 2, 1)
    l_self = (_mse(model.decode_latent(a, 1, q.coord, q.cell), q.target1)
              + _mse(model.decode_latent(c, 2, q.coord, q.cell), q.target2))
    l_cross = (_mse(model.decode_latent(b, 1, q.coord, q.cell), q.target1)
               + _mse(model.decode_latent(e, 2, q.coord, q.cell), q.target2))
    return l_self, l_cross, loss_latent(a, b, c, e)


def total_loss(model: ModelBundle, x1: torch.Tensor, x2: torch.Tensor, q: QuerySet) -> torch.Tensor:
    l_self, l_cross, l_latent = composite_loss(model, x1, x2, q)
    return l_self + l_cross + l_latent


def _as_input(x: np.ndarray, dtype) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(x), dtype=dtype).unsqueeze(1)


class Trainer:
    """Owns the optimizer, sampling RNG and step counter for one bundle."""

    def __init__(self, model: ModelBundle, config: TrainConfig):
        self.model = model
        self.config = config
        self.optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        self.rng = np.random.default_rng(config.seed)
        self.step = 0
        self.epoch = 0
        self.initial_loss: float | None = None

    @property
    def dtype(self) -> torch.dtype:
        return next(self.model.parameters()).dtype

    def train_step(self, x1: np.ndarray, x2: np.ndarray) -> LossBreakdown:
        """One update on a ``(B, h, w)`` batch; returns the pre-update loss terms."""
        lo, hi = self.config.scale_range
        s = float(self.rng.uniform(lo, hi))
        q = sample_queries(x1, x2, s, self.config.coords_per_instance, self.rng, self.dtype)
        self.model.train()
        terms = composite_loss(self.model, _as_input(x1, self.dtype), _as_input(x2, self.dtype), q)
        total = terms[0] + terms[1] + terms[2]
        breakdown = LossBreakdown(*(float(t.detach()) for t in terms))
        value = float(total.detach())
        if self.initial_loss is None:
            self.initial_loss = value
        if not np.isfinite(value) or value > self.config.divergence_factor * max(self.initial_loss, 1e-12):
            raise TrainingDivergenceError(
                f"step {self.step}: loss {value} (initial {self.initial_loss}); terms {breakdown.to_dict()}")
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        self.step += 1
        return breakdown

    def run_epoch(self, batch: ModalityPairBatch) -> dict:
        if not batch.normalized:
            raise ConfigError("training batch must be normalized")
        x1, x2 = batch.stack(1), batch.stack(2)
        order = self.rng.permutation(len(batch))
        sums = np.zeros(3)
        n_steps = 0
        t0 = time.perf_counter()
        for i in range(0, len(order), self.config.batch_size):
            idx = order[i:i + self.config.batch_size]
            b = self.train_step(x1[idx], x2[idx])
            sums += (b.l_self, b.l_cross, b.l_latent)
            n_steps += 1
        self.epoch += 1
        mean = LossBreakdown(*(sums / max(n_steps, 1)))
        return {"epoch": self.epoch, **mean.to_dict(), "steps": self.step,
                "wall_seconds": time.perf_counter() - t0}

    def state(self) -> dict:
        return {"optimizer": self.optimizer.state_dict(), "step": self.step, "epoch": self.epoch,
                "initial_loss": self.initial_loss,
                "rng": json.dumps(self.rng.bit_generator.state),
                "train_config": json.dumps(self.config.to_dict())}

    def load_state(self, state: dict) -> None:
        self.optimizer.load_state_dict(state["optimizer"])
        self.step = int(state["step"])
        self.epoch = int(state["epoch"])
        self.initial_loss = state["initial_loss"]
        self.rng.bit_generator.state = json.loads(state["rng"])

    def save(self, path) -> Path:
        return save_checkpoint(self.model, path, extra={"trainer": self.state()})

    @classmethod
    def resume(cls, path, config: TrainConfig | None = None) -> "Trainer":
        model, extra = load_checkpoint(path)
        state = extra["trainer"]
        config = config or TrainConfig(**json.loads(state["train_config"]))
        trainer = cls(model, config)
        trainer.load_state(state)
        return trainer


@dataclass
class TrainResult:
    trainer: Trainer
    checkpoints: list[Path]
    log: list[dict]


def checkpoint_path(out_dir, epoch: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"epoch_{epoch:04d}.pt"


def train(split: DatasetSplit, config: TrainConfig, out_dir=None, *, trainer: Trainer | None = None,
          model: ModelBundle | None = None) -> TrainResult:
    """Train on ``split.train`` for ``config.epochs`` epochs.

    Writes a checkpoint after every epoch (plus the initial state when starting
    fresh) and appends one JSON line per epoch to ``loss_log.jsonl``.
    """
    if trainer is None:
        torch.manual_seed(config.seed)
        if model is None:
            model = build_model(config.model_config(), seed=config.seed, norm_stats=split.train.norm_stats,
                                altitudes=split.train.altitudes)
        trainer = Trainer(model, config)
    checkpoints: list[Path] = []
    history: list[dict] = []
    log_file = Path(out_dir) / "loss_log.jsonl" if out_dir is not None else None
    if out_dir is not None and trainer.epoch == 0:
        checkpoints.append(trainer.save(checkpoint_path(out_dir, 0)))
        log_file.unlink(missing_ok=True)
    target_epoch = trainer.epoch + config.epochs
    while trainer.epoch < target_epoch:
        record = trainer.run_epoch(split.train)
        history.append(record)
        log.info("epoch %d total %.6g (self %.4g cross %.4g latent %.4g)", record["epoch"], record["total"],
                 record["l_self"], record["l_cross"], record["l_latent"])
        if out_dir is not None:
            checkpoints.append(trainer.save(checkpoint_path(out_dir, trainer.epoch)))
            with open(log_file, "a") as fh:
                fh.write(json.dumps(record) + "\n")
    return TrainResult(trainer, checkpoints, history)


# --------------------------------------------------------------------- gradient check

@dataclass
class GradCheckResult:
    max_rel_error: float
    fraction_within: float
    n_checked: int
    tolerance: float
    rel_errors: np.ndarray = field(repr=False, default=None)


def grad_check(model: ModelBundle, x1: torch.Tensor, x2: torch.Tensor, q: QuerySet, *, n_params: int = 500,
               eps: float = 1e-6, tol: float = 1e-3, seed: int = 0, max_params: int = 20_000) -> GradCheckResult:
    """Compare autograd gradients of the total loss with central differences (float64)."""
    n_total = sum(p.numel() for p in model.parameters())
    if n_total > max_params:
        raise ConfigError(f"gradient check needs <= {max_params} parameters, model has {n_total}")
    model = model.double()
    x1, x2 = x1.double(), x2.double()
    q = QuerySet(q.coord.double(), q.cell.double(), q.target1.double(), q.target2.double(), q.scale)
    model.zero_grad(set_to_none=True)
    total_loss(model, x1, x2, q).backward()
    params = [p for p in model.parameters() if p.requires_grad]
    grads = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(seed)
    flat_ids = rng.choice(sizes.sum(), size=min(n_params, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    errors = []
    with torch.no_grad():
        for fid in flat_ids:
            pi = int(np.searchsorted(offsets, fid, side="right") - 1)
            j = int(fid - offsets[pi])
            flat = params[pi].view(-1)
            orig = flat[j].item()
            flat[j] = orig + eps
            up = total_loss(model, x1, x2, q).item()
            flat[j] = orig - eps
            down = total_loss(model, x1, x2, q).item()
            flat[j] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[pi].view(-1)[j].item()
            denom = max(abs(numeric), abs(analytic), 1e-8)
            errors.append(abs(numeric - analytic) / denom)
    errors = np.asarray(errors)
    return GradCheckResult(float(errors.max(initial=0.0)), float(np.mean(errors <= tol)) if errors.size else 1.0,
                           int(errors.size), tol, errors)
