"""Experiment drivers: the multi-scale super-resolution study across decoder
variants, the compression study against the classical baselines, and report
emission (CSV, JSON and static plots).

Each study returns a list of :class:`MetricRecord`, one per configuration,
holding test-set means of the per-field metrics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .baselines import BicubicMethod, PPMMethod, baseline_pipeline
from .datahub import ModalityPairBatch, WindField, make_pair
from .errors import PlanError
from .metrics import COLUMNS, MetricRecord, aggregate, compression_ratio, psnr, records_to_csv, records_to_json, ssim
from .neuralcore import LatentGrid, ModelBundle, decode_grid, load_checkpoint, reduce

log = logging.getLogger(__name__)

STUDIES = ("super_resolution", "compression")
DEFAULT_SCALES = (1.0, 1.25, 1.5, 2.0, 3.0, 4.0)
SR_DIRECTIONS = ((1, 2), (2, 1))
ALL_DIRECTIONS = ((1, 1), (2, 2), (1, 2), (2, 1))
VARIANT_LABELS = {"LIIF": "LIIF", "PEI": "PEI-LIIF", "GEI": "GEI-LIIF", "GPEI": "GPEI-LIIF"}


@dataclass
class ExperimentPlan:
    study: str
    variants: Sequence[str] = ("GEI",)
    scales: Sequence[float] = DEFAULT_SCALES
    directions: Sequence[tuple[int, int]] | None = None
    ppm_levels: Sequence[int] = (8, 16)
    bicubic_factors: Sequence[int] = (4, 8)
    mu: float = 255.0
    ppm_order: int = 3
    alpha: float = 0.16
    checkpoints: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.study not in STUDIES:
            raise PlanError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        self.variants = tuple(self.variants)
        self.scales = tuple(float(s) for s in self.scales)
        if self.directions is None:
            self.directions = SR_DIRECTIONS if self.study == "super_resolution" else ALL_DIRECTIONS
        self.directions = tuple((int(a), int(b)) for a, b in self.directions)
        for d in self.directions:
            if not set(d) <= {1, 2}:
                raise PlanError(f"direction {d} must use modalities 1 and 2")
        bad = [s for s in self.scales if not s >= 1]
        if bad:
            raise PlanError(f"scales must be >= 1, got {bad}")
        unknown = [v for v in self.variants if v not in VARIANT_LABELS]
        if unknown:
            raise PlanError(f"unknown decoder variants {unknown}")
        if self.study == "super_resolution" and not (self.variants and self.scales):
            raise PlanError("a super-resolution plan needs at least one variant and one scale")
        missing = {v: p for v, p in self.checkpoints.items() if not Path(p).is_file()}
        if missing:
            raise PlanError(f"checkpoints not found: {missing}")

    def baseline_methods(self) -> list:
        return ([PPMMethod(q, self.mu, self.ppm_order) for q in self.ppm_levels]
                + [BicubicMethod(d) for d in self.bicubic_factors])


def resolve_models(plan: ExperimentPlan, models: Mapping[str, ModelBundle] | None = None) -> dict[str, ModelBundle]:
    """Pick one bundle per planned variant, loading checkpoints the caller did not pass in."""
    models = dict(models or {})
    out = {}
    for v in plan.variants:
        if v in models:
            out[v] = models[v]
        elif v in plan.checkpoints:
            out[v] = load_checkpoint(plan.checkpoints[v])[0]
        else:
            raise PlanError(f"no model or checkpoint for decoder variant {v}")
        out[v].eval()
        if out[v].variant.value != v:
            raise PlanError(f"model supplied for {v} is a {out[v].variant.value} bundle")
    return out


def _component(testset: ModalityPairBatch) -> str:
    comps = {f.component for f in testset.fields_m1 + testset.fields_m2}
    if len(comps) != 1:
        raise PlanError(f"test set mixes wind components {sorted(comps)}")
    return comps.pop()


def _physical(testset: ModalityPairBatch) -> ModalityPairBatch:
    if testset.normalized:
        raise PlanError("evaluation expects a test set in physical units")
    if len(testset) == 0:
        raise PlanError("empty test set")
    return testset


def _score(reference: np.ndarray, candidate: np.ndarray) -> tuple[float, float]:
    return psnr(reference, candidate), ssim(reference, candidate)


def encode_shared(model: ModelBundle, field: WindField, source: int, target: int,
                  cache: dict | None = None) -> LatentGrid:
    """Latent for one input, computed once and reused by every consumer holding ``cache``."""
    if cache is None:
        return reduce(model, source, target, field)
    key = (id(model), source, target, field.timestamp_id)
    if key not in cache:
        cache[key] = reduce(model, source, target, field)
    return cache[key]


def run_sr_study(plan: ExperimentPlan, models: Mapping[str, ModelBundle] | None,
                 testset: ModalityPairBatch, *, latent_cache: dict | None = None) -> list[MetricRecord]:
    """One record per (variant, scale, direction), scored against bicubic SR targets."""
    if plan.study != "super_resolution":
        raise PlanError(f"run_sr_study needs a super_resolution plan, got {plan.study}")
    testset = _physical(testset)
    bundles = resolve_models(plan, models)
    component = _component(testset)
    cache = {} if latent_cache is None else latent_cache
    records = []
    for v in plan.variants:
        model = bundles[v]
        for s in plan.scales:
            for source, target in plan.directions:
                crs, ps, ss = [], [], []
                for f_src, f_tgt in zip(testset.modality(source), testset.modality(target)):
                    latent = encode_shared(model, f_src, source, target, cache)
                    truth = make_pair(f_tgt, s).sr_target
                    pred = decode_grid(model, latent, truth.shape, altitude=f_tgt.altitude,
                                       component=component, timestamp_id=f_tgt.timestamp_id)
                    p, q = _score(truth.values, pred.values)
                    ps.append(p)
                    ss.append(q)
                    crs.append(compression_ratio("grid", f_src.values, latent.values))
                h_in, h_out = f_src.altitude, f_tgt.altitude
                records.append(aggregate(VARIANT_LABELS[v], f"d={model.config.d}", h_in, h_out, component,
                                         crs, ps, ss, scale=s))
                log.info("%s s=%g %d->%d psnr %.3f", v, s, source, target, records[-1].psnr)
    return records


def run_compression_study(plan: ExperimentPlan, models: Mapping[str, ModelBundle] | None,
                          testset: ModalityPairBatch, *, latent_cache: dict | None = None) -> list[MetricRecord]:
    """Baseline rows (PPM over Q, bicubic over d) and neural rows at s=1, per direction."""
    if plan.study != "compression":
        raise PlanError(f"run_compression_study needs a compression plan, got {plan.study}")
    testset = _physical(testset)
    bundles = resolve_models(plan, models) if plan.variants else {}
    component = _component(testset)
    cache = {} if latent_cache is None else latent_cache
    records = []
    for source, target in plan.directions:
        pairs = list(zip(testset.modality(source), testset.modality(target)))
        h_in, h_out = pairs[0][0].altitude, pairs[0][1].altitude
        for method in plan.baseline_methods():
            crs, ps, ss = [], [], []
            for f_src, f_tgt in pairs:
                rec, cr = baseline_pipeline(f_src.values, method, h_in, h_out, plan.alpha)
                p, q = _score(f_tgt.values, rec)
                crs.append(cr)
                ps.append(p)
                ss.append(q)
            records.append(aggregate(method.name, method.parameter, h_in, h_out, component, crs, ps, ss))
        for v in plan.variants:
            model = bundles[v]
            crs, ps, ss = [], [], []
            for f_src, f_tgt in pairs:
                latent = encode_shared(model, f_src, source, target, cache)
                pred = decode_grid(model, latent, f_tgt.shape, altitude=h_out, component=component,
                                   timestamp_id=f_tgt.timestamp_id)
                p, q = _score(f_tgt.values, pred.values)
                crs.append(compression_ratio("grid", f_src.values, latent.values))
                ps.append(p)
                ss.append(q)
            records.append(aggregate(VARIANT_LABELS[v], f"d={model.config.d}", h_in, h_out, component,
                                     crs, ps, ss))
    return records


# --------------------------------------------------------------------- reporting

def _fmt_h(h: float) -> str:
    return f"{h:g}".replace(".", "p")


def _plot_scales(ax, rows: list[MetricRecord], metric: str) -> None:
    for method in dict.fromkeys(r.method for r in rows):
        pts = sorted((r.scale, getattr(r, metric)) for r in rows if r.method == method)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax.set_xlabel("scale s")


def _plot_bars(ax, rows: list[MetricRecord], metric: str) -> None:
    labels = [f"{r.method}\n{r.d_or_Q}" for r in rows]
    ax.bar(np.arange(len(rows)), [getattr(r, metric) for r in rows])
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(labels, fontsize=7)


def emit_report(tables: Mapping[str, Sequence[MetricRecord]], out_dir) -> list[Path]:
    """Write ``<name>.csv``, ``<name>.json`` and PNG plots for every table.

    Tables spanning several scales get one line plot per metric per direction
    (metric against scale, one line per method); single-scale tables get one
    bar chart per metric per direction.  Nothing is written if any table is empty.
    """
    if not tables:
        raise PlanError("no tables to report")
    empty = [name for name, rows in tables.items() if not rows]
    if empty:
        raise PlanError(f"empty tables: {empty}")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def put(path: Path, text: str) -> None:
        path.write_text(text)
        written.append(path)

    try:
        for name, rows in tables.items():
            rows = list(rows)
            put(out / f"{name}.csv", records_to_csv(rows))
            put(out / f"{name}.json", records_to_json(rows))
            multi_scale = len({r.scale for r in rows}) > 1
            directions = list(dict.fromkeys((r.h_in, r.h_out) for r in rows))
            for metric in ("psnr", "ssim"):
                for h_in, h_out in directions:
                    sel = [r for r in rows if (r.h_in, r.h_out) == (h_in, h_out)]
                    fig, ax = plt.subplots(figsize=(6, 4))
                    (_plot_scales if multi_scale else _plot_bars)(ax, sel, metric)
                    ax.set_ylabel(metric.upper())
                    ax.set_title(f"{name}: {h_in:g} m -> {h_out:g} m")
                    if multi_scale:
                        ax.legend(fontsize=8)
                    fig.tight_layout()
                    kind = "vs_scale" if multi_scale else "bars"
                    path = out / f"{name}_{metric}_{kind}_{_fmt_h(h_in)}to{_fmt_h(h_out)}.png"
                    # drop the version stamp so reruns give identical bytes
                    fig.savefig(path, dpi=80, metadata={"Software": None})
                    plt.close(fig)
                    written.append(path)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return written


__all__ = ["ALL_DIRECTIONS", "COLUMNS", "DEFAULT_SCALES", "ExperimentPlan", "SR_DIRECTIONS", "VARIANT_LABELS",
           "emit_report", "encode_shared", "resolve_models", "run_compression_study", "run_sr_study"]
