"""Joint dimensionality reduction and continuous super-resolution for multi-altitude wind fields."""

from .datahub import (DatasetSplit, FieldPair, FieldStack, ModalityPairBatch, NormStats, SynthSpec, WindField,
                      denormalize, ingest_wtk, load_batch, load_stack, make_pair, normalize, save_batch,
                      save_stack, split, synth_stack)
from .errors import WindSRError
from .evalharness import ExperimentPlan, emit_report, run_compression_study, run_sr_study
from .metrics import MetricRecord, aggregate, compression_ratio, psnr, ssim
from .neuralcore import (ModelBundle, ModelConfig, build_model, decode_grid, load_checkpoint, predict,
                         predict_grid, reduce, save_checkpoint)
from .training import TrainConfig, Trainer, grad_check, train

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit", "ExperimentPlan", "FieldPair", "FieldStack", "MetricRecord", "ModalityPairBatch",
    "ModelBundle", "ModelConfig", "NormStats", "SynthSpec", "TrainConfig", "Trainer", "WindField",
    "WindSRError", "aggregate", "build_model", "compression_ratio", "decode_grid", "denormalize",
    "emit_report", "grad_check", "ingest_wtk", "load_batch", "load_checkpoint", "load_stack", "make_pair",
    "normalize", "predict", "predict_grid", "psnr", "reduce", "run_compression_study", "run_sr_study",
    "save_batch", "save_checkpoint", "save_stack", "split", "ssim", "synth_stack", "train",
]
