"""Orchestrates the decompose-in-training procedure.

Timeline for one run: train the original model up to `decompose_at`
epochs, swap every eligible conv for its Tucker chain, keep training the
smaller model, optionally merge the chains back at `reconstruct_at`, and
fine-tune to the end.  Both surgery events fire after the epoch's
training pass and before its evaluation, so the metrics row of the event
epoch already reflects the new architecture.

Per-epoch wall time covers the training pass only; evaluation and the
surgery events are timed separately so the speedup measurement isolates
training cost.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tucker
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .data import Dataset, MetricsRow, append_metrics, augment, load_cifar10, load_mnist_idx
from .errors import ConfigError
from .nn import MODEL_BUILDERS, SGD, Model, chain_layers, evaluate, lr_at, predict_logits

log = logging.getLogger("tuckertrain")

CHECKPOINT_NAME = "model_final.ckpt"
METRICS_NAME = "metrics.csv"
REPORT_NAME = "report.json"
FIGURE_NAME = "accuracy_timeline.svg"


@dataclass
class LayerDecomposition:
    layer: str
    k1: int | None
    k2: int | None
    params_before: int
    params_after: int
    m: float | None  # parameter compression ratio
    e: float | None  # FLOP speedup ratio at this layer's spatial sizes
    skipped: str | None = None  # reason, when the layer was left alone


@dataclass
class ReconstructionCheck:
    accuracy_chain: float
    accuracy_merged: float
    argmax_identical: bool
    logit_rel_diff: float
    samples: int


@dataclass
class RunReport:
    model: str
    dataset: str
    seed: int
    epochs: int
    rows: list[MetricsRow] = field(default_factory=list)
    layer_reports: list[LayerDecomposition] = field(default_factory=list)
    params_initial: int = 0
    params_after_decompose: int | None = None
    params_final: int = 0
    phase_train_seconds: dict = field(default_factory=dict)
    decompose_seconds: float = 0.0
    reconstruct_seconds: float = 0.0
    eval_seconds: float = 0.0
    reconstruction: ReconstructionCheck | None = None
    final_accuracy: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def decompose_convs(model: Model, min_channels: int = 16, min_compression: float = 1.05
                    ) -> list[LayerDecomposition]:
    """Replace every eligible conv with its Tucker chain, in place.

    Rank selection runs on the current weights.  Layers whose EVBMF rank
    is zero or whose chain would not be smaller are skipped, never
    clamped: a zero rank means the factorization sees only noise.
    """
    reports = []
    shapes = dict(zip((l.name for l in model.layers), model.shape_trace()))
    for conv in list(model.conv_layers()):
        spec = conv.spec
        out_shape = shapes[conv.name]
        in_hw = _layer_input_hw(model, conv.name)
        entry = LayerDecomposition(
            layer=conv.name, k1=None, k2=None,
            params_before=conv.param_count(), params_after=conv.param_count(),
            m=None, e=None,
        )
        if not tucker.eligible(spec, min_channels=min_channels):
            entry.skipped = "ineligible"
            reports.append(entry)
            continue
        ranks = tucker.select_ranks(conv.params["weight"], min_compression=min_compression)
        if ranks is None:
            entry.skipped = "no-compression"
            reports.append(entry)
            continue
        est = tucker.estimate_compression(spec, ranks, in_hw=in_hw, out_hw=out_shape[1:])
        factors = tucker.decompose_conv(spec, conv.params["weight"],
                                        conv.params.get("bias"), ranks)
        chain = chain_layers(conv.name, spec, factors)
        model.replace(conv.name, chain)
        entry.k1, entry.k2 = ranks.k1, ranks.k2
        entry.params_after = sum(l.param_count() for l in chain)
        entry.m, entry.e = est.m, est.e
        reports.append(entry)
    return reports


def _layer_input_hw(model: Model, name: str) -> tuple[int, int]:
    idx = model.layer_index(name)
    shape = model.input_shape if idx == 0 else model.shape_trace()[idx - 1]
    return shape[1:]


def merge_all_chains(model: Model) -> list[str]:
    merged = []
    for chain in model.chains():
        merged.append(model.merge_chain(chain))
    return merged


def estimate_convs(model: Model, min_channels: int = 16, min_compression: float = 1.05
                   ) -> list[LayerDecomposition]:
    """Dry-run rank selection: the per-layer compression table without
    touching the model."""
    reports = []
    shapes = dict(zip((l.name for l in model.layers), model.shape_trace()))
    for conv in model.conv_layers():
        entry = LayerDecomposition(
            layer=conv.name, k1=None, k2=None,
            params_before=conv.param_count(), params_after=conv.param_count(),
            m=None, e=None,
        )
        if not tucker.eligible(conv.spec, min_channels=min_channels):
            entry.skipped = "ineligible"
        else:
            ranks = tucker.select_ranks(conv.params["weight"], min_compression=min_compression)
            if ranks is None:
                entry.skipped = "no-compression"
            else:
                est = tucker.estimate_compression(
                    conv.spec, ranks,
                    in_hw=_layer_input_hw(model, conv.name),
                    out_hw=shapes[conv.name][1:],
                )
                entry.k1, entry.k2 = ranks.k1, ranks.k2
                entry.m, entry.e = est.m, est.e
                chain_params = (conv.spec.c_in * ranks.k1
                                + conv.spec.kh * conv.spec.kw * ranks.k1 * ranks.k2
                                + conv.spec.c_out * ranks.k2)
                if conv.spec.has_bias:
                    chain_params += conv.spec.c_out
                entry.params_after = chain_params
        reports.append(entry)
    return reports


def _load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "cifar10":
        needed = [os.path.join(cfg.data_dir, f"data_batch_{i}.bin") for i in range(1, 6)]
        needed.append(os.path.join(cfg.data_dir, "test_batch.bin"))
    else:
        needed = [
            os.path.join(cfg.data_dir, "train-images-idx3-ubyte"),
            os.path.join(cfg.data_dir, "train-labels-idx1-ubyte"),
            os.path.join(cfg.data_dir, "t10k-images-idx3-ubyte"),
            os.path.join(cfg.data_dir, "t10k-labels-idx1-ubyte"),
        ]
    missing = [p for p in needed if not os.path.exists(p)]
    if missing:
        raise ConfigError(f"dataset files missing: {', '.join(missing)}")
    if cfg.dataset == "cifar10":
        train = load_cifar10(cfg.data_dir, subset=cfg.subset, split="train")
        test = load_cifar10(cfg.data_dir, subset=cfg.eval_subset, split="test")
    else:
        train = load_mnist_idx(needed[0], needed[1], subset=cfg.subset, split="train")
        test = load_mnist_idx(needed[2], needed[3], subset=cfg.eval_subset, split="test")
    return train, test


def build_model(cfg: ExperimentConfig, rng: np.random.Generator) -> Model:
    builder = MODEL_BUILDERS[cfg.model]
    if cfg.dataset == "cifar10":
        return builder(rng, in_channels=3, input_hw=(32, 32))
    return builder(rng, in_channels=1, input_hw=(28, 28))


def _train_epoch(model: Model, opt: SGD, train: Dataset, rng, batch_size: int, lr: float) -> float:
    order = rng.permutation(train.n)
    total = 0.0
    batch_buf = np.empty((batch_size,) + train.images.shape[1:], dtype=np.float32)
    for start in range(0, train.n, batch_size):
        idx = order[start : start + batch_size]
        x = batch_buf[: len(idx)]
        for i, j in enumerate(idx):
            x[i] = augment(train.images[j], rng)
        loss = model.train_step_grads(x, train.labels[idx])
        opt.step(model, lr)
        total += loss * len(idx)
    return total / train.n


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    cfg.validate()
    train, test = _load_datasets(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, METRICS_NAME)
    if os.path.exists(csv_path):
        os.remove(csv_path)

    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, rng)
    model.set_threads(cfg.threads)
    opt = SGD(momentum=cfg.momentum, weight_decay=cfg.weight_decay)

    report = RunReport(model=cfg.model, dataset=cfg.dataset, seed=cfg.seed, epochs=cfg.epochs)
    report.params_initial = model.parameter_count()
    phase = "original"
    phase_seconds: dict[str, float] = {}
    cum_train = 0.0

    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(epoch - 1, cfg.lr_milestones)
        t0 = time.perf_counter()
        train_loss = _train_epoch(model, opt, train, rng, cfg.batch_size, lr)
        epoch_seconds = time.perf_counter() - t0
        cum_train += epoch_seconds
        phase_seconds[phase] = phase_seconds.get(phase, 0.0) + epoch_seconds

        if cfg.decompose_at is not None and epoch == cfg.decompose_at:
            t0 = time.perf_counter()
            report.layer_reports = decompose_convs(
                model, min_channels=cfg.min_channels, min_compression=cfg.min_compression
            )
            report.decompose_seconds = time.perf_counter() - t0
            if any(r.skipped is None for r in report.layer_reports):
                phase = "decomposed"
                report.params_after_decompose = model.parameter_count()
                log.info("epoch %d: decomposed, %d -> %d params", epoch,
                         report.params_initial, report.params_after_decompose)
            else:
                log.warning("epoch %d: no layer was eligible for decomposition; "
                            "model unchanged", epoch)

        if cfg.reconstruct_at is not None and epoch == cfg.reconstruct_at:
            chains = model.chains()
            if not chains:
                log.warning("epoch %d: nothing to reconstruct", epoch)
            else:
                t0 = time.perf_counter()
                logits_chain = predict_logits(model, test.images)
                merge_all_chains(model)
                logits_merged = predict_logits(model, test.images)
                report.reconstruct_seconds = time.perf_counter() - t0
                diff = np.linalg.norm(logits_chain - logits_merged)
                rel = float(diff / max(np.linalg.norm(logits_chain), 1e-30))
                acc_chain = float(np.mean(logits_chain.argmax(1) == test.labels))
                acc_merged = float(np.mean(logits_merged.argmax(1) == test.labels))
                report.reconstruction = ReconstructionCheck(
                    accuracy_chain=acc_chain,
                    accuracy_merged=acc_merged,
                    argmax_identical=bool(
                        np.array_equal(logits_chain.argmax(1), logits_merged.argmax(1))
                    ),
                    logit_rel_diff=rel,
                    samples=test.n,
                )
                phase = "reconstructed"

        t0 = time.perf_counter()
        test_acc = evaluate(model, test.images, test.labels)
        report.eval_seconds += time.perf_counter() - t0

        row = MetricsRow(
            epoch=epoch,
            wall_time_s=cum_train,
            train_loss=train_loss,
            test_acc=test_acc,
            param_count=model.parameter_count(),
            flops_est=model.flops_estimate(),
            lr=lr,
            phase=phase,
        )
        append_metrics(csv_path, row)
        report.rows.append(row)
        log.info("epoch %2d  loss %.4f  acc %.4f  params %d  phase %s  (%.1fs)",
                 epoch, train_loss, test_acc, row.param_count, phase, epoch_seconds)

    report.phase_train_seconds = phase_seconds
    report.params_final = model.parameter_count()
    report.final_accuracy = report.rows[-1].test_acc
    model.set_threads(1)  # release the worker pool before pickling state
    save_checkpoint(os.path.join(cfg.output_dir, CHECKPOINT_NAME), model,
                    epoch=cfg.epochs, rng=rng, velocity=opt.velocity)

    from .report import render_accuracy_figure, write_report

    write_report(report, os.path.join(cfg.output_dir, REPORT_NAME))
    render_accuracy_figure([csv_path], os.path.join(cfg.output_dir, FIGURE_NAME))
    return report
