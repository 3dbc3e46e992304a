"""AdamW, cosine schedule, early-stopped training, evaluation and the ablation table."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .config import RunConfig, load_config, save_config
from .data.dataset import Dataset
from .data.mask_io import write_pgm
from .data.metrics import dice_score, miou
from .data.tensor_io import load_tensors, save_tensors
from .errors import ConfigurationError, FormatError, TrainingError
from .loss import LossWeights, training_loss
from .model import ModelParams, count_macs, model_forward, parameter_breakdown, predict_masks
from .numerics import Tape, backward, zero_grad

CHECKPOINT_NAME = "checkpoint.seut"
CONFIG_NAME = "config.txt"


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(named_params, state: OptimState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One AdamW update in place on ``(name, Var)`` pairs using their ``.grad``.

    Decay shrinks the weights by ``lr * weight_decay`` before, and independently
    of, the bias-corrected adaptive step.
    """
    named_params = list(named_params)
    for name, p in named_params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    for name, p in named_params:
        g = np.zeros(p.shape) if p.grad is None else p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p.value = p.value - lr * weight_decay * p.value
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def cosine_lr(epoch: int, lr0: float, lr_min: float, t_max: int) -> float:
    if epoch < 0:
        raise ConfigurationError(f"epoch must be >= 0, got {epoch}")
    e = min(epoch, t_max)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * e / t_max))


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    mean_dice: float
    mean_miou: float
    per_sample: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["index", "caption", "dice", "miou"], lineterminator="\n")
        w.writeheader()
        w.writerows(self.per_sample)
        return buf.getvalue()


def prompts_for(token_ids: np.ndarray, text_mode: str, inference: bool) -> np.ndarray:
    """Token ids as the model sees them; disabled prompts become all padding."""
    if text_mode == "off_training" or (inference and text_mode == "off_inference"):
        return np.zeros_like(token_ids)
    return token_ids


def predict(params: ModelParams, images: np.ndarray, token_ids: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Foreground masks ``[n, H, W]`` by channel argmax."""
    out = []
    for i in range(0, len(images), batch_size):
        probs = model_forward(images[i:i + batch_size], token_ids[i:i + batch_size], params, training=False)
        out.append(predict_masks(probs))
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[2:], dtype=np.uint8)


def score_masks(pred: np.ndarray, gt_onehot: np.ndarray, captions=None) -> EvalResult:
    rows = []
    for i, (p, g) in enumerate(zip(pred, gt_onehot)):
        rows.append({"index": i, "caption": captions[i] if captions else "",
                     "dice": dice_score(p, g[1]), "miou": miou(p, g[1])})
    if not rows:
        return EvalResult(float("nan"), float("nan"), rows)
    return EvalResult(float(np.mean([r["dice"] for r in rows])), float(np.mean([r["miou"] for r in rows])), rows)


def evaluate(params: ModelParams, data: Dataset, text_mode: str = "on", dump_dir=None) -> EvalResult:
    ids = prompts_for(data.token_ids, text_mode, inference=True)
    pred = predict(params, data.images, ids)
    result = score_masks(pred, data.masks, data.captions)
    if dump_dir is not None:
        dump = Path(dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(pred):
            write_pgm(dump / f"{i:04d}.pgm", m)
        (dump / "metrics.csv").write_text(result.to_csv(), encoding="utf-8")
    return result


# ---------------------------------------------------------------- training


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    dice_term: float
    spectral_term: float
    entropy_term: float
    total: float
    val_dice: float
    val_miou: float
    seconds: float


@dataclass
class RunReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_dice: float = -math.inf
    stopped_early: bool = False
    wall_time: float = 0.0

    @property
    def loss_trace(self) -> list[float]:
        return [e.total for e in self.epochs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(EpochRecord.__dataclass_fields__)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for e in self.epochs:
            w.writerow([repr(getattr(e, n)) if isinstance(getattr(e, n), float) else getattr(e, n) for n in names])
        return buf.getvalue()


def should_stop(epoch: int, bad_epochs: int, patience: int, min_epochs: int) -> bool:
    """Called after a non-improving epoch (1-based ``epoch``)."""
    return bad_epochs >= patience and epoch >= min_epochs


def save_checkpoint(params: ModelParams, cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tensors(out / CHECKPOINT_NAME, params.state_dict())
    save_config(cfg, out / CONFIG_NAME)
    return out / CHECKPOINT_NAME


def load_checkpoint(path) -> tuple[ModelParams, RunConfig]:
    """Load ``checkpoint.seut`` and the ``config.txt`` written beside it."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint {path} does not exist")
    cfg_path = path.parent / CONFIG_NAME
    if not cfg_path.is_file():
        raise FormatError(f"no {CONFIG_NAME} next to checkpoint {path}")
    cfg = load_config(cfg_path)
    params = ModelParams.init(cfg.model)
    state = load_tensors(path)
    try:
        params.load_state_dict(state)
    except ValueError as exc:
        raise FormatError(f"checkpoint {path} does not match its config: {exc}") from None
    return params, cfg


def train(cfg: RunConfig, data: Dataset, out_dir=None,
          log: Callable[[str], None] | None = None) -> tuple[RunReport, ModelParams]:
    """Train on ``data.split('train')`` with early stopping on validation Dice.

    Returns the report and the parameters restored to the best epoch. With
    ``out_dir`` the checkpoint, config and per-epoch CSV are written there.
    """
    tc = cfg.train
    if data.images.shape[-1] != cfg.model.image_size:
        raise ConfigurationError(f"dataset size {data.images.shape[-1]} != model image_size {cfg.model.image_size}")
    train_set, val_set = data.split("train"), data.split("val")
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigurationError("training needs nonempty train and val splits")
    weights = LossWeights(tc.lambda_f, tc.lambda_e)
    params = ModelParams.init(cfg.model)
    named = list(params.named_parameters())
    state = OptimState()
    report = RunReport()
    best_state = params.state_dict()
    bad = 0
    train_ids = prompts_for(train_set.token_ids, tc.text_mode, inference=False)
    start = time.perf_counter()
    with threadpool_limits(limits=1):
        for epoch in range(1, tc.max_epochs + 1):
            t0 = time.perf_counter()
            lr = cosine_lr(epoch - 1, tc.lr0, tc.lr_min, tc.t_max)
            order = np.random.default_rng([tc.seed, epoch]).permutation(len(train_set))
            sums = np.zeros(4)
            for b, i in enumerate(range(0, len(order), tc.batch_size)):
                idx = order[i:i + tc.batch_size]
                zero_grad(params.parameters())
                with Tape():
                    probs = model_forward(train_set.images[idx], train_ids[idx], params, training=True)
                    losses = training_loss(probs, train_set.masks[idx], tc.loss, weights)
                    if not np.isfinite(losses.total.value):
                        raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
                    backward(losses.total)
                adamw_step(named, state, lr, weight_decay=tc.weight_decay)
                f = losses.as_floats()
                sums += len(idx) * np.array([f["dice_term"], f["spectral_term"], f["entropy_term"], f["total"]])
            sums /= len(order)
            val = evaluate(params, val_set, tc.text_mode)
            rec = EpochRecord(epoch, lr, *map(float, sums), val.mean_dice, val.mean_miou,
                              time.perf_counter() - t0)
            report.epochs.append(rec)
            if log:
                log(f"epoch {epoch:3d} lr {lr:.2e} loss {rec.total:.4f} val dice {rec.val_dice:.4f} "
                    f"miou {rec.val_miou:.4f} ({rec.seconds:.1f}s)")
            if rec.val_dice > report.best_val_dice:
                report.best_val_dice, report.best_epoch = rec.val_dice, epoch
                best_state = params.state_dict()
                bad = 0
            else:
                bad += 1
                if should_stop(epoch, bad, tc.patience, tc.min_epochs):
                    report.stopped_early = epoch < tc.max_epochs
                    break
    report.wall_time = time.perf_counter() - start
    params.load_state_dict(best_state)
    if out_dir is not None:
        save_checkpoint(params, cfg, out_dir)
        (Path(out_dir) / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    return report, params


# ---------------------------------------------------------------- ablation

ABLATIONS: dict[str, dict] = {
    "Complete Model": {},
    "Dice loss": {"loss": "dice"},
    "BCE loss": {"loss": "bce"},
    "Inference w/o Text Prompts": {"text_mode": "off_inference"},
    "Training w/o MoDAB": {"modab": False},
    "SSMix with Linear layer": {"arch": "ssmix_linear"},
    "Cross-Attention with Addition": {"arch": "crossattn_add"},
}
REFERENCE_DICE = {
    "Complete Model": 93.86, "Dice loss": 93.44, "BCE loss": 92.03, "Inference w/o Text Prompts": 87.28,
    "Training w/o MoDAB": 85.15, "SSMix with Linear layer": 91.72, "Cross-Attention with Addition": 92.11,
}


@dataclass
class AblationRow:
    condition: str
    overrides: dict
    dice: float
    miou: float
    best_epoch: int
    epochs: int
    seconds: float
    error: str = ""


def _condition_config(base: RunConfig, overrides: dict) -> RunConfig:
    return base.with_overrides(**overrides)


def run_ablation(base: RunConfig, data: Dataset, out_dir=None, conditions=None, split: str = "test",
                 log: Callable[[str], None] | None = None) -> list[AblationRow]:
    """Train and score each condition on the same seed and data.

    "Inference w/o Text Prompts" reuses the complete model's weights and only
    blanks the prompts at evaluation, so it adds no training run.
    """
    names = list(conditions or ABLATIONS)
    unknown = set(names) - ABLATIONS.keys()
    if unknown:
        raise ConfigurationError(f"unknown ablation conditions {sorted(unknown)}")
    if "Inference w/o Text Prompts" in names and "Complete Model" not in names:
        names.insert(0, "Complete Model")
    trained: dict[str, tuple[RunReport, ModelParams]] = {}
    rows = []
    eval_set = data.split(split)
    for name in sorted(names, key=list(ABLATIONS).index):
        ov = ABLATIONS[name]
        cfg = _condition_config(base, ov)
        t0 = time.perf_counter()
        try:
            if name == "Inference w/o Text Prompts":
                report, params = trained["Complete Model"]
            else:
                sub = None if out_dir is None else Path(out_dir) / name.lower().replace(" ", "_").replace("/", "")
                report, params = train(cfg, data, sub, log)
                trained[name] = (report, params)
            res = evaluate(params, eval_set, cfg.train.text_mode)
            rows.append(AblationRow(name, ov, res.mean_dice, res.mean_miou, report.best_epoch,
                                    len(report.epochs), time.perf_counter() - t0))
        except Exception as exc:  # noqa: BLE001 - a failed condition is reported in its row
            rows.append(AblationRow(name, ov, float("nan"), float("nan"), 0, 0, time.perf_counter() - t0,
                                    f"{type(exc).__name__}: {exc}"))
        if log:
            r = rows[-1]
            log(f"[ablation] {name}: dice {100 * r.dice:.2f} miou {100 * r.miou:.2f} {r.error}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.md").write_text(ablation_markdown(rows), encoding="utf-8")
        (out / "ablation.csv").write_text(ablation_csv(rows), encoding="utf-8")
    return rows


def _fmt(x: float) -> str:
    return "failed" if math.isnan(x) else f"{100 * x:.2f}"


def ablation_markdown(rows: list[AblationRow]) -> str:
    lines = ["| Condition | Dice (%) | mIoU (%) | Reference Dice (%) |", "|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r.condition} | {_fmt(r.dice)} | {_fmt(r.miou)} | {REFERENCE_DICE[r.condition]:.2f} |")
    return "\n".join(lines) + "\n"


def ablation_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["condition", "overrides", "dice", "miou", "best_epoch", "epochs", "seconds", "error"])
    for r in rows:
        ov = ";".join(f"{k}={v}" for k, v in r.overrides.items())
        w.writerow([r.condition, ov, repr(r.dice), repr(r.miou), r.best_epoch, r.epochs, f"{r.seconds:.1f}",
                    r.error])
    return buf.getvalue()


# ---------------------------------------------------------------- summary


def model_summary(cfg: RunConfig | None = None) -> dict:
    cfg = cfg or RunConfig()
    params = ModelParams.init(cfg.model)
    return {"parameters": parameter_breakdown(params), "macs": count_macs(cfg.model)}


def format_summary(summary: dict) -> str:
    lines = ["module,parameters"]
    lines += [f"{k},{v}" for k, v in summary["parameters"].items()]
    lines += ["", "module,macs_per_sample"]
    lines += [f"{k},{v}" for k, v in summary["macs"].items()]
    return "\n".join(lines) + "\n"


__all__ = [
    "ABLATIONS", "AblationRow", "EvalResult", "OptimState", "RunReport", "ablation_csv", "ablation_markdown",
    "adamw_step", "cosine_lr", "evaluate", "format_summary", "load_checkpoint", "model_summary", "predict",
    "run_ablation", "save_checkpoint", "score_masks", "should_stop", "train",
]
