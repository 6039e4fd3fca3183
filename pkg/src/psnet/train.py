"""Training loop, count metrics and column-similarity diagnostics."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import AugmentConfig, augment, decode_image
from .density import (
    DEFAULT_BETA,
    DEFAULT_K,
    DEFAULT_SIGMA,
    PointSet,
    adaptive_kernel_density,
    fixed_kernel_density,
    sum_pool_downsample,
    write_dmap,
    write_pgm_visual,
)
from .losses import attention_vector, cosine_similarity, euclidean_loss, total_loss, variance_loss
from .model import ModelConfig, PsnetModel, build_model, load_checkpoint, psnet_forward, save_checkpoint
from .optim import Adam, make_rng
from .tensor import Tensor

log = logging.getLogger(__name__)

STRIDE = 8


class TrainingError(RuntimeError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    lam: float = 1.0
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0
    gt_mode: str = "adaptive"
    sigma: float = DEFAULT_SIGMA
    k: int = DEFAULT_K
    beta: float = DEFAULT_BETA

    def validate(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("batch_size and epochs must be positive")
        if self.gt_mode not in ("fixed", "adaptive"):
            raise ValueError(f"gt_mode must be 'fixed' or 'adaptive', got {self.gt_mode!r}")
        self.model.validate()
        self.augment.validate()

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        model = d.pop("model", {}) or {}
        aug = d.pop("augment", {}) or {}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(model=ModelConfig(**model), augment=AugmentConfig(**aug), **d)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["model"] = self.model.to_dict()
        return d


def density_target(points: PointSet, run: RunConfig):
    """Full-resolution density map, sum-pooled to the prediction grid."""
    if run.gt_mode == "fixed":
        dmap = fixed_kernel_density(points, run.sigma)
    else:
        dmap = adaptive_kernel_density(points, run.k, run.beta, run.sigma)
    return sum_pool_downsample(dmap, STRIDE)


def _batch_loss(model, samples, run, dtype):
    preds, gts, records = [], [], []
    for s in samples:
        gt = density_target(s.points, run)
        pred, rec = psnet_forward(model, Tensor(s.image.astype(dtype)))
        preds.append(pred)
        gts.append(Tensor(gt[None].astype(dtype)))
        records.append(rec)
    l_e = euclidean_loss(preds, gts)
    l_m = variance_loss(records)
    return l_e, l_m, total_loss(l_e, l_m, run.lam)


def train(run: RunConfig, manifest, out_dir, model=None, log_every=1):
    """Optimize a PSNet on ``manifest``; writes ``model.ckpt`` each epoch and a JSONL log."""
    run.validate()
    if len(manifest) == 0:
        raise ValueError("training manifest is empty")
    os.makedirs(out_dir, exist_ok=True)
    model = model if model is not None else build_model(run.model, make_rng(run.seed, 0))
    opt = Adam(model.parameters(), lr=run.lr)
    cache = [manifest.sample(i) for i in range(len(manifest))]
    ckpt = os.path.join(out_dir, "model.ckpt")
    log_path = os.path.join(out_dir, "train_log.jsonl")
    step = 0
    with open(log_path, "w", encoding="utf-8") as logf:
        for epoch in range(run.epochs):
            order = make_rng(run.seed, 1, epoch).permutation(len(cache))
            for start in range(0, len(order), run.batch_size):
                t0 = time.perf_counter()
                batch = [
                    augment(cache[i], run.augment, make_rng(run.seed, 2, epoch, int(i)))
                    for i in order[start : start + run.batch_size]
                ]
                opt.zero_grad()
                l_e, l_m, loss = _batch_loss(model, batch, run, np.float32)
                if not np.isfinite(loss.data):
                    raise TrainingError(f"non-finite loss at step {step} (epoch {epoch}): L_E={l_e.item()}, L_M={l_m.item()}")
                T.backward(loss)
                opt.step()
                if step % log_every == 0:
                    rec = {
                        "step": step,
                        "l_e": l_e.item(),
                        "l_m": l_m.item(),
                        "l": loss.item(),
                        "wall_ms": round(1000 * (time.perf_counter() - t0), 3),
                    }
                    logf.write(json.dumps(rec) + "\n")
                step += 1
            logf.flush()
            save_checkpoint(model, ckpt)
            log.info("epoch %d done, step %d, loss %.5f", epoch, step, loss.item())
    return model, ckpt


# ------------------------------------------------------------------ evaluation


@dataclass
class EvalReport:
    mae: float
    rmse: float
    mean_variance_loss: float
    per_image: list  # (predicted_count, gt_count)
    pairwise_similarity: list  # per PSM, S x S nested lists

    def to_dict(self):
        return asdict(self)


def count_metrics(pred, gt):
    """Mean absolute and root mean squared count error."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.mean(np.abs(d))), float(np.sqrt(np.mean(d * d)))


def pad_to_stride(image, stride=STRIDE):
    _, h, w = image.shape
    ph, pw = (-h) % stride, (-w) % stride
    if not ph and not pw:
        return image
    return np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="reflect")


def _as_model(checkpoint):
    return checkpoint if isinstance(checkpoint, PsnetModel) else load_checkpoint(checkpoint)


def infer(model, image):
    """Predicted density (H'/8 x W'/8) and per-PSM branch outputs, without recording gradients."""
    with T.no_grad():
        pred, rec = psnet_forward(model, Tensor(pad_to_stride(image).astype(np.float32)))
    return pred.data[0], rec


def evaluate(checkpoint, manifest):
    """Whole-image counting metrics plus column-similarity diagnostics."""
    model = _as_model(checkpoint)
    per_image, lms = [], []
    k_count = model.config.psm_count
    s_count = len(model.config.branch_kernels)
    sims = np.zeros((k_count, s_count, s_count))
    for i in range(len(manifest)):
        path = manifest.image_path(i)
        try:
            image = decode_image(path)
        except (OSError, ValueError) as e:
            raise type(e)(f"image {i} ({path}): {e}") from e
        dmap, rec = infer(model, image)
        per_image.append((float(dmap.astype(np.float64).sum()), float(len(manifest.entries[i].points))))
        vecs = [[attention_vector(b).data.astype(np.float64) for b in group] for group in rec]
        lms.append(variance_loss([[[Tensor(v) for v in group] for group in vecs]]).item())
        for k, group in enumerate(vecs):
            for a in range(s_count):
                for b in range(s_count):
                    sims[k, a, b] += 1.0 if a == b else cosine_similarity(group[a], group[b])
    n = max(len(per_image), 1)
    pred = [p for p, _ in per_image]
    gt = [g for _, g in per_image]
    mae, rmse = count_metrics(pred, gt) if per_image else (0.0, 0.0)
    return EvalReport(
        mae=mae,
        rmse=rmse,
        mean_variance_loss=float(np.mean(lms)) if lms else 0.0,
        per_image=per_image,
        pairwise_similarity=(sims / n).tolist(),
    )


def similarity_report(checkpoint, manifest):
    """Per-PSM S x S mean cosine similarity between branch attention vectors."""
    return [np.array(m) for m in evaluate(checkpoint, manifest).pairwise_similarity]


def scale_group_report(report, n_groups):
    """Sort images by true count, split into contiguous groups, average each group.

    Groups have ``len // n_groups`` images; the remainder joins the last group.
    Returns a list of ``(mean_predicted, mean_gt)``.
    """
    pairs = list(report.per_image if isinstance(report, EvalReport) else report)
    if not pairs:
        raise ValueError("empty report")
    if not 1 <= n_groups <= len(pairs):
        raise ValueError(f"n_groups={n_groups} must be between 1 and {len(pairs)}")
    pairs.sort(key=lambda p: p[1])
    size = len(pairs) // n_groups
    out = []
    for g in range(n_groups):
        chunk = pairs[g * size : (g + 1) * size] if g < n_groups - 1 else pairs[g * size :]
        arr = np.asarray(chunk, dtype=np.float64)
        out.append((float(arr[:, 0].mean()), float(arr[:, 1].mean())))
    return out


def predict(checkpoint, image_path, out_path):
    """Write the density map (DMAP plus a PGM preview) and return the count."""
    model = _as_model(checkpoint)
    dmap, _ = infer(model, decode_image(image_path))
    dmap = dmap.astype(np.float32)
    write_dmap(out_path, dmap)
    write_pgm_visual(os.path.splitext(out_path)[0] + ".pgm", dmap)
    return float(dmap.astype(np.float64).sum())
