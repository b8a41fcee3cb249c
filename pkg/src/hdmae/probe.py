"""Frozen-encoder linear probe and binary classification metrics.

Features are the mean over all token outputs of the (unmasked) encoder.
The probe is plain logistic regression trained by full-batch gradient descent
from a zero init, so zero steps score everything at 0.5. AUROC uses the
Mann-Whitney pair formulation with ties counted 1/2, computed from integer
pair counts so it matches a brute-force all-pairs oracle exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .model import ModelParams, encoder_forward, pos_tables
from .patches import ImageGray, PatchConfig, patchify


@dataclass
class ProbeHead:
    weight: np.ndarray  # [enc_dim]
    bias: float

    def scores(self, features: np.ndarray) -> np.ndarray:
        z = features @ self.weight + self.bias
        return T._sigmoid_np(z)


def extract_features(params: ModelParams, img: ImageGray, cfg: PatchConfig) -> np.ndarray:
    """Mean-pooled encoder output over the full (unmasked) token set."""
    if cfg != params.cfg.patch:
        raise ContractError(f"patch config {cfg} does not match the model's {params.cfg.patch}")
    return extract_features_batch(params, [img])[0]


def extract_features_batch(params: ModelParams, images) -> np.ndarray:
    """[n_images, enc_dim] feature matrix; batched over images."""
    cfg = params.cfg
    enc_pos, _ = pos_tables(cfg)
    feats = np.empty((len(images), cfg.enc_dim), dtype=np.float32)
    chunk = 32
    for start in range(0, len(images), chunk):
        batch = images[start : start + chunk]
        patch_arr = np.stack([patchify(im, cfg.patch).data for im in batch])
        tokens = T.add(
            T.add_bias(T.matmul(T.Tensor(patch_arr), params.patch_w), params.patch_b), enc_pos
        )
        latents = encoder_forward(params, tokens)
        feats[start : start + len(batch)] = T.mean(latents, axis=1).data
    return feats


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std < 1e-8, 1.0, std)
        return cls(mean=mean, std=std)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


def train_probe(
    features: np.ndarray,
    labels: np.ndarray,
    steps: int = 500,
    lr: float = 0.5,
    record_loss: list | None = None,
) -> ProbeHead:
    """Logistic regression by full-batch gradient descent on cross-entropy.

    Deterministic: the head starts at zero and the data order never changes.
    Cross-entropy is computed stably as mean(softplus(z) - y*z).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if features.ndim != 2 or features.shape[0] != labels.size:
        raise ConfigError(f"features {features.shape} vs labels {labels.shape}")
    if np.unique(labels).size < 2:
        raise ConfigError("probe training needs both classes present")
    w = T.Tensor(np.zeros(features.shape[1]), grad_enabled=True, dtype=np.float64)
    b = T.Tensor(np.zeros(1), grad_enabled=True, dtype=np.float64)
    x = T.Tensor(features, dtype=np.float64)
    y = T.Tensor(labels, dtype=np.float64)
    for _ in range(steps):
        with T.GradTape():
            z = T.add_bias(T.matmul(x, T.reshape(w, (features.shape[1], 1))), b)
            z = T.reshape(z, (labels.size,))
            loss = T.mean(T.sub(T.softplus(z), T.mul(y, z)))
        if record_loss is not None:
            record_loss.append(loss.item())
        T.backward(loss)
        w.data -= lr * w.grad
        b.data -= lr * b.grad
    return ProbeHead(weight=w.data.copy(), bias=float(b.data[0]))


def probe_loss(head: ProbeHead, features: np.ndarray, labels: np.ndarray) -> float:
    z = np.asarray(features, dtype=np.float64) @ head.weight + head.bias
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def auroc(scores, labels) -> float:
    """P(score_pos > score_neg) with ties counted 1/2 (Mann-Whitney).

    Computed from exact integer counts of greater/tied pairs via one sort,
    so the result is bit-identical to brute-force pair enumeration.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if scores.size != labels.size:
        raise ContractError(f"{scores.size} scores vs {labels.size} labels")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUROC undefined without both classes")
    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    l_sorted = labels[order]
    gt_pairs = 0  # positive strictly above a negative
    tie_pairs = 0
    neg_below = 0
    i = 0
    n = scores.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        pos_here = int((l_sorted[i:j] == 1).sum())
        neg_here = (j - i) - pos_here
        gt_pairs += pos_here * neg_below
        tie_pairs += pos_here * neg_here
        neg_below += neg_here
        i = j
    return (gt_pairs + 0.5 * tie_pairs) / (n_pos * n_neg)


def f1_accuracy(scores, labels, threshold: float = 0.5) -> tuple[float, float]:
    """(f1, accuracy) at a hard threshold; score >= threshold predicts 1.

    With no predicted positives (or no true ones) precision/recall collapse
    and f1 is defined as 0.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    pred = scores >= threshold
    truth = labels == 1
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    tn = int((~pred & ~truth).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    acc = (tp + tn) / max(len(labels), 1)
    return f1, acc


@dataclass
class ProbeReportRow:
    split: str
    auroc: float
    f1: float
    accuracy: float
    n: int


def evaluate_probe(head: ProbeHead, features: np.ndarray, labels, split: str) -> ProbeReportRow:
    s = head.scores(np.asarray(features, dtype=np.float64))
    f1, acc = f1_accuracy(s, labels)
    return ProbeReportRow(split=split, auroc=auroc(s, labels), f1=f1, accuracy=acc, n=len(s))


def write_probe_report(rows: list[ProbeReportRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "auroc", "f1", "accuracy", "n"])
        for r in rows:
            writer.writerow([r.split, repr(r.auroc), repr(r.f1), repr(r.accuracy), r.n])
