"""Desk-scale trainer: a linear multi-label classifier on synthetic long-tailed data.

The synthetic generator draws per-class Gaussian prototypes, samples each
label independently with a power-law frequency f_c = f_head * (c+1)^-exponent,
and builds features as the sum of the sample's positive prototypes plus
Gaussian noise.  Training is plain SGD (no momentum) on either the
distribution-balanced loss or plain BCE, with epochs built by the
class-aware sampler or a uniform shuffle.  Everything is deterministic
given the configured seeds.
"""

import json
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from .data import LabelMatrix
from .loss import DbLossParams, class_weights, db_loss, effective_numbers, margins, stable_sigmoid
from .metrics import average_precision
from .sampler import SamplerConfig, build_epoch, class_repeat_factors, sample_repeat_factors

DEFAULT_HEAD_FREQUENCY = 0.5


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: np.ndarray
    class_names: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be C x D with a C-vector bias")
        if len(self.class_names) != self.weights.shape[0]:
            raise ValueError("class_names must match weight rows")

    def to_json_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "weights": [[float(v) for v in row] for row in self.weights],
            "bias": [float(v) for v in self.bias],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "LinearModel":
        return cls(
            weights=np.asarray(payload["weights"], dtype=np.float64),
            bias=np.asarray(payload["bias"], dtype=np.float64),
            class_names=list(payload["class_names"]),
        )


@dataclass
class SynthSpec:
    n_samples: int
    n_classes: int
    feature_dim: int
    power_law_exponent: float = 1.5
    noise_std: float = 0.5
    seed: int = 0
    head_frequency: float = DEFAULT_HEAD_FREQUENCY

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("cannot place one positive per class with no samples")
        if self.n_classes < 1 or self.feature_dim < 1:
            raise ValueError("need at least one class and one feature")
        if self.power_law_exponent < 0:
            raise ValueError("power_law_exponent must be >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0.0 < self.head_frequency <= 1.0:
            raise ValueError("head_frequency must be in (0, 1]")


@dataclass
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    loss: str = "db"
    sampler: str = "cas"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.loss not in ("db", "plain-bce"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.sampler not in ("cas", "uniform"):
            raise ValueError(f"unknown sampler {self.sampler!r}")


def power_law_frequencies(n_classes: int, exponent: float, head: float = DEFAULT_HEAD_FREQUENCY):
    """Configured class frequencies f_c = head * (c+1)^-exponent, before clipping."""
    ranks = np.arange(1, n_classes + 1, dtype=np.float64)
    return head * np.power(ranks, -exponent)


def generate_synthetic(spec: SynthSpec):
    """Draw (features, labels) with every class guaranteed at least one positive."""
    if spec.n_classes > spec.feature_dim:
        warnings.warn("more classes than feature dimensions; prototypes will collide")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    freqs = power_law_frequencies(spec.n_classes, spec.power_law_exponent, spec.head_frequency)
    prototypes = rng.standard_normal((spec.n_classes, spec.feature_dim))
    labels = (rng.random((spec.n_samples, spec.n_classes)) < freqs).astype(np.int8)
    for c in range(spec.n_classes):
        if labels[:, c].sum() == 0:
            labels[int(rng.integers(spec.n_samples)), c] = 1
    noise = rng.standard_normal((spec.n_samples, spec.feature_dim)) * spec.noise_std
    features = labels.astype(np.float64) @ prototypes + noise
    label_matrix = LabelMatrix(
        ids=[f"s{i}" for i in range(spec.n_samples)],
        values=labels,
        class_names=[f"c{j}" for j in range(spec.n_classes)],
    )
    return features, label_matrix


def forward(model: LinearModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.weights.shape[1]:
        raise ValueError("feature batch does not match model dimensions")
    return x @ model.weights.T + model.bias


def _loss_terms(labels: LabelMatrix, cfg: TrainConfig, params: DbLossParams, margin_override=None):
    """Per-class weights and margins for the configured loss.

    Classes with zero training positives cannot be weighted by effective
    numbers; they fall back to weight 1 / margin 0 (counts clamped to 1).
    An explicit margin vector bypasses the count-based generator.
    """
    c = labels.n_classes
    if cfg.loss == "plain-bce":
        return np.ones(c), np.zeros(c)
    counts = np.maximum(labels.values.sum(axis=0, dtype=np.int64), 1)
    weights = class_weights(effective_numbers(counts, params.beta), params.alpha)
    if margin_override is not None:
        margin_vec = np.asarray(margin_override, dtype=np.float64)
        if margin_vec.shape != (c,):
            raise ValueError("margin override needs one value per class")
        if (margin_vec < 0).any():
            raise ValueError("margins must be non-negative")
        return weights, margin_vec
    return weights, margins(counts, params.margin_scale)


def train(
    features,
    labels: LabelMatrix,
    cfg: TrainConfig,
    loss_params: DbLossParams = None,
    sampler_cfg: SamplerConfig = None,
    margin_override=None,
):
    """SGD on the selected loss over sampler-built epochs.

    Returns (model, trace) where trace[e] is the epoch-mean loss.  Aborts
    with ValueError if the loss stops being finite.
    """
    if loss_params is None:
        loss_params = DbLossParams()
    if sampler_cfg is None:
        sampler_cfg = SamplerConfig(seed=cfg.seed)
    features = np.asarray(features, dtype=np.float64)
    n, d = features.shape
    if n != labels.n_samples:
        raise ValueError("features and labels disagree on sample count")
    c = labels.n_classes

    weights, margin_vec = _loss_terms(labels, cfg, loss_params, margin_override)
    if cfg.sampler == "cas":
        freqs = labels.values.sum(axis=0, dtype=np.int64) / float(n)
        r_class = class_repeat_factors(freqs, sampler_cfg)
        repeat = sample_repeat_factors(labels, r_class, sampler_cfg)
    else:
        repeat = np.ones(n)

    model = LinearModel(
        weights=np.zeros((c, d)), bias=np.zeros(c), class_names=list(labels.class_names)
    )
    y_all = labels.values.astype(np.float64)
    trace = []
    for epoch in range(cfg.epochs):
        plan = build_epoch(repeat, sampler_cfg, epoch=epoch)
        loss_sum = 0.0
        for start in range(0, plan.epoch_len, cfg.batch_size):
            batch = plan.indices[start : start + cfg.batch_size]
            x_b = features[batch]
            y_b = y_all[batch]
            z = x_b @ model.weights.T + model.bias
            if not np.isfinite(z).all():
                raise ValueError(f"training diverged at epoch {epoch}")
            result = db_loss(z, y_b, weights, margin_vec)
            if not np.isfinite(result.loss):
                raise ValueError(f"training diverged at epoch {epoch}")
            with np.errstate(over="ignore"):  # the divergence check above reports it
                model.weights -= cfg.learning_rate * (result.grad_z.T @ x_b)
                model.bias -= cfg.learning_rate * result.grad_z.sum(axis=0)
            loss_sum += result.loss * batch.size
        trace.append(loss_sum / plan.epoch_len)
    if not (np.isfinite(model.weights).all() and np.isfinite(model.bias).all()):
        raise ValueError("training diverged: non-finite parameters")
    return model, trace


def holdout_split(features, labels: LabelMatrix, fraction: float = 0.2):
    """Deterministic split: the last `fraction` of samples by index is held out."""
    n = labels.n_samples
    n_train = n - int(n * fraction)
    train_labels = LabelMatrix(
        ids=labels.ids[:n_train],
        values=labels.values[:n_train],
        class_names=labels.class_names,
    )
    test_labels = LabelMatrix(
        ids=labels.ids[n_train:],
        values=labels.values[n_train:],
        class_names=labels.class_names,
    )
    return (features[:n_train], train_labels), (features[n_train:], test_labels)


def class_terciles(counts):
    """(tail, head) class index lists: smallest / largest third by count.

    Tercile size is C // 3 (at least 1); ties break by class index.
    """
    counts = np.asarray(counts, dtype=np.int64)
    c = counts.shape[0]
    k = max(1, c // 3)
    by_count = sorted(range(c), key=lambda j: (counts[j], j))
    tail = by_count[:k]
    by_count_desc = sorted(range(c), key=lambda j: (-counts[j], j))
    head = by_count_desc[:k]
    return tail, head


def tercile_macro_ap(probabilities, labels: LabelMatrix, class_indices):
    """Mean AP over the given classes, skipping those with no positives."""
    values = []
    for j in class_indices:
        ap = average_precision(probabilities[:, j], labels.values[:, j])
        if ap is not None:
            values.append(ap)
    return float(np.mean(values)) if values else None


def evaluate_arm(model: LinearModel, features, labels: LabelMatrix, tercile_counts):
    probs = stable_sigmoid(forward(model, features))
    tail, head = class_terciles(tercile_counts)
    per_class = [
        average_precision(probs[:, j], labels.values[:, j]) for j in range(labels.n_classes)
    ]
    defined = [ap for ap in per_class if ap is not None]
    return {
        "map": float(np.mean(defined)) if defined else None,
        "tail_map": tercile_macro_ap(probs, labels, tail),
        "head_map": tercile_macro_ap(probs, labels, head),
    }


def run_comparison(
    spec: SynthSpec,
    learning_rate: float = 0.5,
    epochs: int = 40,
    batch_size: int = 64,
    db_params: DbLossParams = None,
    sampler_cfg: SamplerConfig = None,
):
    """Two-arm experiment: db+cas versus plain-bce+uniform on one synthetic draw.

    Both arms share the data, the split, the learning rate, and the epoch
    count; only the loss and the sampler differ.
    """
    if db_params is None:
        db_params = DbLossParams(alpha=0.5)
    if sampler_cfg is None:
        sampler_cfg = SamplerConfig(threshold=0.05, r_max=10.0, seed=spec.seed)
    features, labels = generate_synthetic(spec)
    (x_train, y_train), (x_test, y_test) = holdout_split(features, labels)
    tercile_counts = labels.values.sum(axis=0, dtype=np.int64)

    arms = {}
    models = {}
    for name, loss_name, sampler_name in (
        ("db_cas", "db", "cas"),
        ("bce_uniform", "plain-bce", "uniform"),
    ):
        cfg = TrainConfig(
            learning_rate=learning_rate,
            epochs=epochs,
            batch_size=batch_size,
            loss=loss_name,
            sampler=sampler_name,
            seed=spec.seed,
        )
        model, trace = train(x_train, y_train, cfg, db_params, sampler_cfg)
        summary = evaluate_arm(model, x_test, y_test, tercile_counts)
        summary["final_train_loss"] = trace[-1]
        arms[name] = summary
        models[name] = model

    summary = {
        "spec": asdict(spec),
        "learning_rate": learning_rate,
        "epochs": epochs,
        "batch_size": batch_size,
        "arms": arms,
        "tail_gain": arms["db_cas"]["tail_map"] - arms["bce_uniform"]["tail_map"],
        "head_change": arms["db_cas"]["head_map"] - arms["bce_uniform"]["head_map"],
    }
    return summary, models, (x_test, y_test)


def save_model(model: LinearModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> LinearModel:
    with open(path, "r", encoding="utf-8") as fh:
        return LinearModel.from_json_dict(json.load(fh))
