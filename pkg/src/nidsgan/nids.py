"""Target and surrogate NIDS classifiers, plus the evaluation metrics.

MLP families (AlertNet, DeepNet, IdsNet, custom) are torch networks trained
with cross-entropy; the classical families wrap scikit-learn estimators behind
the same ``predict_probs`` / ``predict_labels`` interface.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import yaml
from torch import nn

from .flows import FeatureSchema, FlowDataset, iter_batches

log = logging.getLogger(__name__)

torch.set_default_dtype(torch.float64)

MLP_FAMILIES = ("alertnet", "deepnet", "idsnet", "custom-mlp")
CLASSICAL_FAMILIES = ("decision-tree", "svm", "knn", "logistic-regression")
FAMILIES = MLP_FAMILIES + CLASSICAL_FAMILIES

# hidden widths for IdsNet by dataset, from the exemplar model's setup table
IDSNET_HIDDEN = {"nslkdd": (64, 32), "cicids": (42, 21)}


class TrainingError(RuntimeError):
    pass


class NotDifferentiableError(TypeError):
    pass


@dataclass(frozen=True)
class ClassifierSpec:
    family: str
    layer_widths: tuple[int, ...] = ()
    dropout_rate: float = 0.0
    batch_norm: bool = False
    n_classes: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown classifier family {self.family!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.family in MLP_FAMILIES:
            if len(self.layer_widths) < 2 or self.layer_widths[-1] != self.n_classes:
                raise ValueError("MLP widths must run from input width to n_classes")

    @property
    def is_mlp(self) -> bool:
        return self.family in MLP_FAMILIES


def build_spec(family: str, schema: FeatureSchema, layer_widths: Sequence[int] | None = None) -> ClassifierSpec:
    """Architecture for ``family`` sized to ``schema``.

    ``layer_widths`` is only used by ``custom-mlp`` and may be given either as
    full widths (input..output) or hidden widths only.
    """
    n, k = schema.n_encoded, len(schema.labels)
    if family == "alertnet":
        return ClassifierSpec(family, (n, 1024, 768, 512, 256, 128, k), 0.01, True, k)
    if family == "deepnet":
        return ClassifierSpec(family, (n, 256, 256, 256, 256, k), 0.01, False, k)
    if family == "idsnet":
        hidden = IDSNET_HIDDEN.get(schema.name, (max(2, n // 2), max(2, n // 4)))
        return ClassifierSpec(family, (n, *hidden, k), 0.0, False, k)
    if family == "custom-mlp":
        widths = tuple(layer_widths or ())
        if not widths or widths[0] != n or widths[-1] != k:
            widths = (n, *widths, k)
        return ClassifierSpec(family, widths, 0.0, False, k)
    if family in CLASSICAL_FAMILIES:
        return ClassifierSpec(family, (), 0.0, False, k)
    raise ValueError(f"unknown classifier family {family!r}")


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 32
    learning_rate: float = 0.01
    epochs: int = 50
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("invalid training configuration")
        if self.optimizer != "adam":
            raise ValueError("only the adam optimizer is supported")


def reference_training_config(schema: FeatureSchema, seed: int = 0) -> TrainingConfig:
    """Batch 256 / lr 1e-3 for CICIDS, batch 32 / lr 1e-2 otherwise; 50 epochs, Adam."""
    if schema.name == "cicids":
        return TrainingConfig(batch_size=256, learning_rate=0.001, epochs=50, seed=seed)
    return TrainingConfig(batch_size=32, learning_rate=0.01, epochs=50, seed=seed)


class MLP(nn.Module):
    """Linear -> ReLU [-> BatchNorm] [-> Dropout] blocks and a linear head producing logits."""

    def __init__(self, widths: Sequence[int], dropout: float = 0.0, batch_norm: bool = False):
        super().__init__()
        layers: list[nn.Module] = []
        for a, b in zip(widths[:-2], widths[1:-1]):
            layers += [nn.Linear(a, b), nn.ReLU()]
            if batch_norm:
                layers.append(nn.BatchNorm1d(b))
            if dropout > 0:
                layers.append(nn.Dropout(dropout))
        layers.append(nn.Linear(widths[-2], widths[-1]))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)

    @property
    def head(self) -> nn.Linear:
        return self.body[-1]


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: dict[str, ClassCounts]
    per_class_scores: dict[str, tuple[float, float, float]]
    flagged: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class": {k: asdict(v) for k, v in self.per_class.items()},
            "per_class_scores": {k: list(v) for k, v in self.per_class_scores.items()},
            "flagged": list(self.flagged),
        }


def _as_indices(y, label_set: Sequence[str]) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype.kind in "iu":
        if len(y) and (y.min() < 0 or y.max() >= len(label_set)):
            raise ValueError("label index outside label set")
        return y.astype(np.int64)
    lookup = {lbl: i for i, lbl in enumerate(label_set)}
    try:
        return np.array([lookup[str(v)] for v in y], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"unknown label {exc.args[0]!r}") from None


def compute_metrics(y_true, y_pred, label_set: Sequence[str]) -> MetricsReport:
    """Accuracy and macro precision/recall/F1 from one-vs-rest counts.

    Macro averages run over classes that occur in ``y_true`` or ``y_pred``.
    A class whose precision, recall or F1 has a zero denominator scores 0 for
    that quantity and is listed in ``flagged``.
    """
    t = _as_indices(y_true, label_set)
    p = _as_indices(y_pred, label_set)
    if len(t) != len(p):
        raise ValueError("y_true and y_pred differ in length")
    n = len(t)
    per_class, scores, flagged, present = {}, {}, [], []
    for c, name in enumerate(label_set):
        tp = int(np.sum((t == c) & (p == c)))
        fp = int(np.sum((t != c) & (p == c)))
        fn = int(np.sum((t == c) & (p != c)))
        per_class[name] = ClassCounts(tp, fp, fn, n - tp - fp - fn)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        if not (tp + fp and tp + fn and prec + rec):
            flagged.append(name)
        scores[name] = (prec, rec, f1)
        if tp + fp + fn:
            present.append(name)
    mean = lambda i: float(np.mean([scores[c][i] for c in present])) if present else 0.0  # noqa: E731
    acc = float(np.mean(t == p)) if n else 0.0
    return MetricsReport(acc, mean(0), mean(1), mean(2), per_class, scores, tuple(flagged))


class TrainedClassifier:
    """A fitted MLP classifier. Parameters are frozen; inference only."""

    differentiable = True

    def __init__(
        self,
        spec: ClassifierSpec,
        net: MLP,
        label_set: Sequence[str],
        training_config: TrainingConfig | None = None,
        metrics_on_test: MetricsReport | None = None,
        history: list[float] | None = None,
    ):
        self.spec = spec
        self.net = net.eval()
        for prm in self.net.parameters():
            prm.requires_grad_(False)
        self.label_set = tuple(label_set)
        self.training_config = training_config
        self.metrics_on_test = metrics_on_test
        self.history = list(history or [])

    @property
    def n_features(self) -> int:
        return self.spec.layer_widths[0]

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def _check(self, X) -> np.ndarray:
        X = np.atleast_2d(np.array(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_probs(self, X) -> np.ndarray:
        X = self._check(X)
        with torch.no_grad():
            return torch.softmax(self.net(torch.from_numpy(X)), dim=1).numpy()

    def predict_labels(self, X) -> np.ndarray:
        return np.argmax(self.predict_probs(X), axis=1)

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "kind": "mlp",
                "spec": asdict(self.spec),
                "label_set": list(self.label_set),
                "training_config": asdict(self.training_config) if self.training_config else None,
                "metrics": self.metrics_on_test.to_dict() if self.metrics_on_test else None,
                "state": self.net.state_dict(),
            },
            path,
        )


class ClassicalClassifier:
    """scikit-learn estimator exposing the MLP prediction interface."""

    differentiable = False

    def __init__(self, spec: ClassifierSpec, estimator, label_set: Sequence[str], params: dict, seed: int):
        self.spec = spec
        self.estimator = estimator
        self.label_set = tuple(label_set)
        self.params = params
        self.seed = seed
        self.metrics_on_test: MetricsReport | None = None
        self._cols = np.asarray(estimator.classes_, dtype=int)

    @property
    def n_features(self) -> int:
        return int(self.estimator.n_features_in_)

    def logits(self, x):
        raise NotDifferentiableError(f"{self.spec.family} provides no input gradients")

    def predict_probs(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if self.spec.family == "svm":
            # margin calibration: softmax over one-vs-rest scores (sigmoid in the binary case)
            d = self.estimator.decision_function(X)
            scores = np.column_stack([np.zeros_like(d), d]) if d.ndim == 1 else d
            scores = scores - scores.max(axis=1, keepdims=True)
            part = np.exp(scores)
            part /= part.sum(axis=1, keepdims=True)
        else:
            part = self.estimator.predict_proba(X)
        out = np.zeros((len(X), len(self.label_set)))
        out[:, self._cols] = part
        return out

    def predict_labels(self, X) -> np.ndarray:
        return np.argmax(self.predict_probs(X), axis=1)

    def save(self, path: str | Path) -> None:
        import joblib

        joblib.dump({"kind": "classical", "model": self}, path)


def predict_probs(model, X) -> np.ndarray:
    return model.predict_probs(X)


def predict_labels(model, X) -> np.ndarray:
    """Argmax of ``predict_probs``; ties go to the lowest class index."""
    return model.predict_labels(X)


def _check_finite(loss: torch.Tensor, epoch: int, step: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step}")


def _fit(net: MLP, X: np.ndarray, y: np.ndarray, config: TrainingConfig, batch_norm: bool) -> list[float]:
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate, betas=config.betas)
    loss_fn = nn.CrossEntropyLoss()
    Xt, yt = torch.from_numpy(np.array(X, dtype=np.float64)), torch.from_numpy(np.array(y, dtype=np.int64))
    history = []
    net.train()
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for step, idx in enumerate(iter_batches(len(X), config.batch_size, rng)):
            if batch_norm and len(idx) < 2:
                continue
            opt.zero_grad()
            loss = loss_fn(net(Xt[idx]), yt[idx])
            _check_finite(loss, epoch, step)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / max(count, 1))
    net.eval()
    return history


def train_classifier(
    spec: ClassifierSpec,
    train: FlowDataset,
    config: TrainingConfig | None = None,
    test: FlowDataset | None = None,
    labels: np.ndarray | None = None,
) -> TrainedClassifier:
    """Fit an MLP by minibatch Adam on cross-entropy.

    ``labels`` overrides ``train.y`` (used when a surrogate learns from
    target-provided labels).
    """
    if not spec.is_mlp:
        raise ValueError(f"{spec.family} is not an MLP family; use train_classical")
    config = config or reference_training_config(train.schema)
    if spec.layer_widths[0] != train.X.shape[1] or spec.n_classes != len(train.label_set):
        raise ValueError("classifier spec does not match the dataset schema")
    y = train.y if labels is None else np.asarray(labels, dtype=np.int64)
    torch.manual_seed(config.seed)
    net = MLP(spec.layer_widths, spec.dropout_rate, spec.batch_norm)
    history = _fit(net, train.X, y, config, spec.batch_norm)
    model = TrainedClassifier(spec, net, train.label_set, config, history=history)
    if test is not None:
        model.metrics_on_test = compute_metrics(test.y, model.predict_labels(test.X), test.label_set)
    return model


def fine_tune(model: TrainedClassifier, X: np.ndarray, y: np.ndarray, config: TrainingConfig) -> TrainedClassifier:
    """Continue training a copy of ``model``; the original stays untouched."""
    net = copy.deepcopy(model.net)
    for prm in net.parameters():
        prm.requires_grad_(True)
    history = _fit(net, np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64), config, model.spec.batch_norm)
    return TrainedClassifier(model.spec, net, model.label_set, config, history=model.history + history)


def linear_classifier(
    weights: np.ndarray,
    bias: np.ndarray,
    label_set: Sequence[str],
) -> TrainedClassifier:
    """MLP with no hidden layer and the given logit weights ``(n_classes, n)``."""
    weights = np.asarray(weights, dtype=np.float64)
    k, n = weights.shape
    spec = ClassifierSpec("custom-mlp", (n, k), 0.0, False, k)
    net = MLP(spec.layer_widths)
    with torch.no_grad():
        net.head.weight.copy_(torch.from_numpy(weights))
        net.head.bias.copy_(torch.from_numpy(np.asarray(bias, dtype=np.float64)))
    return TrainedClassifier(spec, net, label_set)


@lru_cache(maxsize=1)
def classical_defaults() -> dict:
    text = resources.files("nidsgan").joinpath("defaults/classical.yaml").read_text()
    return yaml.safe_load(text)


def train_classical(
    kind: str,
    train: FlowDataset,
    params: dict | None = None,
    seed: int = 0,
    labels: np.ndarray | None = None,
    test: FlowDataset | None = None,
) -> ClassicalClassifier:
    from sklearn.linear_model import LogisticRegression
    from sklearn.neighbors import KNeighborsClassifier
    from sklearn.svm import SVC
    from sklearn.tree import DecisionTreeClassifier

    if kind not in CLASSICAL_FAMILIES:
        raise ValueError(f"unknown classical model {kind!r}")
    y = train.y if labels is None else np.asarray(labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise TrainingError("classical model needs at least two classes in the training labels")
    merged = {**classical_defaults().get(kind, {}), **(params or {})}
    if kind == "decision-tree":
        est = DecisionTreeClassifier(random_state=seed, **merged)
    elif kind == "svm":
        est = SVC(random_state=seed, **merged)
    elif kind == "knn":
        est = KNeighborsClassifier(**merged)
    else:
        est = LogisticRegression(random_state=seed, **merged)
    est.fit(train.X, y)
    spec = build_spec(kind, train.schema)
    model = ClassicalClassifier(spec, est, train.label_set, merged, seed)
    if test is not None:
        model.metrics_on_test = compute_metrics(test.y, model.predict_labels(test.X), test.label_set)
    return model


def load_classifier(path: str | Path):
    path = Path(path)
    try:
        blob = torch.load(path, weights_only=False)
    except Exception:
        import joblib

        return joblib.load(path)["model"]
    if isinstance(blob, dict) and blob.get("kind") == "mlp":
        s = blob["spec"]
        spec = ClassifierSpec(s["family"], tuple(s["layer_widths"]), s["dropout_rate"], s["batch_norm"], s["n_classes"])
        net = MLP(spec.layer_widths, spec.dropout_rate, spec.batch_norm)
        net.load_state_dict(blob["state"])
        tc = blob.get("training_config")
        if tc:
            tc = TrainingConfig(**{**tc, "betas": tuple(tc["betas"])})
        return TrainedClassifier(spec, net, blob["label_set"], tc)
    return blob["model"]


def metrics_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=1, sort_keys=True)


def with_seed(config: TrainingConfig, seed: int) -> TrainingConfig:
    return replace(config, seed=seed)


__all__ = [
    "ClassifierSpec", "TrainingConfig", "TrainedClassifier", "ClassicalClassifier", "MetricsReport",
    "build_spec", "train_classifier", "train_classical", "predict_labels", "predict_probs",
    "compute_metrics", "fine_tune", "linear_classifier", "load_classifier", "reference_training_config",
]
