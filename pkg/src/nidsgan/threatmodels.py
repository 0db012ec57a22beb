"""Whitebox, blackbox and restricted-blackbox attack pipelines.

In the blackbox modes the target is reached only through ``label_with_target``,
which returns hard labels and charges a ``QueryLedger``. Gradients always come
from the adversary's own surrogate.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .attack import AttackArtifacts, AttackConfig, train_nidsgan
from .constraints import ConstraintProfile, build_profile
from .flows import FlowDataset
from .nids import (
    NotDifferentiableError,
    TrainedClassifier,
    TrainingConfig,
    TrainingError,
    build_spec,
    fine_tune,
    train_classifier,
)

log = logging.getLogger(__name__)

MODES = ("whitebox", "blackbox", "restricted-blackbox")
RESTRICTED_MAX_LOCAL = 740
RESTRICTED_MAX_MULTIPLIER = 3.0


class ThreatModelError(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    def __init__(self, requested: int, remaining: int):
        super().__init__(f"query budget exceeded: requested {requested}, remaining {remaining}")
        self.requested = requested
        self.remaining = remaining
        self.shortfall = requested - remaining


class SurrogateError(RuntimeError):
    pass


def digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ThreatModelConfig:
    mode: str = "blackbox"
    adversary_pool_size: int = 10_000
    local_train_fraction: float = 1.0
    query_budget_multiplier: float = 3.0
    active_learning: bool = False
    al_rounds: int = 2
    al_retrain: bool = False  # full retrain of the surrogate instead of fine-tuning
    al_finetune_epochs: int = 20
    al_generator_epochs: int = 50
    surrogate_family: str = "idsnet"
    surrogate_hidden: tuple[int, ...] | None = None
    surrogate_batch_size: int = 32
    surrogate_learning_rate: float = 0.01
    surrogate_epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ThreatModelError(f"mode must be one of {MODES}")
        if self.adversary_pool_size < 1:
            raise ThreatModelError("adversary_pool_size must be positive")
        if not 0 < self.local_train_fraction <= 1:
            raise ThreatModelError("local_train_fraction must lie in (0, 1]")
        if self.query_budget_multiplier < 1:
            raise ThreatModelError("query_budget_multiplier must be at least 1")
        if self.al_rounds < 0:
            raise ThreatModelError("al_rounds must be nonnegative")
        if self.surrogate_hidden is not None:
            object.__setattr__(self, "surrogate_hidden", tuple(int(w) for w in self.surrogate_hidden))
        if self.mode == "restricted-blackbox":
            if self.local_size > RESTRICTED_MAX_LOCAL:
                raise ThreatModelError(
                    f"restricted mode allows at most {RESTRICTED_MAX_LOCAL} local samples, got {self.local_size}"
                )
            if self.query_budget_multiplier > RESTRICTED_MAX_MULTIPLIER:
                raise ThreatModelError(
                    f"restricted mode allows a query multiplier of at most {RESTRICTED_MAX_MULTIPLIER:g}"
                )

    @property
    def local_size(self) -> int:
        return max(1, int(round(self.adversary_pool_size * self.local_train_fraction)))

    @property
    def query_budget(self) -> int:
        return int(np.floor(self.query_budget_multiplier * self.local_size))

    def surrogate_training(self) -> TrainingConfig:
        return TrainingConfig(
            batch_size=self.surrogate_batch_size,
            learning_rate=self.surrogate_learning_rate,
            epochs=self.surrogate_epochs,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["surrogate_hidden"] = list(self.surrogate_hidden) if self.surrogate_hidden else None
        return d


@dataclass
class QueryLedger:
    """Counts target queries. Labeling and active-learning queries share the budget."""

    budget: int | None = None
    labeling_queries: int = 0
    active_learning_queries: int = 0
    evaluation_queries: int = 0
    events: list[tuple[str, int]] = field(default_factory=list)

    KINDS = ("labeling", "active_learning", "evaluation")

    @property
    def budgeted_total(self) -> int:
        return self.labeling_queries + self.active_learning_queries

    @property
    def remaining(self) -> int | None:
        return None if self.budget is None else self.budget - self.budgeted_total

    def charge(self, kind: str, n: int) -> None:
        if kind not in self.KINDS:
            raise ValueError(f"unknown query kind {kind!r}")
        if n < 0:
            raise ValueError("query count must be nonnegative")
        if n == 0:
            return
        if kind != "evaluation" and self.budget is not None and n > self.remaining:
            raise BudgetExceeded(n, self.remaining)
        setattr(self, f"{kind}_queries", getattr(self, f"{kind}_queries") + n)
        self.events.append((kind, n))

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "labeling_queries": self.labeling_queries,
            "active_learning_queries": self.active_learning_queries,
            "evaluation_queries": self.evaluation_queries,
        }


@dataclass
class EvasionReport:
    mode: str
    success_rate: float
    per_class: dict[str, float]
    mean_l2: float
    l2_percentiles: dict[str, float]
    ledger: dict
    seed: int
    n_attempted: int = 0
    local_size: int | None = None
    local_fraction: float | None = None
    config_hashes: dict[str, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def label_with_target(target, flows, ledger: QueryLedger, kind: str = "labeling") -> np.ndarray:
    """Hard labels from the target; charges ``ledger`` before querying."""
    X = np.asarray(flows, dtype=np.float64)
    if X.size == 0:
        return np.zeros(0, dtype=np.int64)
    X = np.atleast_2d(X)
    ledger.charge(kind, len(X))
    return np.asarray(target.predict_labels(X), dtype=np.int64)


def _stratified_quota(counts: np.ndarray, size: int) -> np.ndarray:
    """Largest-remainder allocation of ``size`` rows proportional to ``counts``."""
    exact = counts * size / counts.sum()
    quota = np.floor(exact).astype(int)
    short = size - quota.sum()
    order = np.lexsort((np.arange(len(counts)), -(exact - quota)))
    quota[order[:short]] += 1
    return quota


def sample_adversary_pool(dataset: FlowDataset, size: int, seed: int) -> FlowDataset:
    """Stratified subsample; rows keep their original order."""
    if size > len(dataset):
        raise ThreatModelError(f"pool size {size} exceeds the {len(dataset)} available rows")
    if size == len(dataset):
        return dataset.subset(np.arange(len(dataset)), "pool")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(dataset.y, return_counts=True)
    quota = _stratified_quota(counts, size)
    picked = [
        rng.choice(np.flatnonzero(dataset.y == c), size=q, replace=False) for c, q in zip(classes, quota) if q
    ]
    idx = np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=int)
    return dataset.subset(idx, "pool")


def surrogate_spec(config: ThreatModelConfig, schema):
    if config.surrogate_family == "custom-mlp":
        return build_spec("custom-mlp", schema, config.surrogate_hidden)
    return build_spec(config.surrogate_family, schema)


def train_local_model(flows, labels, spec, training: TrainingConfig, schema_source: FlowDataset) -> TrainedClassifier:
    """Fit the surrogate on (flows, target labels)."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise SurrogateError("target labels of the local set contain a single class; surrogate cannot be trained")
    X = np.asarray(flows, dtype=np.float64)
    data = FlowDataset(schema_source.schema, X, labels, schema_source.scaling_stats, "local", training.seed)
    return train_classifier(spec, data, training)


def _norm_stats(X: np.ndarray, X_star: np.ndarray) -> tuple[float, dict[str, float]]:
    norms = np.linalg.norm(X_star - X, axis=1)
    if len(norms) == 0:
        return 0.0, {"p50": 0.0, "p90": 0.0, "max": 0.0}
    return float(norms.mean()), {
        "p50": float(np.percentile(norms, 50)),
        "p90": float(np.percentile(norms, 90)),
        "max": float(norms.max()),
    }


def _as_profiles(profiles) -> list[ConstraintProfile]:
    if isinstance(profiles, ConstraintProfile):
        return [profiles]
    return list(profiles)


def _evaluate(target, artifacts_by_class, test: FlowDataset, ledger: QueryLedger):
    per_class, hits, tried, originals, advs = {}, 0, 0, [], []
    benign = test.benign_index
    for cls, art in artifacts_by_class.items():
        X = test.of_class(cls).X
        if len(X) == 0:
            continue
        X_star = art.generate(X)
        labels = label_with_target(target, X_star, ledger, "evaluation")
        per_class[cls] = float(np.mean(labels == benign))
        hits += int(np.sum(labels == benign))
        tried += len(X)
        originals.append(X)
        advs.append(X_star)
    rate = hits / tried if tried else 0.0
    if originals:
        mean_l2, pct = _norm_stats(np.vstack(originals), np.vstack(advs))
    else:
        mean_l2, pct = _norm_stats(np.zeros((0, 1)), np.zeros((0, 1)))
    return rate, per_class, mean_l2, pct, tried


def run_whitebox(
    target,
    train: FlowDataset,
    test: FlowDataset,
    attack_config: AttackConfig,
    profiles,
) -> tuple[EvasionReport, dict[str, AttackArtifacts]]:
    """Train one generator per profiled class directly against the target."""
    if not getattr(target, "differentiable", False):
        raise NotDifferentiableError("whitebox mode needs a differentiable target")
    profiles = _as_profiles(profiles)
    arts = {p.attack_class: train_nidsgan(attack_config, train.of_class(p.attack_class), target, p) for p in profiles}
    ledger = QueryLedger()
    rate, per_class, mean_l2, pct, tried = _evaluate(target, arts, test, ledger)
    report = EvasionReport(
        "whitebox", rate, per_class, mean_l2, pct, ledger.to_dict(), attack_config.seed, tried,
        config_hashes={"attack": digest(attack_config.to_dict()), "profiles": digest([p.digest() for p in profiles])},
        extra={"epochs_run": {c: len(a.trace) for c, a in arts.items()}},
    )
    return report, arts


def benign_margin(model, X: np.ndarray, benign: int) -> np.ndarray:
    """|p_benign - max other class probability| under the surrogate."""
    probs = model.predict_probs(X)
    others = np.delete(probs, benign, axis=1).max(axis=1)
    return np.abs(probs[:, benign] - others)


def active_learning_round(
    local_model: TrainedClassifier,
    target,
    artifacts: AttackArtifacts,
    probe_flows: np.ndarray,
    ledger: QueryLedger,
    local_X: np.ndarray,
    local_y: np.ndarray,
    training: TrainingConfig,
    retrain: bool = False,
    schema_source: FlowDataset | None = None,
) -> tuple[TrainedClassifier, np.ndarray, np.ndarray, int]:
    """Query the target on adversarial probes and learn from the ones it still catches.

    Returns the updated surrogate, the augmented local set and the number of
    failed probes. With no failures the surrogate is returned unchanged.
    """
    probes = np.atleast_2d(np.asarray(probe_flows, dtype=np.float64))
    remaining = ledger.remaining
    if remaining is not None and len(probes) > remaining:
        raise BudgetExceeded(len(probes), remaining)
    X_star = artifacts.generate(probes)
    labels = label_with_target(target, X_star, ledger, "active_learning")
    benign = local_model.label_set.index(artifacts.config.target_class) if artifacts.config.target_class else 0
    if schema_source is not None:
        benign = schema_source.benign_index
    failed = labels != benign
    n_failed = int(failed.sum())
    if n_failed == 0:
        return local_model, local_X, local_y, 0
    aug_X = np.vstack([local_X, X_star[failed]])
    aug_y = np.concatenate([local_y, labels[failed]])
    if retrain:
        if schema_source is None:
            raise ValueError("full retraining needs the dataset schema")
        model = train_local_model(aug_X, aug_y, local_model.spec, training, schema_source)
    else:
        model = fine_tune(local_model, aug_X, aug_y, training)
    return model, aug_X, aug_y, n_failed


def _select_probes(model, artifacts: AttackArtifacts, candidates: np.ndarray, k: int, benign: int) -> np.ndarray:
    if k >= len(candidates):
        return candidates
    margins = benign_margin(model, artifacts.generate(candidates), benign)
    order = np.argsort(margins, kind="stable")
    return candidates[np.sort(order[:k])]


def _blackbox(
    target,
    source: FlowDataset,
    test: FlowDataset,
    config: ThreatModelConfig,
    attack_config: AttackConfig,
    attack_classes: Sequence[str] | None,
    profiles: Mapping[str, ConstraintProfile] | None,
) -> tuple[EvasionReport, dict]:
    seed = config.seed
    pool = sample_adversary_pool(source, min(config.adversary_pool_size, len(source)), seed)
    local_n = min(len(pool), max(1, int(round(len(pool) * config.local_train_fraction))))
    local = sample_adversary_pool(pool, local_n, seed + 1)
    ledger = QueryLedger(budget=int(np.floor(config.query_budget_multiplier * local_n)))
    classes = list(attack_classes) if attack_classes else [c for c in pool.label_set if c != pool.schema.benign_label]
    hashes = {"threat": digest(config.to_dict()), "attack": digest(attack_config.to_dict())}

    def report(rate=0.0, per_class=None, mean_l2=0.0, pct=None, tried=0, extra=None, error=None):
        return EvasionReport(
            config.mode, rate, per_class or {}, mean_l2, pct or {}, ledger.to_dict(), seed, tried,
            local_size=local_n, local_fraction=local_n / len(pool), config_hashes=hashes,
            extra=extra or {}, error=error,
        )

    y_local = label_with_target(target, local.X, ledger, "labeling")
    training = config.surrogate_training()
    spec = surrogate_spec(config, source.schema)
    try:
        surrogate = train_local_model(local.X, y_local, spec, training, source)
    except (SurrogateError, TrainingError) as exc:
        return report(error=str(exc)), {}

    profiles = dict(profiles or {})
    for cls in classes:
        if cls not in profiles:
            profiles[cls] = build_profile(pool.schema, pool, cls)
    hashes["profiles"] = digest([profiles[c].digest() for c in classes])
    attack_rows = {c: pool.of_class(c) for c in classes}
    arts = {c: train_nidsgan(attack_config, attack_rows[c], surrogate, profiles[c]) for c in classes}
    state = {"surrogate": surrogate, "artifacts": arts, "ledger": ledger, "local_X": local.X, "local_y": y_local}

    extra: dict = {"local_agreement": float(np.mean(surrogate.predict_labels(local.X) == y_local))}
    if config.mode == "restricted-blackbox" and config.active_learning and config.al_rounds:
        start = dict(arts)
        extra["al_rounds"] = _run_active_learning(target, config, attack_config, source, attack_rows, profiles, state)
        # the comparison run gets the same extra generator epochs, against the untouched surrogate
        baseline = {}
        for cls, art in start.items():
            for r in range(len(extra["al_rounds"])):
                art = train_nidsgan(
                    _round_config(attack_config, config, r), attack_rows[cls], surrogate, profiles[cls],
                    generator=art.generator, critic=art.critic,
                )
            baseline[cls] = art
        base_rate, base_per_class, *_ = _evaluate(target, baseline, test, ledger)
        extra["success_without_al"] = base_rate
        extra["per_class_without_al"] = base_per_class

    rate, per_class, mean_l2, pct, tried = _evaluate(target, state["artifacts"], test, ledger)
    return report(rate, per_class, mean_l2, pct, tried, extra), state


def _round_config(attack_config: AttackConfig, config: ThreatModelConfig, r: int) -> AttackConfig:
    return replace(attack_config, epochs=config.al_generator_epochs, seed=attack_config.seed + 1000 * (r + 1))


def _run_active_learning(target, config, attack_config, source, attack_rows, profiles, state) -> list[dict]:
    ledger: QueryLedger = state["ledger"]
    ft = replace(config.surrogate_training(), epochs=config.al_finetune_epochs)
    benign = source.benign_index
    per_round = len(state["local_X"])
    rounds = []
    for r in range(config.al_rounds):
        if ledger.remaining is not None and ledger.remaining <= 0:
            break
        quota = per_round if ledger.remaining is None else min(per_round, ledger.remaining)
        # spread the probe quota over attack classes in proportion to their pool rows
        counts = np.array([len(attack_rows[c]) for c in attack_rows])
        shares = _stratified_quota(counts, min(quota, int(counts.sum())))
        total_failed = 0
        for (cls, rows), k in zip(attack_rows.items(), shares):
            if k == 0:
                continue
            art = state["artifacts"][cls]
            probes = _select_probes(state["surrogate"], art, rows.X, int(k), benign)
            model, X_aug, y_aug, n_failed = active_learning_round(
                state["surrogate"], target, art, probes, ledger, state["local_X"], state["local_y"],
                ft, retrain=config.al_retrain, schema_source=source,
            )
            state.update(surrogate=model, local_X=X_aug, local_y=y_aug)
            total_failed += n_failed
        for cls in attack_rows:
            old = state["artifacts"][cls]
            state["artifacts"][cls] = train_nidsgan(
                _round_config(attack_config, config, r),
                attack_rows[cls], state["surrogate"], profiles[cls], generator=old.generator, critic=old.critic,
            )
        rounds.append({"round": r, "probes": int(sum(shares)), "failed": total_failed, "ledger": ledger.to_dict()})
    return rounds


def run_blackbox(
    target,
    source: FlowDataset,
    test: FlowDataset,
    config: ThreatModelConfig,
    attack_config: AttackConfig,
    attack_classes: Sequence[str] | None = None,
    profiles: Mapping[str, ConstraintProfile] | None = None,
) -> tuple[EvasionReport, dict]:
    """Label a local set with the target, fit a surrogate, attack the surrogate, score on the target.

    ``source`` is the data the adversary samples its pool from. Constraint
    ranges default to the pool's own rows of each attacked class.
    """
    if config.mode != "blackbox":
        raise ThreatModelError("run_blackbox needs mode 'blackbox'")
    return _blackbox(target, source, test, config, attack_config, attack_classes, profiles)


def run_restricted_blackbox(
    target,
    source: FlowDataset,
    test: FlowDataset,
    config: ThreatModelConfig,
    attack_config: AttackConfig,
    attack_classes: Sequence[str] | None = None,
    profiles: Mapping[str, ConstraintProfile] | None = None,
) -> tuple[EvasionReport, dict]:
    """Blackbox pipeline under the restricted budget, plus optional active-learning rounds."""
    if config.mode != "restricted-blackbox":
        raise ThreatModelError("run_restricted_blackbox needs mode 'restricted-blackbox'")
    report, state = _blackbox(target, source, test, config, attack_config, attack_classes, profiles)
    if report.ledger["budget"] is not None:
        assert report.ledger["labeling_queries"] + report.ledger["active_learning_queries"] <= report.ledger["budget"]
    return report, state


def run_transfer(
    artifacts: AttackArtifacts,
    classical_targets: Mapping[str, object],
    test_attack_flows: np.ndarray,
    benign_index: int = 0,
) -> dict[str, EvasionReport]:
    """Score one generator's outputs against other models. No target queries are made."""
    X = np.atleast_2d(np.asarray(test_attack_flows, dtype=np.float64))
    X_star = artifacts.generate(X)
    mean_l2, pct = _norm_stats(X, X_star)
    out = {}
    for name, model in classical_targets.items():
        labels = model.predict_labels(X_star)
        rate = float(np.mean(labels == benign_index)) if len(X) else 0.0
        out[name] = EvasionReport(
            "transfer", rate, {artifacts.profile.attack_class: rate}, mean_l2, pct, QueryLedger().to_dict(),
            artifacts.config.seed, len(X), config_hashes={"attack": digest(artifacts.config.to_dict())},
            extra={"target": name},
        )
    return out


def agreement(a, b, X: np.ndarray) -> float:
    return float(np.mean(a.predict_labels(X) == b.predict_labels(X)))
