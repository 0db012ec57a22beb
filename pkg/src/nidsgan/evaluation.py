"""Success rates, epsilon sweeps, l2 budget allocation and realization plans."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .attack import AttackConfig, evasion_rate, train_nidsgan
from .constraints import ConstraintProfile, unconstrained_profile
from .flows import FeatureSchema, FlowDataset

INJECT, REARRANGE, SPLIT = "Inject", "Rearrange", "Split"
OPERATIONS = (INJECT, REARRANGE, SPLIT)

# Flow-feature name patterns and the packet-level operation that moves them.
# Checked in order; the first match wins.
REALIZATION_RULES: tuple[tuple[str, str], ...] = (
    (r"iat", REARRANGE),
    (r"active|idle", REARRANGE),
    (r"duration", REARRANGE),
    (r"(bytes|packets|pkts)\s*/\s*s\b|flow_bytes_s|flow_packets_s", REARRANGE),
    (r"bytes\s*/\s*bulk", SPLIT),
    (r"packets\s*/\s*bulk|bulk\s*rate", INJECT),
    (r"flag", INJECT),
    (r"header", INJECT),
    (r"down\s*/\s*up", INJECT),
    (r"init.?win", INJECT),
    (r"act.?data.?pkt|payload", SPLIT),
    (r"min.?seg.?size", INJECT),
    (r"(packet|pkt)\s*(length|len|size)|average packet size|avg.*segment size", INJECT),
    (r"total\s*length|(fwd|bwd|backward|forward).*length of|src_bytes|dst_bytes", INJECT),
    (r"total\s*(fwd|bwd|backward|forward)?\s*(packets|pkts)|subflow.*packets", SPLIT),
    (r"subflow.*bytes", INJECT),
)


def success_rate(target, originals, adversarials, benign_index: int = 0) -> float:
    """Fraction of adversarial flows the target labels benign."""
    originals = np.atleast_2d(np.asarray(originals))
    adversarials = np.atleast_2d(np.asarray(adversarials))
    if len(originals) != len(adversarials):
        raise ValueError("originals and adversarials differ in length")
    if len(adversarials) == 0:
        return 0.0
    return float(np.mean(target.predict_labels(adversarials) == benign_index))


def budget_table(k: int, c: float, epsilon: float = 0.3) -> float:
    """Per-feature magnitude left for the other k - 1 features once one takes c.

    For k = 1 the single feature may use the whole budget, so epsilon is returned.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if c < 0:
        raise ValueError("c must be nonnegative")
    if c > epsilon:
        raise ValueError(f"fixed magnitude {c} exceeds the budget {epsilon}")
    if k == 1:
        return float(epsilon)
    return math.sqrt((epsilon**2 - c**2) / (k - 1))


def budget_grid(ks: Sequence[int], cs: Sequence[float], epsilon: float = 0.3) -> np.ndarray:
    return np.array([[budget_table(k, c, epsilon) for c in cs] for k in ks])


@dataclass(frozen=True)
class Variant:
    constrained: bool
    gan_variant: str

    @property
    def name(self) -> str:
        return f"{'constrained' if self.constrained else 'unconstrained'}/{self.gan_variant}"


DEFAULT_VARIANTS = (Variant(True, "wgan-gp"), Variant(False, "wgan-gp"))


@dataclass
class SweepResult:
    epsilons: list[float]
    rates: dict[str, list[float]]
    mean_l2: dict[str, list[float]]
    baseline: float
    configs: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError("epsilon grid must be strictly increasing")

    def rows(self) -> list[dict]:
        out = []
        for name in self.rates:
            for i, eps in enumerate(self.epsilons):
                out.append({"variant": name, "epsilon": eps, "success_rate": self.rates[name][i],
                            "mean_l2": self.mean_l2[name][i]})
        return out


@dataclass(frozen=True)
class SweepExperiment:
    target: object
    train: FlowDataset
    test: FlowDataset
    profile: ConstraintProfile
    attack_config: AttackConfig
    variants: tuple[Variant, ...] = DEFAULT_VARIANTS


def perturbation_sweep(epsilons: Sequence[float], experiment: SweepExperiment) -> SweepResult:
    """One whitebox attack per grid point and variant, all with the experiment's seed.

    A zero budget means no perturbation, so that point reports the target's
    baseline rate on the raw attack flows.
    """
    eps = [float(e) for e in epsilons]
    if not eps:
        raise ValueError("epsilon grid is empty")
    if any(b <= a for a, b in zip(eps, eps[1:])) or eps[0] < 0:
        raise ValueError("epsilon grid must be nonnegative and strictly increasing")
    cls = experiment.profile.attack_class
    train_rows = experiment.train.of_class(cls)
    X_test = experiment.test.of_class(cls).X
    benign = experiment.test.benign_index
    baseline = success_rate(experiment.target, X_test, X_test, benign)
    free = unconstrained_profile(experiment.profile.n, cls)
    rates: dict[str, list[float]] = {}
    norms: dict[str, list[float]] = {}
    for v in experiment.variants:
        profile = experiment.profile if v.constrained else free
        rates[v.name], norms[v.name] = [], []
        for e in eps:
            if e == 0:
                rates[v.name].append(baseline)
                norms[v.name].append(0.0)
                continue
            cfg = replace(experiment.attack_config, epsilon=e, gan_variant=v.gan_variant)
            art = train_nidsgan(cfg, train_rows, experiment.target, profile)
            X_star = art.generate(X_test)
            rates[v.name].append(evasion_rate(experiment.target, X_star, benign) if len(X_test) else 0.0)
            norms[v.name].append(float(np.linalg.norm(X_star - X_test, axis=1).mean()) if len(X_test) else 0.0)
    configs = {"attack": experiment.attack_config.to_dict(), "profile": experiment.profile.digest(),
               "variants": [v.name for v in experiment.variants]}
    return SweepResult(eps, rates, norms, baseline, configs)


@dataclass(frozen=True)
class PlanStep:
    feature: str
    direction: str  # "increase" or "decrease"
    operation: str | None  # None when no packet-level operation is known
    delta: float


@dataclass
class RealizationPlan:
    steps: list[PlanStep]

    @property
    def realizable(self) -> list[PlanStep]:
        return [s for s in self.steps if s.operation is not None]

    @property
    def unrealizable(self) -> list[PlanStep]:
        return [s for s in self.steps if s.operation is None]

    def __len__(self) -> int:
        return len(self.steps)


def operation_for(feature_name: str) -> str | None:
    name = feature_name.lower().replace("_", " ")
    for pattern, op in REALIZATION_RULES:
        if re.search(pattern, name) or re.search(pattern, feature_name.lower()):
            return op
    return None


def realization_plan(
    schema: FeatureSchema,
    x_orig: np.ndarray,
    x_star: np.ndarray,
    threshold: float = 1e-6,
) -> RealizationPlan:
    """Packet-level operation for each feature whose value moved by more than ``threshold``."""
    x_orig = np.asarray(x_orig, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_orig.shape != (schema.n_encoded,) or x_star.shape != x_orig.shape:
        raise ValueError("flow vectors do not match the schema width")
    delta = x_star - x_orig
    steps = []
    for f, (lo, hi) in zip(schema.features, schema.spans()):
        d = delta[lo:hi]
        j = int(np.argmax(np.abs(d)))
        if abs(d[j]) <= threshold:
            continue
        steps.append(PlanStep(f.name, "increase" if d[j] > 0 else "decrease", operation_for(f.name), float(d[j])))
    return RealizationPlan(steps)
