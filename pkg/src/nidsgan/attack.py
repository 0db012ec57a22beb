"""Constrained GAN attack: generator, critic, losses and the training loop.

The generator maps a flow to a perturbation in [-1, 1]^n. The perturbation is
masked, optionally projected onto the l2 ball of radius epsilon, added to the
flow and clamped into the class ranges; all of this happens inside the
training loop so every emitted flow is compliant by construction.

Sign convention: the critic minimises mean D(x) - mean D(x*) + penalty, so it
scores adversarial flows high and real ones low. The generator therefore adds
+alpha * mean D(x*) to its loss (pushing its outputs toward the real side).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .constraints import ConstraintError, ConstraintProfile
from .flows import FlowDataset, iter_batches
from .nids import NotDifferentiableError

log = logging.getLogger(__name__)

GAN_VARIANTS = ("wgan-gp", "original-gan")


class AttackTrainingError(RuntimeError):
    def __init__(self, message: str, trace: list[dict] | None = None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class AttackConfig:
    alpha: float = 0.1
    beta: float = 0.2
    epsilon: float = 0.3
    lambda_gp: float = 10.0
    learning_rate: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    epochs: int = 800
    batch_size: int = 64
    critic_steps: int = 1
    gan_variant: str = "wgan-gp"
    target_class: str | None = None  # None: the schema's benign label
    seed: int = 0
    early_stop_rate: float | None = 1.0  # None: always run every epoch
    hard_budget: bool = True
    generator_hidden: tuple[int, ...] | None = None
    critic_hidden: tuple[int, ...] | None = None
    leaky_slope: float = 0.2

    def __post_init__(self):
        if min(self.alpha, self.beta, self.epsilon, self.lambda_gp) <= 0:
            raise ValueError("alpha, beta, epsilon and lambda_gp must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.critic_steps < 1:
            raise ValueError("epochs, batch_size and critic_steps must be at least 1")
        if self.gan_variant not in GAN_VARIANTS:
            raise ValueError(f"gan_variant must be one of {GAN_VARIANTS}")
        if self.early_stop_rate is not None and not 0 < self.early_stop_rate <= 1:
            raise ValueError("early_stop_rate must lie in (0, 1]")
        for name in ("generator_hidden", "critic_hidden"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(int(w) for w in v))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("generator_hidden", "critic_hidden"):
            d[k] = list(d[k]) if d[k] is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AttackConfig:
        return cls(**d)


def _mlp(widths: Sequence[int], slope: float) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(widths) - 2:
            layers.append(nn.LeakyReLU(slope))
    return nn.Sequential(*layers)


class Generator(nn.Module):
    """x -> G(x) in [-1, 1]^n. The output layer starts at zero, so G(x) = 0 before training."""

    def __init__(self, n: int, hidden: Sequence[int] | None = None, slope: float = 0.2):
        super().__init__()
        hidden = tuple(hidden) if hidden is not None else (n, n, max(1, n // 2))
        self.widths = (n, *hidden, n)
        self.net = _mlp(self.widths, slope)
        out = self.net[-1]
        nn.init.zeros_(out.weight)
        nn.init.zeros_(out.bias)

    @property
    def n(self) -> int:
        return self.widths[0]

    def forward(self, x):
        return torch.tanh(self.net(x))


class Critic(nn.Module):
    """Scalar score per flow (a logit for the original-GAN variant)."""

    def __init__(self, n: int, hidden: Sequence[int] | None = None, slope: float = 0.2):
        super().__init__()
        hidden = tuple(hidden) if hidden is not None else (n, n, max(1, n // 2))
        self.widths = (n, *hidden, 1)
        self.net = _mlp(self.widths, slope)

    def forward(self, x):
        return self.net(x).squeeze(-1)


def perturbation_loss(delta: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Batch mean of max(0, ||delta||_2 - epsilon)."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return torch.relu(torch.linalg.vector_norm(delta, dim=-1) - epsilon).mean()


def adversarial_loss(classifier, x_star: torch.Tensor, target_class: int) -> torch.Tensor:
    """Mean cross-entropy of the classifier's prediction against ``target_class``."""
    if not getattr(classifier, "differentiable", False):
        raise NotDifferentiableError("adversarial loss needs a differentiable classifier")
    logits = classifier.logits(x_star)
    target = torch.full((len(x_star),), target_class, dtype=torch.long)
    return F.cross_entropy(logits, target)


def input_gradients(critic, x: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
    x = x.detach().requires_grad_(True)
    out = critic(x)
    if not out.requires_grad:
        return torch.zeros_like(x)
    (grad,) = torch.autograd.grad(out.sum(), x, create_graph=create_graph, allow_unused=True)
    return torch.zeros_like(x) if grad is None else grad


def gradient_penalty(critic, x_hat: torch.Tensor, lambda_gp: float) -> torch.Tensor:
    """Batch mean of lambda * (||grad_x D(x_hat)||_2 - 1)^2."""
    grad = input_gradients(critic, x_hat, create_graph=True)
    return lambda_gp * ((torch.linalg.vector_norm(grad, dim=-1) - 1) ** 2).mean()


def interpolate(x: torch.Tensor, x_star: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    sigma = torch.rand((len(x), 1), generator=generator, dtype=x.dtype)
    return sigma * x + (1 - sigma) * x_star


def critic_loss(
    critic,
    x: torch.Tensor,
    x_star: torch.Tensor,
    x_hat: torch.Tensor | None,
    lambda_gp: float,
    variant: str = "wgan-gp",
) -> torch.Tensor:
    if len(x) != len(x_star):
        raise ValueError("real and adversarial batches differ in length")
    d_real, d_fake = critic(x), critic(x_star)
    if variant == "original-gan":
        return F.binary_cross_entropy_with_logits(d_real, torch.ones_like(d_real)) + F.binary_cross_entropy_with_logits(
            d_fake, torch.zeros_like(d_fake)
        )
    return d_real.mean() - d_fake.mean() + gradient_penalty(critic, x_hat, lambda_gp)


def generator_gan_term(critic, x_star: torch.Tensor, variant: str = "wgan-gp") -> torch.Tensor:
    d_fake = critic(x_star)
    if variant == "original-gan":
        return F.binary_cross_entropy_with_logits(d_fake, torch.ones_like(d_fake))
    return d_fake.mean()


def project_l2(delta: torch.Tensor, epsilon: float) -> torch.Tensor:
    norm = torch.linalg.vector_norm(delta, dim=-1, keepdim=True)
    scale = torch.clamp(epsilon / torch.clamp(norm, min=1e-300), max=1.0)
    return delta * scale


@dataclass
class _Bounds:
    """Per-row masks and widened clip bounds for a fixed set of flows."""

    masks: torch.Tensor
    lo: torch.Tensor
    hi: torch.Tensor

    @classmethod
    def build(cls, X: np.ndarray, profile: ConstraintProfile) -> _Bounds:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != profile.n:
            raise ConstraintError(f"flow width {X.shape[1]} does not match profile width {profile.n}")
        lo = np.minimum(profile.ranges.lo, X)
        hi = np.maximum(profile.ranges.hi, X)
        masks = profile.masks_for(X).astype(np.float64)
        return cls(torch.from_numpy(masks), torch.from_numpy(lo), torch.from_numpy(hi))

    def take(self, idx) -> _Bounds:
        return _Bounds(self.masks[idx], self.lo[idx], self.hi[idx])


def _perturb(generator, x: torch.Tensor, b: _Bounds, epsilon: float | None):
    """Returns (x_star, masked delta before projection)."""
    delta = generator(x) * b.masks
    step = project_l2(delta, epsilon) if epsilon is not None else delta
    x_star = torch.minimum(torch.maximum(x + step, b.lo), b.hi)
    return x_star, delta


def generate_adversarial(
    generator: Generator,
    X,
    profile: ConstraintProfile,
    epsilon: float | None = None,
) -> np.ndarray:
    """Masked, (optionally) l2-projected and range-clamped adversarial flows.

    With ``epsilon`` given the masked perturbation is scaled onto the l2 ball
    of that radius before clamping. Clamp bounds are the class ranges widened
    to include each original flow.
    """
    if generator.n != profile.n:
        raise ConstraintError(f"generator width {generator.n} does not match profile width {profile.n}")
    X = np.atleast_2d(np.array(X, dtype=np.float64))
    b = _Bounds.build(X, profile)
    with torch.no_grad():
        x_star, _ = _perturb(generator, torch.from_numpy(X), b, epsilon)
    return x_star.numpy()


@dataclass
class AttackArtifacts:
    generator: Generator
    critic: Critic
    config: AttackConfig
    profile: ConstraintProfile
    trace: list[dict] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def budget(self) -> float | None:
        return self.config.epsilon if self.config.hard_budget else None

    def generate(self, X) -> np.ndarray:
        return generate_adversarial(self.generator, X, self.profile, self.budget)

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        torch.save({"widths": self.generator.widths, "state": self.generator.state_dict()}, d / "generator.pt")
        torch.save({"widths": self.critic.widths, "state": self.critic.state_dict()}, d / "critic.pt")
        (d / "attack_config.json").write_text(json.dumps(self.config.to_dict(), indent=1, sort_keys=True) + "\n")
        self.profile.save(d / "profile.json")
        with open(d / "trace.jsonl", "w") as fh:
            for row in self.trace:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> AttackArtifacts:
        d = Path(directory)
        config = AttackConfig.from_dict(json.loads((d / "attack_config.json").read_text()))
        g_blob = torch.load(d / "generator.pt", weights_only=False)
        c_blob = torch.load(d / "critic.pt", weights_only=False)
        gw, cw = g_blob["widths"], c_blob["widths"]
        gen = Generator(gw[0], gw[1:-1], config.leaky_slope)
        gen.load_state_dict(g_blob["state"])
        critic = Critic(cw[0], cw[1:-1], config.leaky_slope)
        critic.load_state_dict(c_blob["state"])
        trace = [json.loads(line) for line in (d / "trace.jsonl").read_text().splitlines() if line]
        return cls(gen.eval(), critic.eval(), config, ConstraintProfile.load(d / "profile.json"), trace)


def _attack_rows(attack_flows, profile: ConstraintProfile) -> np.ndarray:
    if isinstance(attack_flows, FlowDataset):
        if len(attack_flows) and np.any(attack_flows.y != attack_flows.class_index(profile.attack_class)):
            raise ValueError(f"attack flows must all belong to {profile.attack_class!r}")
        X = attack_flows.X
    else:
        X = np.atleast_2d(np.asarray(attack_flows, dtype=np.float64))
    if len(X) == 0:
        raise ValueError("empty attack set")
    return np.asarray(X, dtype=np.float64)


def _target_index(config: AttackConfig, classifier, attack_flows) -> int:
    labels = tuple(getattr(classifier, "label_set", ()) or ())
    if config.target_class is not None:
        if config.target_class not in labels:
            raise ValueError(f"target class {config.target_class!r} not in classifier labels")
        return labels.index(config.target_class)
    if isinstance(attack_flows, FlowDataset):
        return attack_flows.benign_index
    return 0


def evasion_rate(classifier, X_star: np.ndarray, target_index: int) -> float:
    return float(np.mean(classifier.predict_labels(X_star) == target_index))


def train_nidsgan(
    config: AttackConfig,
    attack_flows,
    classifier,
    profile: ConstraintProfile,
    generator: Generator | None = None,
    critic: Critic | None = None,
) -> AttackArtifacts:
    """Alternate critic and generator updates against a fixed classifier.

    Training ends at ``config.epochs`` or once the evasion rate on the whole
    attack set reaches ``config.early_stop_rate`` (checked before the first
    epoch and after each one). Passing ``generator``/``critic`` continues from
    copies of existing networks.
    """
    X = _attack_rows(attack_flows, profile)
    t = _target_index(config, classifier, attack_flows)
    if not getattr(classifier, "differentiable", False):
        raise NotDifferentiableError("the attack needs a differentiable classifier")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    sigma_gen = torch.Generator().manual_seed(config.seed + 1)
    n = profile.n
    if generator is None:
        generator = Generator(n, config.generator_hidden, config.leaky_slope)
    else:
        generator = _clone(generator)
    if critic is None:
        critic = Critic(n, config.critic_hidden, config.leaky_slope)
    else:
        critic = _clone(critic)
    if generator.n != n:
        raise ConstraintError("generator width does not match profile")
    betas = (config.beta1, config.beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(critic.parameters(), lr=config.learning_rate, betas=betas)

    Xt = torch.from_numpy(X.copy())
    bounds = _Bounds.build(X, profile)
    budget = config.epsilon if config.hard_budget else None
    trace: list[dict] = []

    def snapshot() -> tuple[float, float]:
        with torch.no_grad():
            xs, _ = _perturb(generator, Xt, bounds, budget)
        rate = evasion_rate(classifier, xs.numpy(), t)
        return rate, float(torch.linalg.vector_norm(xs - Xt, dim=-1).mean())

    rate, _ = snapshot()
    stop_at = config.early_stop_rate if config.early_stop_rate is not None else np.inf
    stopped = rate >= stop_at
    for epoch in range(0 if stopped else config.epochs):
        sums = np.zeros(5)
        steps = 0
        for idx in iter_batches(len(X), config.batch_size, rng):
            x, b = Xt[idx], bounds.take(idx)
            for _ in range(config.critic_steps):
                with torch.no_grad():
                    x_star, _ = _perturb(generator, x, b, budget)
                x_hat = interpolate(x, x_star, sigma_gen) if config.gan_variant == "wgan-gp" else None
                loss_d = critic_loss(critic, x, x_star, x_hat, config.lambda_gp, config.gan_variant)
                opt_d.zero_grad()
                loss_d.backward()
                opt_d.step()

            x_star, delta = _perturb(generator, x, b, budget)
            adv = adversarial_loss(classifier, x_star, t)
            gan = generator_gan_term(critic, x_star, config.gan_variant)
            pert = perturbation_loss(delta, config.epsilon)
            loss_g = adv + config.alpha * gan + config.beta * pert
            if not (torch.isfinite(loss_g) and torch.isfinite(loss_d)):
                raise AttackTrainingError(f"non-finite loss at epoch {epoch}", trace)
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()
            sums += [loss_d.item(), loss_g.item(), adv.item(), gan.item(), pert.item()]
            steps += 1
        rate, mean_l2 = snapshot()
        d, g, a, gn, p = (float(v) for v in sums / max(steps, 1))
        trace.append(
            {"epoch": epoch, "critic_loss": d, "generator_loss": g, "adversarial": a, "gan": gn,
             "perturbation": p, "evasion_rate": rate, "mean_l2": mean_l2}
        )
        if rate >= stop_at:
            stopped = True
            break
    generator.eval()
    critic.eval()
    return AttackArtifacts(generator, critic, config, profile, trace, stopped)


def _clone(module: nn.Module) -> nn.Module:
    import copy

    clone = copy.deepcopy(module)
    clone.train()
    return clone


def perturbation_norms(X: np.ndarray, X_star: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(X_star) - np.asarray(X), axis=1)


def with_epsilon(config: AttackConfig, epsilon: float) -> AttackConfig:
    return replace(config, epsilon=epsilon)

