"""Perturbation masks and per-class valid ranges, plus compliance checks.

A perturbation is first masked (frozen coordinates zeroed) and the perturbed
flow is then clamped into the attacked class's observed feature ranges. An
unperturbed real flow is realizable by definition, so when an original value
already sits outside the fitted range the admissible interval is widened to
include it: the flow may keep that value but is never pushed further out.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .flows import CATEGORICAL, FeatureSchema, FlowDataset

PROTOCOLS = ("tcp", "udp", "icmp", "other")


class ConstraintError(ValueError):
    pass


def build_mask(schema: FeatureSchema, attack_class: str, protocol: str | None = None) -> np.ndarray:
    """0/1 mask over encoded features for one attack class (and optionally a protocol)."""
    if attack_class not in schema.labels:
        raise ConstraintError(f"unknown class {attack_class!r}")
    if protocol is not None and protocol not in PROTOCOLS:
        raise ConstraintError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    semantic = schema.semantic_features(attack_class)
    mask = np.ones(schema.n_encoded, dtype=np.int8)
    for f, (lo, hi) in zip(schema.features, schema.spans()):
        frozen = (
            f.kind == CATEGORICAL
            or f.name in semantic
            or (protocol is not None and f.protocol_tag is not None and f.protocol_tag != protocol)
        )
        if frozen:
            mask[lo:hi] = 0
    return mask


def apply_mask(delta, mask):
    """Hadamard product of a perturbation (or batch of them) with the mask.

    Works on numpy arrays and torch tensors alike.
    """
    if delta.shape[-1] != mask.shape[-1]:
        raise ConstraintError(f"length mismatch: delta {delta.shape[-1]} vs mask {mask.shape[-1]}")
    return delta * mask


@dataclass(frozen=True)
class ValidRanges:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if self.lo.shape != self.hi.shape:
            raise ConstraintError("range bounds differ in length")
        if np.any(self.lo > self.hi):
            raise ConstraintError("d_min must not exceed d_max")

    def __len__(self) -> int:
        return len(self.lo)

    def widened(self, x: np.ndarray) -> ValidRanges:
        """Hull of these ranges and the original flow(s) ``x``."""
        return ValidRanges(np.minimum(self.lo, x), np.maximum(self.hi, x))


def compute_valid_ranges(dataset: FlowDataset, attack_class: str) -> ValidRanges:
    rows = dataset.X[dataset.y == dataset.class_index(attack_class)]
    if len(rows) == 0:
        raise ConstraintError(f"no samples of class {attack_class!r} to fit ranges on")
    return ValidRanges(rows.min(axis=0), rows.max(axis=0))


def clip_to_ranges(x_star, ranges: ValidRanges):
    """Componentwise clamp into ``[d_min, d_max]``; torch tensors pass through torch ops."""
    if x_star.shape[-1] != len(ranges):
        raise ConstraintError(f"length mismatch: flow {x_star.shape[-1]} vs ranges {len(ranges)}")
    if isinstance(x_star, np.ndarray):
        return np.minimum(np.maximum(x_star, ranges.lo), ranges.hi)
    import torch

    lo = torch.as_tensor(ranges.lo, dtype=x_star.dtype)
    hi = torch.as_tensor(ranges.hi, dtype=x_star.dtype)
    return torch.minimum(torch.maximum(x_star, lo), hi)


@dataclass(frozen=True, eq=False)
class ConstraintProfile:
    """Mask and ranges used to attack one class.

    ``protocol_masks`` maps an encoded protocol indicator column to the mask
    that applies to flows carrying that protocol; flows with no indicator set
    use the base ``mask``.
    """

    attack_class: str
    mask: np.ndarray
    ranges: ValidRanges
    provenance: Mapping[str, object] = field(default_factory=dict)
    protocol_masks: tuple[tuple[int, str, np.ndarray], ...] = ()

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.int8)
        if not np.isin(mask, (0, 1)).all():
            raise ConstraintError("mask entries must be 0 or 1")
        if len(mask) != len(self.ranges):
            raise ConstraintError("mask and ranges differ in length")
        if self.ranges.lo.min(initial=0.0) < 0 or self.ranges.hi.max(initial=1.0) > 1:
            raise ConstraintError("ranges must lie inside [0, 1]")
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    @property
    def n(self) -> int:
        return len(self.mask)

    def masks_for(self, X: np.ndarray) -> np.ndarray:
        """Per-row masks, shape ``(rows, n)``."""
        X = np.atleast_2d(X)
        out = np.broadcast_to(self.mask, X.shape).copy()
        for col, _proto, pmask in self.protocol_masks:
            rows = X[:, col] > 0.5
            out[rows] = pmask
        return out

    def to_dict(self) -> dict:
        return {
            "attack_class": self.attack_class,
            "n_features": self.n,
            "perturbable": np.flatnonzero(self.mask).tolist(),
            "ranges": [[float(a), float(b)] for a, b in zip(self.ranges.lo, self.ranges.hi)],
            "protocol_masks": [
                {"column": col, "protocol": proto, "perturbable": np.flatnonzero(m).tolist()}
                for col, proto, m in self.protocol_masks
            ],
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ConstraintProfile:
        n = d["n_features"]

        def mask_of(idx):
            m = np.zeros(n, dtype=np.int8)
            m[list(idx)] = 1
            return m

        rng = np.asarray(d["ranges"], dtype=float).reshape(n, 2)
        return cls(
            attack_class=d["attack_class"],
            mask=mask_of(d["perturbable"]),
            ranges=ValidRanges(rng[:, 0].copy(), rng[:, 1].copy()),
            provenance=d.get("provenance", {}),
            protocol_masks=tuple(
                (p["column"], p["protocol"], mask_of(p["perturbable"])) for p in d.get("protocol_masks", [])
            ),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> ConstraintProfile:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        import hashlib

        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _protocol_columns(schema: FeatureSchema) -> list[tuple[int, str]]:
    out = []
    for f, (lo, _hi) in zip(schema.features, schema.spans()):
        if f.kind != CATEGORICAL or f.name.lower() not in ("protocol_type", "protocol"):
            continue
        from .flows import CICIDS_PROTOCOL_NAMES

        for j, lvl in enumerate(f.levels):
            proto = CICIDS_PROTOCOL_NAMES.get(lvl, lvl.lower())
            out.append((lo + j, proto if proto in PROTOCOLS else "other"))
    return out


def build_profile(
    schema: FeatureSchema,
    fit_on: FlowDataset,
    attack_class: str,
    protocol: str | None = None,
    per_flow_protocol: bool = True,
) -> ConstraintProfile:
    """Mask + ranges for ``attack_class``; ranges come from ``fit_on``'s rows of that class.

    With ``per_flow_protocol`` each flow additionally gets the protocol mask
    matching its own protocol indicator column (if the schema has one).
    """
    mask = build_mask(schema, attack_class, protocol)
    ranges = compute_valid_ranges(fit_on, attack_class)
    pmasks = ()
    if per_flow_protocol and protocol is None:
        pmasks = tuple(
            (col, proto, build_mask(schema, attack_class, proto)) for col, proto in _protocol_columns(schema)
        )
    provenance = {
        "dataset": schema.name,
        "split": fit_on.split_tag,
        "class_samples": int((fit_on.y == fit_on.class_index(attack_class)).sum()),
        "protocol": protocol,
    }
    return ConstraintProfile(attack_class, mask, ranges, provenance, pmasks)


def unconstrained_profile(n: int, attack_class: str) -> ConstraintProfile:
    """Everything perturbable, ranges the whole unit cube."""
    return ConstraintProfile(
        attack_class,
        np.ones(n, dtype=np.int8),
        ValidRanges(np.zeros(n), np.ones(n)),
        {"unconstrained": True},
    )


@dataclass
class ComplianceReport:
    mask_violations: list[int] = field(default_factory=list)
    range_violations: list[tuple[int, float, tuple[float, float]]] = field(default_factory=list)
    semantic_drift: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not (self.mask_violations or self.range_violations or self.semantic_drift)


def validate_flow(
    x_orig: np.ndarray,
    x_star: np.ndarray,
    profile: ConstraintProfile,
    semantic_idx: np.ndarray | None = None,
) -> ComplianceReport:
    """Check one adversarial flow against the profile it was generated under.

    Masked coordinates must be bit-identical to the original; every coordinate
    must lie in the class range widened to include the original value.
    ``semantic_idx`` optionally lists attack-semantic columns reported
    separately as drift.
    """
    x_orig = np.asarray(x_orig, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_orig.shape != (profile.n,) or x_star.shape != (profile.n,):
        raise ConstraintError("flow length does not match the profile")
    report = ComplianceReport()
    mask = profile.masks_for(x_orig)[0]
    changed = x_star != x_orig
    report.mask_violations = np.flatnonzero(changed & (mask == 0)).tolist()
    if semantic_idx is not None:
        report.semantic_drift = [int(i) for i in semantic_idx if changed[i]]
    hull = profile.ranges.widened(x_orig)
    bad = np.flatnonzero((x_star < hull.lo) | (x_star > hull.hi))
    report.range_violations = [
        (int(i), float(x_star[i]), (float(hull.lo[i]), float(hull.hi[i]))) for i in bad
    ]
    return report


def semantic_columns(schema: FeatureSchema, attack_class: str) -> np.ndarray:
    names = schema.semantic_features(attack_class)
    cols = [
        i for f, (lo, hi) in zip(schema.features, schema.spans()) if f.name in names for i in range(lo, hi)
    ]
    return np.asarray(cols, dtype=int)
