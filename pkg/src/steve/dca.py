"""Exact discrete-probability checks for backdoor and disentangled contextual adjustment.

A :class:`DiscreteSCM` holds a finite joint distribution over a context ``C``,
an input ``X`` and an outcome ``Y`` factorised as ``P(C) P(X|C) P(Y|X,C)``.
Context indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DomainError, EmptyGroupError, FormatError, NormalizationError, ValidationError

TOL = 1e-12

INVARIANT = "invariant"
VARIANT = "variant"


@dataclass(frozen=True)
class DiscreteSCM:
    context_prob: np.ndarray  # [K]
    x_given_c: np.ndarray  # [K, nx]
    y_given_xc: np.ndarray  # [K, nx, ny]

    @property
    def K(self) -> int:
        return self.context_prob.shape[0]

    @property
    def nx(self) -> int:
        return self.x_given_c.shape[1]

    @property
    def ny(self) -> int:
        return self.y_given_xc.shape[2]


@dataclass(frozen=True)
class ContextPartition:
    invariant_ids: frozenset[int]
    variant_ids: frozenset[int]

    @classmethod
    def from_invariant(cls, invariant_ids, K: int) -> "ContextPartition":
        inv = frozenset(int(k) for k in invariant_ids)
        return cls(inv, frozenset(range(K)) - inv)

    def swapped(self) -> "ContextPartition":
        return ContextPartition(self.variant_ids, self.invariant_ids)

    def group(self, name: str) -> frozenset[int]:
        if name == INVARIANT:
            return self.invariant_ids
        if name == VARIANT:
            return self.variant_ids
        raise ValueError(f"unknown group {name!r}")

    def validate(self, K: int) -> None:
        if self.invariant_ids & self.variant_ids:
            raise ValidationError(
                f"partition groups overlap on {sorted(self.invariant_ids & self.variant_ids)}"
            )
        if (self.invariant_ids | self.variant_ids) != frozenset(range(K)):
            raise ValidationError(f"partition does not cover contexts 0..{K - 1}")


def _check_simplex(values: np.ndarray, name: str) -> None:
    """Raise unless every row along the last axis is a probability vector."""
    if not np.all(np.isfinite(values)):
        raise NormalizationError(f"{name}: non-finite entries")
    bad = np.argwhere((values < 0) | (values > 1))
    if bad.size:
        raise NormalizationError(f"{name}: entry {tuple(int(i) for i in bad[0])} outside [0, 1]")
    sums = values.sum(axis=-1)
    off = np.argwhere(np.abs(np.atleast_1d(sums) - 1.0) > TOL)
    if off.size:
        row = tuple(int(i) for i in off[0]) if values.ndim > 1 else ()
        total = float(np.atleast_1d(sums)[tuple(off[0])])
        where = f" row {row}" if row else ""
        raise NormalizationError(f"{name}{where} sums to {total!r}, expected 1")


def validate_scm(scm: DiscreteSCM) -> None:
    """Check shapes and normalisation of every conditional table.

    Raises:
        NormalizationError: naming the offending distribution and row.
    """
    K = scm.context_prob.shape[0]
    if scm.context_prob.ndim != 1 or K < 1:
        raise NormalizationError("context_prob must be a non-empty vector")
    if scm.x_given_c.ndim != 2 or scm.x_given_c.shape[0] != K:
        raise NormalizationError(f"x_given_c must have shape [K={K}, nx]")
    nx = scm.x_given_c.shape[1]
    if scm.y_given_xc.ndim != 3 or scm.y_given_xc.shape[:2] != (K, nx):
        raise NormalizationError(f"y_given_xc must have shape [K={K}, nx={nx}, ny]")
    _check_simplex(scm.context_prob, "context_prob")
    _check_simplex(scm.x_given_c, "x_given_c")
    _check_simplex(scm.y_given_xc, "y_given_xc")


def _check_x(scm: DiscreteSCM, x: int) -> int:
    if not (0 <= int(x) < scm.nx) or int(x) != x:
        raise DomainError(f"x={x!r} outside domain 0..{scm.nx - 1}")
    return int(x)


def backdoor_adjust(scm: DiscreteSCM, x: int) -> np.ndarray:
    """P(Y | do(X=x)) = sum_k P(Y | X=x, C=k) P(C=k)."""
    x = _check_x(scm, x)
    return scm.context_prob @ scm.y_given_xc[:, x, :]


def group_mass(scm: DiscreteSCM, ids) -> float:
    ids = sorted(ids)
    return float(scm.context_prob[ids].sum()) if ids else 0.0


def group_weights(scm: DiscreteSCM, ids) -> np.ndarray:
    """Within-group conditional context probabilities P(C=k | C in group)."""
    ids = sorted(ids)
    mass = group_mass(scm, ids)
    if mass <= 0.0:
        raise EmptyGroupError(f"context group {ids} has zero probability mass")
    return scm.context_prob[ids] / mass


def group_conditional(scm: DiscreteSCM, part: ContextPartition, group: str, x: int) -> np.ndarray:
    """P(Y | X=x, C in group): the group's renormalised mixture of context slices."""
    x = _check_x(scm, x)
    ids = sorted(part.group(group))
    weights = group_weights(scm, ids)
    return weights @ scm.y_given_xc[ids, x, :]


def dca_adjust(scm: DiscreteSCM, part: ContextPartition, x: int) -> np.ndarray:
    """Two-group form: P(C in I) P(Y|X, C in I) + P(C in V) P(Y|X, C in V).

    A group with zero mass contributes nothing.
    """
    x = _check_x(scm, x)
    part.validate(scm.K)
    out = np.zeros(scm.ny)
    for group in (INVARIANT, VARIANT):
        mass = group_mass(scm, part.group(group))
        if mass > 0.0:
            out = out + mass * group_conditional(scm, part, group, x)
    return out


def random_scm(seed: int, K: int, nx: int, ny: int) -> DiscreteSCM:
    """Draw every table from a flat Dirichlet; deterministic in ``seed``."""
    if min(K, nx, ny) < 1:
        raise ValidationError("K, nx and ny must all be >= 1")
    rng = np.random.default_rng(seed)

    def simplex(*shape):
        raw = rng.gamma(1.0, size=shape) + 1e-3
        return raw / raw.sum(axis=-1, keepdims=True)

    return DiscreteSCM(simplex(K), simplex(K, nx), simplex(K, nx, ny))


def proper_partitions(K: int) -> Iterator[ContextPartition]:
    """All 2^K - 2 partitions with both groups non-empty."""
    everything = frozenset(range(K))
    for r in range(1, K):
        for inv in itertools.combinations(range(K), r):
            inv = frozenset(inv)
            yield ContextPartition(inv, everything - inv)


def max_dca_deviation(scm: DiscreteSCM, partitions) -> float:
    worst = 0.0
    for part in partitions:
        for x in range(scm.nx):
            dev = np.max(np.abs(dca_adjust(scm, part, x) - backdoor_adjust(scm, x)))
            worst = max(worst, float(dev))
    return worst


def verify_dca(n: int = 100, seed: int = 0, max_k: int = 8, max_card: int = 5,
               exhaustive_k: int = 5, sampled_partitions: int = 32) -> float:
    """Largest elementwise gap between the two adjustment formulas over ``n`` random SCMs.

    Every proper partition is enumerated for K <= ``exhaustive_k``; larger K
    get ``sampled_partitions`` random proper partitions.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n):
        K = int(rng.integers(1, max_k + 1))
        nx = int(rng.integers(1, max_card + 1))
        ny = int(rng.integers(1, max_card + 1))
        scm = random_scm(int(rng.integers(2**31)), K, nx, ny)
        validate_scm(scm)
        if K == 1:
            parts = [ContextPartition(frozenset({0}), frozenset())]
        elif K <= exhaustive_k:
            parts = list(proper_partitions(K))
        else:
            parts = []
            for _ in range(sampled_partitions):
                mask = rng.integers(0, 2, size=K).astype(bool)
                if mask.all() or not mask.any():
                    mask[rng.integers(K)] ^= True
                parts.append(ContextPartition.from_invariant(np.flatnonzero(mask), K))
        worst = max(worst, max_dca_deviation(scm, parts))
    return worst


def save_scm(scm: DiscreteSCM, path, invariant_ids=()) -> None:
    doc = {
        "K": scm.K,
        "nx": scm.nx,
        "ny": scm.ny,
        "context_prob": scm.context_prob.tolist(),
        "x_given_c": scm.x_given_c.tolist(),
        "y_given_xc": scm.y_given_xc.reshape(scm.K * scm.nx, scm.ny).tolist(),
        "invariant_ids": sorted(int(k) for k in invariant_ids),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_scm(path) -> tuple[DiscreteSCM, ContextPartition]:
    """Read an SCM definition file; returns the validated SCM and its partition."""
    try:
        doc = json.loads(Path(path).read_text())
        K, nx, ny = int(doc["K"]), int(doc["nx"]), int(doc["ny"])
        cp = np.asarray(doc["context_prob"], dtype=np.float64)
        xc = np.asarray(doc["x_given_c"], dtype=np.float64)
        yxc = np.asarray(doc["y_given_xc"], dtype=np.float64)
        inv = doc.get("invariant_ids", list(range(K)))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed SCM file ({exc})") from exc
    if cp.shape != (K,) or xc.shape != (K, nx) or yxc.shape != (K * nx, ny):
        raise FormatError(f"{path}: table shapes disagree with K={K}, nx={nx}, ny={ny}")
    scm = DiscreteSCM(cp, xc, yxc.reshape(K, nx, ny))
    validate_scm(scm)
    part = ContextPartition.from_invariant(inv, K)
    part.validate(K)
    return scm, part
