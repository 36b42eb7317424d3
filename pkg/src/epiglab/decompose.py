"""Per-input uncertainty decomposition and the small-vs-large training contrast.

Total predictive uncertainty splits into a reducible part (the mutual
information between label and member identity) and an irreducible part (the
mean member entropy): total = reducible + irreducible, all in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import heads
from .acquisition import _entropy_rows
from .errors import ConfigError, DataError
from .heads import HeadConfig, check_prob_cube


@dataclass(frozen=True)
class Decomposition:
    total: np.ndarray
    reducible: np.ndarray
    irreducible: np.ndarray


def decompose(cube: np.ndarray) -> Decomposition:
    """Split each input's predictive entropy into reducible and irreducible parts."""
    cube = check_prob_cube(cube)
    total = _entropy_rows(cube.mean(axis=0))
    irreducible = _entropy_rows(cube).mean(axis=0)
    return Decomposition(total=total, reducible=total - irreducible,
                         irreducible=irreducible)


def balanced_subset(labels: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Random subset of the given size, balanced by class as evenly as possible."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    base, extra = divmod(size, classes.size)
    bonus = set(rng.permutation(classes.size)[:extra].tolist())
    picks = []
    for rank, cls in enumerate(classes):
        quota = base + (1 if rank in bonus else 0)
        members = np.flatnonzero(labels == cls)
        if members.size < quota:
            raise DataError(
                f"class {cls} has {members.size} labelled examples, need {quota}"
            )
        picks.append(rng.choice(members, size=quota, replace=False))
    return np.sort(np.concatenate(picks))


@dataclass(frozen=True)
class ContrastRow:
    seed: int
    size: int
    input_index: int
    total: float
    reducible: float
    irreducible: float


def size_contrast(config: HeadConfig, features: np.ndarray, labels: np.ndarray,
                  test_features: np.ndarray, n_small: int, n_large: int,
                  seeds, members: int = 200,
                  validation: tuple[np.ndarray, np.ndarray] | None = None,
                  ) -> list[ContrastRow]:
    """Decompose test-input uncertainty after training at two dataset sizes.

    For every seed, fits the head on class-balanced random subsets of n_small
    and n_large labelled examples and decomposes its uncertainty on each test
    input, giving paired scatter rows.
    """
    if n_small > n_large:
        raise ConfigError(f"need n_small <= n_large, got {n_small} vs {n_large}")
    if n_large > np.asarray(labels).shape[0]:
        raise DataError(f"n_large {n_large} exceeds the {len(labels)} labelled examples")

    rows: list[ContrastRow] = []
    for seed in seeds:
        for role, size in enumerate((n_small, n_large)):
            draw = np.random.default_rng(np.random.SeedSequence([seed, role]))
            subset = balanced_subset(labels, size, draw)
            head = heads.fit(config, features[subset], np.asarray(labels)[subset],
                             validation=validation, seed=seed,
                             classes=int(np.asarray(labels).max()) + 1)
            cube = heads.predict_members(head, test_features, members, seed)
            parts = decompose(cube)
            for i in range(test_features.shape[0]):
                rows.append(ContrastRow(
                    seed=int(seed), size=int(size), input_index=i,
                    total=float(parts.total[i]),
                    reducible=float(parts.reducible[i]),
                    irreducible=float(parts.irreducible[i]),
                ))
    return rows


def contrast_csv(rows: list[ContrastRow]) -> str:
    lines = ["seed,size,input_index,total,reducible,irreducible"]
    for r in rows:
        lines.append(
            f"{r.seed},{r.size},{r.input_index},{r.total!r},{r.reducible!r},{r.irreducible!r}"
        )
    return "\n".join(lines) + "\n"
