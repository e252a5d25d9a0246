"""Synthetic inductive datasets with one asymmetric, rule-derived relation.

Each "unit" has four fresh entities and the facts

    a -follows-> x -precedes-> b      (the evidence chain)
    a -implies-> b                    (the asymmetric target relation)

plus random ``noise`` edges between entities of different units. Train and
test graphs use disjoint entity sets, so only relations carry over.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .graph import write_triplet_file

TARGET = "implies"
RELATIONS = ("follows", "precedes", TARGET, "near", "likes")
NameTriplet = tuple[str, str, str]


def _units(prefix, n, rng, noise, noise_rels=("near", "likes"), reverse_chain=False):
    facts, targets, ents = [], [], []
    for i in range(n):
        a, x, b, c, y, z = (f"{prefix}{i}_{s}" for s in "axbcyz")
        ents += [a, x, b, c, y, z]
        facts += [(a, "follows", x), (x, "precedes", b), (c, "near", a)]
        if reverse_chain:
            facts += [(b, "precedes", y), (y, "follows", z), (z, "precedes", a)]
        targets.append((a, TARGET, b))
    seen = set(facts) | set(targets)
    added = 0
    while added < noise:
        u, v = rng.choice(len(ents), size=2, replace=False)
        if u // 6 == v // 6:
            continue
        rel = noise_rels[int(rng.integers(len(noise_rels)))]
        trip = (ents[u], rel, ents[v])
        if trip in seen:
            continue
        seen.add(trip)
        facts.append(trip)
        added += 1
    return facts, targets


def asymmetric_dataset(
    n_train: int = 60,
    n_test: int = 40,
    noise: float = 1.0,
    valid_frac: float = 0.2,
    seed: int = 0,
    noise_rels: tuple[str, ...] = ("near", "likes"),
    reverse_chain: bool = False,
) -> dict[str, list[NameTriplet]]:
    """Splits: ``train`` (graph + training positives), ``valid``,
    ``test_graph`` and ``test`` (queries over the test graph)."""
    rng = np.random.default_rng(seed)
    facts, targets = _units("e", n_train, rng, int(noise * n_train), noise_rels, reverse_chain)
    n_valid = int(round(valid_frac * n_train))
    order = rng.permutation(n_train)
    valid = [targets[i] for i in sorted(order[:n_valid])]
    train = facts + [targets[i] for i in sorted(order[n_valid:])]
    t_facts, t_targets = _units("q", n_test, rng, int(noise * n_test), noise_rels, reverse_chain)
    half = n_test // 2
    return {
        "train": train,
        "valid": valid,
        "test_graph": t_facts + t_targets[:half],
        "test": t_targets[half:],
    }


def write_dataset(splits: dict[str, list[NameTriplet]], root: str | Path) -> tuple[Path, Path]:
    """Write GraIL-style directories ``root/train`` and ``root/test_ind``."""
    root = Path(root)
    train_dir, test_dir = root / "train", root / "test_ind"
    train_dir.mkdir(parents=True, exist_ok=True)
    test_dir.mkdir(parents=True, exist_ok=True)
    write_triplet_file(train_dir / "train.txt", splits["train"])
    write_triplet_file(train_dir / "valid.txt", splits["valid"])
    write_triplet_file(test_dir / "train.txt", splits["test_graph"])
    write_triplet_file(test_dir / "test.txt", splits["test"])
    return train_dir, test_dir


def chain_dataset(
    n_chains: int = 8,
    length: int = 12,
    n_test_chains: int = 6,
    valid_frac: float = 0.2,
    query_frac: float = 0.5,
    seed: int = 0,
) -> dict[str, list[NameTriplet]]:
    """Directed chains ``c_0 -next-> c_1 -next-> ...`` with the asymmetric
    relation ``ahead2`` linking ``c_i`` to ``c_{i+2}``.

    Same split keys as :func:`asymmetric_dataset`.
    """
    rng = np.random.default_rng(seed)

    def chains(prefix, n):
        facts, targets = [], []
        for c in range(n):
            names = [f"{prefix}{c}_{i}" for i in range(length)]
            facts += [(names[i], "next", names[i + 1]) for i in range(length - 1)]
            targets += [(names[i], "ahead2", names[i + 2]) for i in range(length - 2)]
        return facts, targets

    facts, targets = chains("c", n_chains)
    order = rng.permutation(len(targets))
    n_valid = int(round(valid_frac * len(targets)))
    valid = [targets[i] for i in sorted(order[:n_valid])]
    train = facts + [targets[i] for i in sorted(order[n_valid:])]
    t_facts, t_targets = chains("t", n_test_chains)
    order = rng.permutation(len(t_targets))
    n_query = int(round(query_frac * len(t_targets)))
    return {
        "train": train,
        "valid": valid,
        "test_graph": t_facts + [t_targets[i] for i in sorted(order[n_query:])],
        "test": [t_targets[i] for i in sorted(order[:n_query])],
    }
