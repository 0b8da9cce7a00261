"""Seeded fold construction used throughout the evaluation machinery."""

from __future__ import annotations

import hashlib

import numpy as np

from .exceptions import InputError


def subject_seed(master_seed: int, subject_id: str, *extra: int) -> np.random.SeedSequence:
    """Stable per-subject seed stream derived from a master seed.

    Uses a cryptographic digest of the subject id so the stream does not
    depend on iteration order or on Python's randomized string hash.
    """
    digest = hashlib.sha256(str(subject_id).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([int(master_seed), *words, *extra])


def stratified_folds(labels, n_folds: int, seed) -> list[np.ndarray]:
    """Partition trial indices into ``n_folds`` class-stratified folds.

    Every fold receives at least one trial of every class, so any fold can
    serve as a (small) training split.  Raises if some class has fewer
    trials than folds.  Deterministic given the seed.
    """
    labels = np.asarray(labels)
    if n_folds < 2:
        raise InputError(f"stratified_folds: need >= 2 folds, got {n_folds}")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        if idx.size < n_folds:
            raise InputError(
                f"stratified_folds: class {lab} has {idx.size} trials, "
                f"fewer than {n_folds} folds"
            )
        rng.shuffle(idx)
        for k, chunk in enumerate(np.array_split(idx, n_folds)):
            folds[k].extend(chunk.tolist())
    return [np.sort(np.asarray(f, dtype=np.intp)) for f in folds]


def leave_groups_out_folds(subject_ids, n_folds: int = 10, seed=0) -> list[tuple[list, list]]:
    """Partition subjects into ``n_folds`` disjoint test groups.

    Returns ``(train_ids, test_ids)`` per fold; every subject appears as a
    test subject exactly once.  Deterministic given the seed.
    """
    ids = list(subject_ids)
    if len(ids) < n_folds:
        raise InputError(
            f"leave_groups_out_folds: {len(ids)} subjects < {n_folds} folds"
        )
    if len(set(ids)) != len(ids):
        raise InputError("leave_groups_out_folds: duplicate subject ids")
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(ids)))
    groups = [sorted(ids[i] for i in chunk) for chunk in np.array_split(order, n_folds)]
    folds = []
    for test in groups:
        test_set = set(test)
        train = [s for s in ids if s not in test_set]
        folds.append((train, test))
    return folds
