"""Covset files, subject containers, and the synthetic benchmark generator.

A covset is a single JSON document holding every subject's labeled trial
covariances.  Matrices are stored as row-major lower triangles (which
halves the size and makes asymmetry unrepresentable); a full row-major
``dim*dim`` list is also accepted on read and symmetry-checked.  Files
ending in ``.gz`` are read and written gzip-compressed, transparently and
deterministically.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import InputError, ValidationError
from .folds import subject_seed
from .geometry import as_spd, expm, sqrtm, symmetrize

COVSET_VERSION = 1


@dataclass
class SubjectData:
    """One subject's labeled trial covariances plus identity metadata."""

    subject_id: str
    covs: np.ndarray  # (n_trials, dim, dim)
    labels: np.ndarray  # (n_trials,) integer class labels
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.covs.shape[-1]

    @property
    def n_trials(self) -> int:
        return self.covs.shape[0]

    def subset(self, idx) -> "SubjectData":
        return SubjectData(
            subject_id=self.subject_id,
            covs=self.covs[idx],
            labels=self.labels[idx],
            metadata=dict(self.metadata),
        )

    def class_counts(self) -> dict:
        labs, counts = np.unique(self.labels, return_counts=True)
        return {int(k): int(c) for k, c in zip(labs, counts)}


def _tril_indices(dim: int):
    return np.tril_indices(dim)


def _matrix_to_tril(c: np.ndarray) -> list:
    i, j = _tril_indices(c.shape[0])
    return c[i, j].tolist()


def _matrix_from_entry(entry: list, dim: int, where: str) -> np.ndarray:
    flat = np.asarray(entry, dtype=np.float64)
    n_tril = dim * (dim + 1) // 2
    if flat.shape == (n_tril,):
        c = np.zeros((dim, dim))
        i, j = _tril_indices(dim)
        c[i, j] = flat
        c[j, i] = flat
        return c
    if flat.shape == (dim * dim,):
        return flat.reshape(dim, dim)
    raise ValidationError(
        f"{where}: matrix entry has {flat.size} values, expected "
        f"{n_tril} (lower triangle) or {dim * dim} (full)"
    )


def _open_for_read(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def covset_read(path) -> list[SubjectData]:
    """Load and validate a covset file.

    Every trial matrix is symmetry-checked and must be positive definite;
    the error names the offending subject and trial index.
    """
    try:
        with _open_for_read(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed covset JSON at line {exc.lineno}, "
                              f"column {exc.colno}: {exc.msg}") from None
    for key in ("version", "dim", "subjects"):
        if key not in doc:
            raise ValidationError(f"{path}: missing covset field '{key}'")
    if doc["version"] != COVSET_VERSION:
        raise ValidationError(
            f"{path}: unsupported covset version {doc['version']}"
        )
    dim = int(doc["dim"])
    subjects = []
    for sub in doc["subjects"]:
        sid = str(sub["id"])
        covs = []
        labels = []
        for t_idx, trial in enumerate(sub.get("trials", [])):
            where = f"{path}: subject {sid!r} trial {t_idx}"
            c = _matrix_from_entry(trial["matrix"], dim, where)
            covs.append(as_spd(c, what=where))
            labels.append(int(trial["label"]))
        subjects.append(
            SubjectData(
                subject_id=sid,
                covs=np.asarray(covs).reshape(len(covs), dim, dim),
                labels=np.asarray(labels, dtype=np.int64),
                metadata=dict(sub.get("metadata", {})),
            )
        )
    return subjects


def covset_write(path, subjects: list[SubjectData], dim: int | None = None) -> None:
    """Write subjects to a covset file (validating every matrix first)."""
    subjects = list(subjects)
    if dim is None:
        if subjects:
            dim = subjects[0].dim
        else:
            raise InputError("covset_write: empty subject list needs an explicit dim")
    doc = {"version": COVSET_VERSION, "dim": int(dim), "subjects": []}
    for sub in subjects:
        if sub.covs.shape[0] != sub.labels.shape[0]:
            raise ValidationError(
                f"subject {sub.subject_id!r}: {sub.covs.shape[0]} trials but "
                f"{sub.labels.shape[0]} labels"
            )
        trials = []
        for t_idx in range(sub.n_trials):
            where = f"subject {sub.subject_id!r} trial {t_idx}"
            c = as_spd(sub.covs[t_idx], what=where)
            trials.append(
                {"label": int(sub.labels[t_idx]), "matrix": _matrix_to_tril(c)}
            )
        doc["subjects"].append(
            {"id": sub.subject_id, "metadata": sub.metadata, "trials": trials}
        )
    payload = json.dumps(doc, indent=None, separators=(",", ":"))
    if str(path).endswith(".gz"):
        # Fixed mtime and no embedded name keep the compressed output
        # byte-identical across runs and paths.
        with open(path, "wb") as raw:
            with gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as fh:
                fh.write(payload.encode("utf-8"))
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload)


@dataclass
class SynthConfig:
    """Synthetic benchmark layout.

    Subjects draw trials around planted per-class means.  Each subject gets
    a random congruence-plus-rotation domain shift of magnitude
    ``domain_shift_scale``.  ``transferability_structure`` plants groups of
    mutually compatible subjects: group members share a common class-split
    direction (and correlated domain shifts), while different groups use
    class directions with different spectra, which an orthogonal alignment
    cannot reconcile.  Keys:

    - ``n_groups`` (int, default 1): number of compatibility groups,
      assigned round-robin by subject index.
    - ``direction_jitter`` (float, default 0.0): relative perturbation of
      the group class direction per subject.
    - ``shift_jitter`` (float, default 1.0): per-subject fraction of
      ``domain_shift_scale`` drawn independently; the remainder is the
      shared group shift.
    - ``dispersion_jitter`` (float, default 0.0): relative log-uniform
      spread of per-subject trial noise scales.
    - ``separation_jitter`` (float, default 0.0): relative log-uniform
      spread of per-subject class separations, making some subjects
      intrinsically easier than others.
    """

    n_subjects: int
    trials_per_class: int
    dim: int = 9
    class_separation: float = 1.0
    subject_dispersion: float = 0.5
    domain_shift_scale: float = 0.5
    transferability_structure: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1 or self.trials_per_class < 1 or self.dim < 1:
            raise InputError("SynthConfig: counts and dim must be >= 1")
        for name in ("class_separation", "subject_dispersion", "domain_shift_scale"):
            if getattr(self, name) < 0:
                raise InputError(f"SynthConfig: {name} must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"SynthConfig: unknown fields {sorted(unknown)}")
        return cls(**d)


def _random_tangent(rng: np.random.Generator, dim: int, scale: float) -> np.ndarray:
    """Symmetric Gaussian with diagonal variance scale^2 and off-diagonal
    variance scale^2/2 (isotropic for the Frobenius inner product)."""
    g = rng.standard_normal((dim, dim))
    return scale * symmetrize(g)


def _random_orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    sign = np.sign(np.diag(r))
    sign[sign == 0] = 1.0
    return q * sign


def _group_direction(rng: np.random.Generator, dim: int, g: int, n_groups: int) -> np.ndarray:
    """Unit-norm class-split direction for one compatibility group.

    Groups get eigenvalue profiles with different decay rates (and random
    eigenvector frames).  Orthogonal conjugation preserves the spectrum, so
    directions from different groups cannot be rotated onto each other -
    that spectral mismatch is what makes cross-group transfer hard.
    """
    if n_groups == 1:
        w = _random_tangent(rng, dim, 1.0)
        return w / np.linalg.norm(w)
    decay = np.linspace(0.25, 0.95, n_groups)[g]
    vals = decay ** np.arange(dim)
    vals *= np.where(np.arange(dim) % 2 == 0, 1.0, -1.0)
    vals = vals - vals.mean()
    vals /= np.linalg.norm(vals)
    q = _random_orthogonal(rng, dim)
    return q @ np.diag(vals) @ q.T


def _group_assignments(cfg: SynthConfig) -> list[int]:
    ts = cfg.transferability_structure or {}
    if "assignments" in ts:
        groups = [int(g) for g in ts["assignments"]]
        if len(groups) != cfg.n_subjects:
            raise InputError(
                "transferability_structure.assignments must list one group "
                "per subject"
            )
        return groups
    n_groups = int(ts.get("n_groups", 1))
    if n_groups < 1:
        raise InputError("transferability_structure.n_groups must be >= 1")
    return [i % n_groups for i in range(cfg.n_subjects)]


def synth_generate(cfg: SynthConfig) -> list[SubjectData]:
    """Generate a deterministic synthetic covset per the config.

    Per subject s in group g: class means are A_s exp(+/- W_s/2) A_s^T,
    where W_s is the group's class-split direction (optionally jittered)
    scaled to ``class_separation``, and A_s = exp(K) exp(H/2) combines a
    rotation (skew K) and a congruence stretch (symmetric H), each a blend
    of the shared group shift and an independent per-subject part.  Trials
    perturb the class mean by a Gaussian tangent step mapped back through
    the exponential map.
    """
    ts = cfg.transferability_structure or {}
    direction_jitter = float(ts.get("direction_jitter", 0.0))
    shift_jitter = float(ts.get("shift_jitter", 1.0))
    dispersion_jitter = float(ts.get("dispersion_jitter", 0.0))
    separation_jitter = float(ts.get("separation_jitter", 0.0))
    groups = _group_assignments(cfg)
    n_groups = max(groups) + 1

    root = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    dim = cfg.dim

    group_dirs = [_group_direction(root, dim, g, n_groups) for g in range(n_groups)]
    group_skews = []
    group_syms = []
    for _ in range(n_groups):
        k = root.standard_normal((dim, dim))
        group_skews.append(0.5 * (k - k.T))
        group_syms.append(_random_tangent(root, dim, 1.0))

    share = max(0.0, 1.0 - shift_jitter)
    subjects = []
    for s_idx in range(cfg.n_subjects):
        sid = f"S{s_idx:03d}"
        g = groups[s_idx]
        rng = np.random.default_rng(subject_seed(cfg.seed, sid))

        w = group_dirs[g]
        if direction_jitter > 0:
            w = w + direction_jitter * _random_tangent(rng, dim, 1.0 / dim)
            w = w / np.linalg.norm(w)
        separation = cfg.class_separation
        if separation_jitter > 0:
            separation *= float(np.exp(rng.uniform(-separation_jitter, separation_jitter)))
        w = separation * w

        k_own = rng.standard_normal((dim, dim))
        k_own = 0.5 * (k_own - k_own.T)
        h_own = _random_tangent(rng, dim, 1.0)
        skew = cfg.domain_shift_scale * (share * group_skews[g] + shift_jitter * k_own)
        sym = cfg.domain_shift_scale * (share * group_syms[g] + shift_jitter * h_own)
        a = scipy.linalg.expm(skew) @ expm(0.5 * sym)

        noise_scale = cfg.subject_dispersion
        if dispersion_jitter > 0:
            noise_scale *= float(
                np.exp(rng.uniform(-dispersion_jitter, dispersion_jitter))
            )

        covs = []
        labels = []
        for lab, sign in ((1, -0.5), (2, +0.5)):
            s_core = sqrtm(expm(sign * w))
            for _ in range(cfg.trials_per_class):
                z = _random_tangent(rng, dim, noise_scale)
                c_core = s_core @ expm(z) @ s_core
                covs.append(symmetrize(a @ c_core @ a.T))
                labels.append(lab)
        subjects.append(
            SubjectData(
                subject_id=sid,
                covs=np.asarray(covs),
                labels=np.asarray(labels, dtype=np.int64),
                metadata={"origin": "synthetic", "group": g},
            )
        )
    return subjects


def dataset_is_synthetic(subjects: list[SubjectData]) -> bool:
    """True when every subject is stamped as synthetic-origin."""
    return bool(subjects) and all(
        sub.metadata.get("origin") == "synthetic" for sub in subjects
    )
