"""Multi-view dataset container, CSV ingestion, masking protocol and synthetic fixtures.

Feature and label matrices are stored densely with explicit boolean masks.
Unobserved entries are zeroed in storage so nothing downstream ever sees a NaN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit


class DataError(ValueError):
    """Raised for malformed, inconsistent or unsatisfiable data."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MultiViewDataset:
    """Views, weak labels and their observation masks.

    ``labels`` holds the training-visible label values (0 where unobserved).
    ``label_truth`` keeps every known label value, including those hidden by
    :func:`apply_label_mask`; ``eval_mask`` marks exactly the hidden entries.
    """

    views: list
    feature_masks: list
    labels: np.ndarray
    label_mask: np.ndarray
    label_truth: np.ndarray = None
    eval_mask: np.ndarray = None

    def __post_init__(self):
        if len(self.views) == 0:
            raise DataError("dataset needs at least one view")
        if len(self.views) != len(self.feature_masks):
            raise DataError("one feature mask per view is required")
        masks = [_frozen(o, bool) for o in self.feature_masks]
        views = [_frozen(np.where(o, x, 0.0)) for x, o in zip(self.views, masks)]
        n = views[0].shape[0]
        for x, o in zip(views, masks):
            if x.ndim != 2 or x.shape[0] != n:
                raise DataError("inconsistent row counts across views")
            if o.shape != x.shape:
                raise DataError("feature mask shape does not match its view")
            if not np.all(np.isfinite(x)):
                raise DataError("observed feature entries must be finite")
        label_mask = _frozen(self.label_mask, bool)
        labels = np.asarray(self.labels, dtype=float)
        if labels.ndim != 2 or labels.shape[0] != n:
            raise DataError("inconsistent row counts between labels and views")
        if label_mask.shape != labels.shape:
            raise DataError("label mask shape does not match labels")
        observed = labels[label_mask]
        if not np.all((observed == 0) | (observed == 1)):
            raise DataError("invalid label value: observed labels must be 0 or 1")
        labels = _frozen(np.where(label_mask, labels, 0.0))
        truth = labels if self.label_truth is None else np.where(
            np.isfinite(self.label_truth), self.label_truth, 0.0)
        eval_mask = np.zeros(labels.shape, bool) if self.eval_mask is None else self.eval_mask
        eval_mask = _frozen(eval_mask, bool)
        if np.any(eval_mask & label_mask):
            raise DataError("evaluation entries overlap training-observed labels")
        row_cover = np.zeros(n, bool)
        for o in masks:
            row_cover |= o.any(axis=1)
        if not row_cover.all():
            raise DataError(
                f"row {int(np.argmin(row_cover))} has zero observed features across all views")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "feature_masks", masks)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "label_mask", label_mask)
        object.__setattr__(self, "label_truth", _frozen(truth))
        object.__setattr__(self, "eval_mask", eval_mask)

    @property
    def n(self) -> int:
        return self.views[0].shape[0]

    @property
    def m(self) -> int:
        return len(self.views)

    @property
    def l(self) -> int:
        return self.labels.shape[1]

    @property
    def dims(self) -> list[int]:
        return [x.shape[1] for x in self.views]


@dataclass(frozen=True)
class MaskSpec:
    r: float = 0.0
    s_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.r < 1.0) or not (0.0 <= self.s_rate < 1.0):
            raise ValueError("removal rates must lie in [0, 1)")


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 200
    m: int = 3
    l: int = 8
    k_true: int = 4
    dims: tuple = (20, 24, 28)
    noise_std: tuple = (0.0, 0.0, 0.0)
    noisy_view_count: int = 0
    positive_rate: float = 0.3
    label_scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        noise = self.noise_std
        if np.isscalar(noise):
            noise = (float(noise),) * len(dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "noise_std", tuple(float(s) for s in noise))
        if len(dims) != self.m or len(self.noise_std) != self.m:
            raise ValueError("dims and noise_std need one entry per view")
        if not self.k_true < min(dims):
            raise ValueError("k_true must be smaller than every view dimension")
        if not 0.0 < self.positive_rate < 1.0:
            raise ValueError("positive_rate must lie in (0, 1)")
        if not 0 <= self.noisy_view_count <= self.m:
            raise ValueError("noisy_view_count out of range")

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


# --------------------------------------------------------------------------
# CSV ingestion


def _read_csv(path: Path) -> np.ndarray:
    if not path.exists():
        raise DataError(f"missing file: {path}")
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                try:
                    rows.append([float(tok) for tok in line.split(",")])
                except ValueError as exc:
                    raise DataError(f"{path}: {exc}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: empty file or ragged rows")
    return np.array(rows, dtype=float)


def _write_csv(path: Path, a: np.ndarray, mask: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row, obs in zip(a, mask):
            fh.write(",".join(repr(float(x)) if o else "NaN" for x, o in zip(row, obs)))
            fh.write("\n")


def load_dataset(manifest_path) -> MultiViewDataset:
    """Load a manifest ``{"views": [...], "labels": ...}`` of header-less CSVs."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"missing file: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        view_files, label_file = manifest["views"], manifest["labels"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest: {exc}") from None
    root = manifest_path.parent
    views = [_read_csv(root / f) for f in view_files]
    y = _read_csv(root / label_file)
    n = views[0].shape[0]
    if any(x.shape[0] != n for x in views) or y.shape[0] != n:
        raise DataError("inconsistent row counts")
    masks = [np.isfinite(x) for x in views]
    label_mask = np.isfinite(y)
    return MultiViewDataset(views=views, feature_masks=masks,
                            labels=np.where(label_mask, y, 0.0), label_mask=label_mask)


def save_dataset(ds: MultiViewDataset, directory) -> Path:
    """Write ``ds`` as manifest + CSVs; returns the manifest path.

    Only training-visible labels are written; hidden ground truth is not.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for v, (x, o) in enumerate(zip(ds.views, ds.feature_masks), start=1):
        names.append(f"view{v}.csv")
        _write_csv(directory / names[-1], x, o)
    _write_csv(directory / "labels.csv", ds.labels, ds.label_mask)
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"views": names, "labels": "labels.csv"}, indent=2) + "\n")
    return manifest


# --------------------------------------------------------------------------
# masking protocol


def apply_feature_mask(ds: MultiViewDataset, spec: MaskSpec, max_resample: int = 1000) -> MultiViewDataset:
    """Remove ``floor(r*n)`` whole sample rows from each view.

    Every sample keeps at least one view with observed entries. A view's
    removal set is resampled until it respects that constraint; after
    ``max_resample`` failures conflicting rows are swapped, lowest index first,
    for the lowest-index rows that can be removed safely.
    """
    n, m = ds.n, ds.m
    n_drop = int(np.floor(spec.r * n))
    if n_drop == 0:
        return ds
    if m * n_drop > (m - 1) * n:
        raise DataError(
            f"feature removal rate r={spec.r} is unsatisfiable: each of {n} samples "
            f"must keep at least one of {m} views")
    rng = np.random.default_rng(spec.seed)
    present = np.stack([o.any(axis=1) for o in ds.feature_masks])  # m x n
    for v in range(m):
        others = present.sum(axis=0) - present[v]
        removable = others > 0
        drop = None
        for _ in range(max_resample):
            cand = rng.choice(n, size=n_drop, replace=False)
            if removable[cand].all():
                drop = np.sort(cand)
                break
        if drop is None:
            drop = np.sort(cand)
            chosen = np.zeros(n, bool)
            chosen[drop] = True
            spare = [i for i in range(n) if removable[i] and not chosen[i]]
            for i in drop:
                if removable[i]:
                    continue
                if not spare:
                    raise DataError(
                        f"feature removal rate r={spec.r} is unsatisfiable for view {v + 1}")
                chosen[i] = False
                chosen[spare.pop(0)] = True
            drop = np.flatnonzero(chosen)
        present[v, drop] = False
    masks = [o & present[v][:, None] for v, o in enumerate(ds.feature_masks)]
    return replace(ds, feature_masks=masks)


def apply_label_mask(ds: MultiViewDataset, spec: MaskSpec) -> MultiViewDataset:
    """Hide ``floor(s*#pos)`` positives and ``floor(s*#neg)`` negatives per label.

    Hidden values stay available through ``label_truth`` / ``eval_mask``.
    """
    if spec.s_rate == 0:
        return ds
    rng = np.random.default_rng(spec.seed)
    mask = ds.label_mask.copy()
    hidden = np.zeros_like(mask)
    for j in range(ds.l):
        for value in (1.0, 0.0):
            idx = np.flatnonzero(mask[:, j] & (ds.labels[:, j] == value))
            k = int(np.floor(spec.s_rate * idx.size))
            if k:
                hidden[rng.choice(idx, size=k, replace=False), j] = True
    truth = np.where(hidden, ds.labels, ds.label_truth)
    return replace(ds, label_mask=mask & ~hidden, label_truth=truth,
                   eval_mask=ds.eval_mask | hidden)


def hide_labels(ds: MultiViewDataset) -> MultiViewDataset:
    """Hide every observed label, moving it into the evaluation set."""
    return replace(ds, label_mask=np.zeros_like(ds.label_mask),
                   label_truth=np.where(ds.label_mask, ds.labels, ds.label_truth),
                   eval_mask=ds.eval_mask | ds.label_mask)


def subset_rows(ds: MultiViewDataset, rows) -> MultiViewDataset:
    rows = np.asarray(rows)
    return MultiViewDataset(
        views=[x[rows] for x in ds.views],
        feature_masks=[o[rows] for o in ds.feature_masks],
        labels=ds.labels[rows], label_mask=ds.label_mask[rows],
        label_truth=ds.label_truth[rows], eval_mask=ds.eval_mask[rows])


def concat_rows(a: MultiViewDataset, b: MultiViewDataset) -> MultiViewDataset:
    if a.dims != b.dims or a.l != b.l:
        raise DataError("datasets have different shapes")
    return MultiViewDataset(
        views=[np.vstack(p) for p in zip(a.views, b.views)],
        feature_masks=[np.vstack(p) for p in zip(a.feature_masks, b.feature_masks)],
        labels=np.vstack([a.labels, b.labels]),
        label_mask=np.vstack([a.label_mask, b.label_mask]),
        label_truth=np.vstack([a.label_truth, b.label_truth]),
        eval_mask=np.vstack([a.eval_mask, b.eval_mask]))


def split_rows(ds: MultiViewDataset, train_fraction: float, seed: int):
    """Random disjoint (train, rest) row partition of sizes floor(f*n) and n - floor(f*n)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = int(np.floor(train_fraction * ds.n))
    if n_train == 0 or n_train == ds.n:
        raise DataError(f"split of {ds.n} rows at {train_fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(ds.n)
    return subset_rows(ds, np.sort(perm[:n_train])), subset_rows(ds, np.sort(perm[n_train:]))


def subsample_rows(ds: MultiViewDataset, size: int, seed: int) -> MultiViewDataset:
    if size >= ds.n:
        return ds
    rows = np.random.default_rng(seed).choice(ds.n, size=size, replace=False)
    return subset_rows(ds, np.sort(rows))


# --------------------------------------------------------------------------
# synthetic fixtures


@dataclass
class PlantedFactors:
    F: np.ndarray
    U: list
    offset: np.ndarray  # per-label logit shift

    clean_views: list = field(default_factory=list)


def synthesize(spec: SyntheticSpec, max_bisect: int = 200):
    """Generate a dataset with planted nonnegative factors.

    The last ``noisy_view_count`` views are Gaussian noise matched in mean and
    spread to the clean view they replace. Labels are Bernoulli draws from
    ``sigmoid(F U_label + b)`` with ``b`` bisected to hit ``positive_rate``.
    Returns ``(dataset, PlantedFactors)``.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.k_true
    F = rng.uniform(0.0, 1.0, size=(spec.n, k))
    U = [rng.uniform(0.0, 1.0, size=(k, d)) for d in spec.dims]
    clean = [F @ u for u in U]
    views = []
    for v, (x, std) in enumerate(zip(clean, spec.noise_std)):
        if v >= spec.m - spec.noisy_view_count:
            views.append(rng.normal(x.mean(), x.std() + std, size=x.shape))
        else:
            views.append(x + std * rng.standard_normal(x.shape) if std > 0 else x.copy())
    u_label = rng.standard_normal((k, spec.l)) * spec.label_scale
    centre = -(F @ u_label).mean(axis=0)
    logits = F @ u_label + centre
    draws = rng.uniform(size=logits.shape)

    def rate(b):
        return float(np.mean(draws < expit(logits + b)))

    lo, hi = -50.0, 50.0
    b = 0.0
    for _ in range(max_bisect):
        b = 0.5 * (lo + hi)
        r = rate(b)
        if abs(r - spec.positive_rate) <= 0.02:
            break
        if r < spec.positive_rate:
            lo = b
        else:
            hi = b
    else:
        raise DataError("bisection failed to reach the target positive rate")
    y = (draws < expit(logits + b)).astype(float)
    ds = MultiViewDataset(views=views, feature_masks=[np.ones(x.shape, bool) for x in views],
                          labels=y, label_mask=np.ones(y.shape, bool))
    return ds, PlantedFactors(F=F, U=U + [u_label], offset=centre + b, clean_views=clean)
