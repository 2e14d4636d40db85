"""Tables, windows, splits, normalization and artificial missingness.

A raw table is ``(n_rows, D)`` values plus a 0/1 mask.  Windows are
``(n, T, D)`` stacks cut from a table at seeded random offsets and kept in
start-time order, so :func:`split` can partition them chronologically.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError, IngestionError
from .masking import DEFAULT_SENTINELS, drop_count, mask_from_sentinel

CACHE_FORMAT = "rdis-dataset-v1"


@dataclass
class Table:
    values: np.ndarray  # (n_rows, D), 0 at missing cells
    mask: np.ndarray  # (n_rows, D)
    columns: list

    @property
    def n_rows(self):
        return self.values.shape[0]


@dataclass
class Normalizer:
    """Per-feature affine scaling fitted on observed cells only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values, mask):
        v = np.asarray(values, dtype=np.float64).reshape(-1, values.shape[-1])
        m = np.asarray(mask, dtype=np.float64).reshape(v.shape)
        n = m.sum(axis=0)
        safe = np.maximum(n, 1.0)
        mean = (v * m).sum(axis=0) / safe
        var = (((v - mean) * m) ** 2).sum(axis=0) / safe
        std = np.sqrt(var)
        # constant or unobserved features are only shifted
        std = np.where((std > 0) & (n > 0), std, 1.0)
        mean = np.where(n > 0, mean, 0.0)
        return cls(mean=mean, std=std)

    def transform(self, values, mask):
        return np.where(mask > 0, (values - self.mean) / self.std, 0.0)

    def inverse(self, values):
        return values * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=np.float64), std=np.asarray(d["std"], dtype=np.float64))


@dataclass
class Dataset:
    values: np.ndarray  # (n, T, D)
    mask: np.ndarray  # (n, T, D)
    starts: np.ndarray  # (n,) row offset of each window
    columns: list
    normalizer: Normalizer | None = None
    name: str = "dataset"

    def __len__(self):
        return self.values.shape[0]

    @property
    def T(self):
        return self.values.shape[1]

    @property
    def D(self):
        return self.values.shape[2]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return replace(self, values=self.values[idx], mask=self.mask[idx], starts=self.starts[idx])


@dataclass
class EvalSet:
    """A split with a held-out fraction of its observed cells.

    ``train_mask`` is what models may see, ``holdout`` the cells scored, and
    ``truth`` carries the original values at the holdout cells (0 elsewhere).
    """

    values: np.ndarray  # inputs, 0 outside train_mask
    mask: np.ndarray  # original observation mask
    train_mask: np.ndarray
    holdout: np.ndarray
    truth: np.ndarray
    rate: float
    seed: object = None

    @property
    def n_holdout(self):
        return int(self.holdout.sum())


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    normalizer: Normalizer = field(default=None)


def load_csv(path, columns=None, exclude=(), sentinels=DEFAULT_SENTINELS):
    """Read a headered UTF-8 CSV into a :class:`Table`.

    ``columns`` selects numeric feature columns by name (default: every
    column not in ``exclude``).  Empty, sentinel and non-numeric cells become
    missing.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise IngestionError(f"{path}: row 1: {exc}") from None
        header = [h.strip() for h in header]
        if columns is None:
            columns = [h for h in header if h not in set(exclude)]
        index = []
        for name in columns:
            if name not in header:
                raise IngestionError(f"{path}: row 1: unknown column {name!r}")
            index.append(header.index(name))
        rows = []
        try:
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise IngestionError(
                        f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}"
                    )
                rows.append([row[i] for i in index])
        except (csv.Error, UnicodeDecodeError) as exc:
            raise IngestionError(f"{path}: row {reader.line_num}: {exc}") from None
    if not rows:
        raise IngestionError(f"{path}: no data rows after the header")
    values, mask = mask_from_sentinel(np.array(rows, dtype=object), sentinels)
    return Table(values=values, mask=mask, columns=list(columns))


def make_windows(table, T=48, n_windows=None, stride=1, seed=0, name="dataset"):
    """Cut ``T``-step windows out of a table.

    Every ``stride``-th row offset is a candidate start.  With ``n_windows``
    set, that many starts are drawn at random (without replacement while the
    candidates last); otherwise all candidates are used.  Starts are sorted.
    """
    if T < 1 or stride < 1:
        raise ContractError(f"T and stride must be positive, got T={T}, stride={stride}")
    if table.n_rows < T:
        raise IngestionError(f"table has {table.n_rows} rows, fewer than T={T}")
    candidates = np.arange(0, table.n_rows - T + 1, stride)
    if n_windows is None:
        starts = candidates
    else:
        if n_windows < 1:
            raise ContractError(f"n_windows must be positive, got {n_windows}")
        rng = np.random.default_rng(seed)
        replace_ = n_windows > candidates.size
        starts = np.sort(rng.choice(candidates, size=n_windows, replace=replace_))
    offsets = starts[:, None] + np.arange(T)[None, :]
    return Dataset(
        values=table.values[offsets].copy(),
        mask=table.mask[offsets].copy(),
        starts=starts.astype(np.int64),
        columns=list(table.columns),
        name=name,
    )


def split_counts(n, fractions=(0.5, 0.25, 0.25)):
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) <= 0:
        raise ContractError(f"split fractions must be three positive parts summing to 1, got {fractions}")
    n_train = int(math.floor(fractions[0] * n + 1e-9))
    n_val = int(math.floor(fractions[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split(dataset, fractions=(0.5, 0.25, 0.25), normalize=True):
    """Chronological train/val/test partition, normalized with train statistics."""
    n = len(dataset)
    if n < 4:
        raise IngestionError(f"need at least 4 windows to split, got {n}")
    order = np.argsort(dataset.starts, kind="stable")
    n_train, n_val, _ = split_counts(n, fractions)
    parts = order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]
    train, val, test = (dataset.subset(p) for p in parts)
    norm = None
    if normalize:
        norm = Normalizer.fit(train.values, train.mask)
        train, val, test = (
            replace(d, values=norm.transform(d.values, d.mask), normalizer=norm) for d in (train, val, test)
        )
    return Splits(train=train, val=val, test=test, normalizer=norm)


def inject_missing(values, mask, p, seed):
    """Hold out ``floor(p% of observed cells)`` chosen uniformly at random.

    ``p`` is a percentage in (0, 100).  The draw is over all observed cells of
    the stack jointly, so the count is exact for the split as a whole.
    """
    if not 0.0 < p < 100.0:
        raise ContractError(f"missing rate must lie in (0, 100), got {p}")
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if values.shape != mask.shape:
        raise DimensionError(f"values {values.shape} and mask {mask.shape} differ")
    observed = np.flatnonzero(mask)
    if observed.size == 0:
        raise DegenerateInputError("no observed cells to hold out")
    k = drop_count(observed.size, p / 100.0)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(observed)[:k]
    holdout = np.zeros_like(mask)
    holdout.flat[chosen] = 1.0
    train_mask = mask - holdout
    return EvalSet(
        values=values * train_mask,
        mask=mask,
        train_mask=train_mask,
        holdout=holdout,
        truth=values * holdout,
        rate=p,
        seed=seed,
    )


def save_cache(path, dataset):
    """Write a dataset to an ``.npz`` with a ``format`` version entry."""
    norm = dataset.normalizer
    np.savez(
        path,
        format=np.array(CACHE_FORMAT),
        name=np.array(dataset.name),
        values=dataset.values,
        mask=dataset.mask,
        starts=dataset.starts,
        columns=np.array(dataset.columns, dtype=str),
        norm_mean=norm.mean if norm is not None else np.zeros(0),
        norm_std=norm.std if norm is not None else np.zeros(0),
    )


def load_cache(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            fmt = str(z["format"]) if "format" in z else None
            if fmt != CACHE_FORMAT:
                raise IngestionError(f"{path}: unsupported cache format {fmt!r}, expected {CACHE_FORMAT!r}")
            norm = None
            if z["norm_mean"].size:
                norm = Normalizer(mean=z["norm_mean"].copy(), std=z["norm_std"].copy())
            return Dataset(
                values=z["values"].copy(),
                mask=z["mask"].copy(),
                starts=z["starts"].copy(),
                columns=[str(c) for c in z["columns"]],
                normalizer=norm,
                name=str(z["name"]),
            )
    except (OSError, ValueError, KeyError) as exc:
        raise IngestionError(f"{path}: cannot read dataset cache ({exc})") from None


def synthetic_sinusoids(n_windows=2000, T=48, D=4, noise=0.1, n_components=3, seed=0):
    """Independent windows of noisy multi-frequency sinusoid mixtures.

    Every window draws its own amplitudes, frequencies and phases; features
    share the window's frequencies but not its phases, so they are related
    without being copies of each other.  Returns a fully observed
    :class:`Dataset` with consecutive integer starts.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)
    freq = rng.uniform(1.0 / T, 6.0 / T, size=(n_windows, 1, n_components))
    amp = rng.uniform(0.5, 1.5, size=(n_windows, D, n_components))
    phase = rng.uniform(0.0, 2 * np.pi, size=(n_windows, D, n_components))
    # (n, T, D): sum over components
    arg = 2 * np.pi * freq[:, None, :, :] * t[None, :, None, None] + phase[:, None, :, :]
    values = (amp[:, None, :, :] * np.sin(arg)).sum(axis=-1)
    values += noise * rng.standard_normal(values.shape)
    return Dataset(
        values=values,
        mask=np.ones_like(values),
        starts=np.arange(n_windows, dtype=np.int64),
        columns=[f"f{d}" for d in range(D)],
        name="synthetic",
    )
