"""Sparse rating data: parsing, serialization, splitting and synthetic generation.

A dataset holds the known entries of a high-dimensional incomplete matrix in
coordinate form. Instances are stored as three parallel read-only arrays so
that the compiled training loop can consume them without copying.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterator, NamedTuple

import numpy as np

from .errors import ConfigError, DuplicateEntryWarning, EmptyDatasetError, ParseError

DELIMITERS = {
    "tab": "\t",
    "comma": ",",
    "::": "::",
    "whitespace": None,
}


class RatingInstance(NamedTuple):
    row_id: int
    col_id: int
    value: float


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HdiDataset:
    """Known entries of an incomplete ``num_rows x num_cols`` matrix.

    ``duplicates_dropped`` records how many earlier occurrences of a repeated
    (row, col) pair the parser discarded; it is metadata and does not take
    part in equality.
    """

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    num_rows: int
    num_cols: int
    duplicates_dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if not (rows.ndim == cols.ndim == values.ndim == 1):
            raise ValueError("rows, cols and values must be 1-d")
        if not (len(rows) == len(cols) == len(values)):
            raise ValueError("rows, cols and values must have equal length")
        if self.num_rows < 1 or self.num_cols < 1:
            raise ValueError("matrix dimensions must be positive")
        if len(rows):
            if rows.min() < 0 or cols.min() < 0:
                raise ValueError("negative node index")
            if rows.max() >= self.num_rows or cols.max() >= self.num_cols:
                raise ValueError("node index outside matrix shape")
            if not np.all(np.isfinite(values)):
                raise ValueError("non-finite rating value")
            keys = rows * self.num_cols + cols
            if len(np.unique(keys)) != len(keys):
                raise ValueError("duplicate (row, col) pair")
        object.__setattr__(self, "rows", _readonly(rows))
        object.__setattr__(self, "cols", _readonly(cols))
        object.__setattr__(self, "values", _readonly(values))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> RatingInstance:
        return RatingInstance(int(self.rows[i]), int(self.cols[i]), float(self.values[i]))

    def __iter__(self) -> Iterator[RatingInstance]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, HdiDataset):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.values, other.values)
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.num_rows, self.num_cols

    @property
    def instances(self) -> list[RatingInstance]:
        return list(self)

    @property
    def value_min(self) -> float:
        return float(self.values.min()) if len(self) else math.nan

    @property
    def value_max(self) -> float:
        return float(self.values.max()) if len(self) else math.nan

    def subset(self, index: np.ndarray) -> HdiDataset:
        index = np.asarray(index, dtype=np.int64)
        return HdiDataset(self.rows[index], self.cols[index], self.values[index],
                          self.num_rows, self.num_cols)

    @classmethod
    def from_instances(cls, instances, num_rows=None, num_cols=None) -> HdiDataset:
        arr = list(instances)
        rows = np.array([r for r, _, _ in arr], dtype=np.int64)
        cols = np.array([c for _, c, _ in arr], dtype=np.int64)
        values = np.array([v for _, _, v in arr], dtype=np.float64)
        if num_rows is None:
            num_rows = int(rows.max()) + 1 if len(rows) else 1
        if num_cols is None:
            num_cols = int(cols.max()) + 1 if len(cols) else 1
        return cls(rows, cols, values, num_rows, num_cols)


@dataclass(frozen=True)
class DataSplit:
    train: HdiDataset
    validation: HdiDataset
    test: HdiDataset


def _split_line(line: str, sep: str | None) -> list[str]:
    if sep is None:
        return line.split()
    return [p.strip() for p in line.split(sep)]


def parse_ratings(
    source: IO[str] | IO[bytes] | str | Path,
    delimiter: str = "whitespace",
    index_base: int | str = "auto",
    shape: tuple[int, int] | None = None,
) -> HdiDataset:
    """Parse a ``row<sep>col<sep>value[<sep>extras...]`` rating file.

    Parameters
    ----------
    source : file object or path
        Text or byte stream, or a filesystem path.
    delimiter : str
        One of ``"tab"``, ``"comma"``, ``"::"``, ``"whitespace"``.
    index_base : {0, 1, "auto"}
        Base of the node indices in the file. ``"auto"`` treats the file as
        0-based if any row or column index is 0, otherwise as 1-based.
    shape : (int, int), optional
        Matrix shape; inferred as ``1 + max index`` when omitted.

    Repeated (row, col) pairs keep the last occurrence; the number dropped is
    reported through a :class:`DuplicateEntryWarning` and stored on the
    result as ``duplicates_dropped``.
    """
    if delimiter not in DELIMITERS:
        raise ConfigError(f"unknown delimiter {delimiter!r}; expected one of {sorted(DELIMITERS)}")
    sep = DELIMITERS[delimiter]

    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return parse_ratings(fh, delimiter, index_base, shape)

    latest: dict[tuple[int, int], float] = {}
    seen = 0
    for line_no, raw in enumerate(source, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = _split_line(line, sep)
        if len(parts) < 3:
            raise ParseError(line_no, f"expected at least 3 fields, got {len(parts)}")
        try:
            row, col = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(line_no, f"non-integer index in {line!r}") from None
        try:
            value = float(parts[2])
        except ValueError:
            raise ParseError(line_no, f"non-numeric value {parts[2]!r}") from None
        if not math.isfinite(value):
            raise ParseError(line_no, f"non-finite value {parts[2]!r}")
        key = (row, col)
        # re-insert so the surviving entry takes the position of the last occurrence
        latest.pop(key, None)
        latest[key] = value
        seen += 1

    if not latest:
        raise EmptyDatasetError("no rating instances in input")

    keys = np.array(list(latest.keys()), dtype=np.int64)
    rows, cols = keys[:, 0], keys[:, 1]
    values = np.fromiter(latest.values(), dtype=np.float64, count=len(latest))

    if index_base == "auto":
        index_base = 0 if (rows.min() == 0 or cols.min() == 0) else 1
    if index_base not in (0, 1):
        raise ConfigError(f"index_base must be 0, 1 or 'auto', got {index_base!r}")
    rows = rows - index_base
    cols = cols - index_base
    if rows.min() < 0 or cols.min() < 0:
        raise ParseError(0, "index below declared base")

    if shape is None:
        shape = (int(rows.max()) + 1, int(cols.max()) + 1)

    dropped = seen - len(latest)
    if dropped:
        warnings.warn(f"{dropped} duplicate (row, col) entries replaced by later occurrences",
                      DuplicateEntryWarning, stacklevel=2)
    return HdiDataset(rows, cols, values, shape[0], shape[1], duplicates_dropped=dropped)


def serialize(dataset: HdiDataset, out: IO[str] | None = None) -> str | None:
    """Write the canonical ``row\\tcol\\tvalue`` form (0-based, round-trip precision)."""
    buf = out if out is not None else io.StringIO()
    for r, c, v in zip(dataset.rows.tolist(), dataset.cols.tolist(), dataset.values.tolist()):
        buf.write(f"{r}\t{c}\t{v!r}\n")
    if out is None:
        return buf.getvalue()
    return None


def read_canonical(path: str | Path, shape: tuple[int, int] | None = None) -> HdiDataset:
    return parse_ratings(path, delimiter="tab", index_base=0, shape=shape)


def write_canonical(dataset: HdiDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        serialize(dataset, fh)


def density(dataset: HdiDataset) -> float:
    return len(dataset) / (dataset.num_rows * dataset.num_cols)


def _permutation(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def split_dataset(dataset: HdiDataset, fractions=(0.7, 0.2, 0.1), seed: int = 0) -> DataSplit:
    """Shuffle and partition into (train, test, validation) by ``fractions``.

    Train and test counts are ``floor(fraction * n)``; validation takes the
    remainder. Each part keeps the source order of its instances.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigError("fractions must be (train, test, validation)")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    n = len(dataset)
    # small slack so that e.g. 0.7 * 10 does not floor to 6 after rounding error
    n_train = min(n, math.floor(fractions[0] * n + 1e-9))
    n_test = min(n - n_train, math.floor(fractions[1] * n + 1e-9))
    if n_train == 0:
        raise ConfigError(f"fractions {fractions} leave an empty training set for {n} instances")
    perm = _permutation(n, seed)
    train = np.sort(perm[:n_train])
    test = np.sort(perm[n_train:n_train + n_test])
    valid = np.sort(perm[n_train + n_test:])
    return DataSplit(dataset.subset(train), dataset.subset(valid), dataset.subset(test))


def kfold(dataset: HdiDataset, k: int = 5, seed: int = 0) -> list[DataSplit]:
    """k rotating splits: fold i is test, fold i+1 validation, the rest train."""
    if k < 3:
        raise ConfigError(f"k-fold needs k >= 3 (one test, one validation, >= 1 train fold), got {k}")
    if k > len(dataset):
        raise ConfigError(f"k={k} exceeds the number of instances ({len(dataset)})")
    folds = np.array_split(_permutation(len(dataset), seed), k)
    splits = []
    for i in range(k):
        j = (i + 1) % k
        train = np.sort(np.concatenate([folds[t] for t in range(k) if t not in (i, j)]))
        splits.append(DataSplit(
            train=dataset.subset(train),
            validation=dataset.subset(np.sort(folds[j])),
            test=dataset.subset(np.sort(folds[i])),
        ))
    return splits


def make_low_rank(
    num_rows: int,
    num_cols: int,
    rank: int,
    density: float,
    noise: float = 0.0,
    seed: int = 0,
    mean: float = 3.0,
) -> HdiDataset:
    """Sample observed entries of a random nonnegative rank-``rank`` matrix.

    Ground-truth factors are uniform on ``(0, a)`` with ``a`` chosen so the
    expected entry equals ``mean``; ``noise`` is the standard deviation of
    additive Gaussian noise. The observed set is a uniform random
    sample of ``max(1, round(density * num_rows * num_cols))`` cells drawn
    without replacement.
    """
    if not 0 < density <= 1:
        raise ConfigError("density must lie in (0, 1]")
    if rank < 1:
        raise ConfigError("rank must be positive")
    rng = np.random.default_rng(seed)
    a = math.sqrt(4.0 * mean / rank)
    u = rng.uniform(0.0, a, size=(num_rows, rank))
    v = rng.uniform(0.0, a, size=(num_cols, rank))
    total = num_rows * num_cols
    count = max(1, round(density * total))
    cells = np.sort(rng.choice(total, size=count, replace=False))
    rows, cols = np.divmod(cells, num_cols)
    values = np.einsum("ij,ij->i", u[rows], v[cols])
    if noise > 0:
        values = values + rng.normal(0.0, noise, size=values.shape)
    return HdiDataset(rows, cols, values, num_rows, num_cols)


def make_rating_like(
    num_rows: int,
    num_cols: int,
    num_ratings: int,
    rank: int = 5,
    seed: int = 0,
    global_mean: float = 3.5,
    row_bias_sd: float = 0.4,
    col_bias_sd: float = 0.5,
    factor_sd: float = 0.45,
    noise: float = 0.8,
    popularity_exponent: float = 0.8,
    levels: tuple[float, float] = (1.0, 5.0),
) -> HdiDataset:
    """Integer ratings in ``levels`` mimicking an explicit-feedback recommender dump.

    The latent score is ``mean + row bias + col bias + <u_m, v_n> + noise``,
    rounded and clipped to the rating levels. Column popularity follows a
    Zipf-like law with the given exponent and every row rates at least one
    column, so observed entries are skewed the way real rating logs are.
    """
    if num_ratings > num_rows * num_cols:
        raise ConfigError("more ratings requested than matrix cells")
    rng = np.random.default_rng(seed)
    row_bias = rng.normal(0.0, row_bias_sd, num_rows)
    col_bias = rng.normal(0.0, col_bias_sd, num_cols)
    u = rng.normal(0.0, factor_sd / math.sqrt(math.sqrt(rank)), (num_rows, rank))
    v = rng.normal(0.0, factor_sd / math.sqrt(math.sqrt(rank)), (num_cols, rank))

    col_p = 1.0 / np.arange(1, num_cols + 1) ** popularity_exponent
    col_p = col_p[rng.permutation(num_cols)]
    col_p /= col_p.sum()
    row_p = rng.lognormal(0.0, 1.0, num_rows)
    row_p /= row_p.sum()

    chosen: set[int] = set()
    for m in range(num_rows):
        chosen.add(m * num_cols + int(rng.choice(num_cols, p=col_p)))
    while len(chosen) < num_ratings:
        k = 2 * (num_ratings - len(chosen))
        ms = rng.choice(num_rows, size=k, p=row_p)
        ns = rng.choice(num_cols, size=k, p=col_p)
        for cell in (ms * num_cols + ns).tolist():
            chosen.add(cell)
            if len(chosen) == num_ratings:
                break
    cells = np.sort(np.fromiter(chosen, dtype=np.int64, count=len(chosen)))
    rows, cols = np.divmod(cells, num_cols)
    score = (global_mean + row_bias[rows] + col_bias[cols]
             + np.einsum("ij,ij->i", u[rows], v[cols]) + rng.normal(0.0, noise, len(cells)))
    values = np.clip(np.rint(score), *levels)
    return HdiDataset(rows, cols, values, num_rows, num_cols)


# Named presets used by the benchmark scripts, the CLI and the acceptance tests.
PRESETS = {
    "tiny": dict(num_rows=20, num_cols=15, rank=2, density=0.7, noise=0.0, seed=0),
    "small": dict(num_rows=200, num_cols=150, rank=4, density=0.2, noise=0.1, seed=1),
}

RATING_PRESETS = {
    "ml100k": dict(num_rows=943, num_cols=1682, num_ratings=100_000, rank=5, seed=2),
}


def bundled_dataset(name: str) -> HdiDataset:
    if name in PRESETS:
        return make_low_rank(**PRESETS[name])
    if name in RATING_PRESETS:
        return make_rating_like(**RATING_PRESETS[name])
    raise ConfigError(f"unknown bundled dataset {name!r}; choose from {sorted(PRESETS) + sorted(RATING_PRESETS)}")
