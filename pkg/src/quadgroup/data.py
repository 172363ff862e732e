"""Data containers, validation and CSV ingestion.

Group indices are 1-based on every public surface; conversion to numpy
positions happens through :attr:`GroupSpec.positions`.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``x`` (n x p) and response ``y`` (n,).

    Arrays are copied and made read-only on construction.
    """

    x: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValidationError(f"x must be a matrix, got shape {x.shape}")
        if y.ndim != 1:
            raise ValidationError(f"y must be a vector, got shape {y.shape}")
        n, p = x.shape
        if n != y.shape[0]:
            raise ValidationError(f"x has {n} rows but y has length {y.shape[0]}")
        if n < 2:
            raise ValidationError(f"need at least 2 observations, got {n}")
        if p < 1:
            raise ValidationError("need at least 1 covariate")
        if not np.all(np.isfinite(x)):
            i, j = np.argwhere(~np.isfinite(x))[0]
            raise ValidationError(f"non-finite entry in x at row {i + 1}, column {j + 1}")
        if not np.all(np.isfinite(y)):
            i = int(np.argwhere(~np.isfinite(y))[0][0])
            raise ValidationError(f"non-finite entry in y at row {i + 1}")
        if self.columns is not None and len(self.columns) != p:
            raise ValidationError("column names do not match the number of covariates")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def rows(self, idx: np.ndarray) -> "Dataset":
        """Sub-dataset on the given zero-based row positions."""
        return Dataset(self.x[idx], self.y[idx], self.columns)


@dataclass(frozen=True)
class GroupSpec:
    """Sorted, duplicate-free set of 1-based covariate indices."""

    indices: tuple[int, ...]

    def __post_init__(self):
        raw = [int(i) for i in self.indices]
        if not raw:
            raise ValidationError("group is empty")
        low = min(raw)
        if low < 1:
            raise ValidationError(f"index below 1: {low}")
        if len(set(raw)) != len(raw):
            dup = sorted({i for i in raw if raw.count(i) > 1})
            raise ValidationError(f"duplicate index in group: {dup[0]}")
        object.__setattr__(self, "indices", tuple(sorted(raw)))

    @classmethod
    def range(cls, first: int, last: int) -> "GroupSpec":
        """Inclusive 1-based range ``first..last``."""
        return cls(tuple(range(first, last + 1)))

    @classmethod
    def parse(cls, text: str) -> "GroupSpec":
        """Parse ``"1,2,5"`` or ``"30-200"`` or mixtures such as ``"1-3,9"``."""
        out: list[int] = []
        for part in re.split(r"[,\s;]+", text.strip()):
            if not part:
                continue
            m = re.fullmatch(r"(-?\d+)\s*-\s*(-?\d+)", part)
            try:
                if m:
                    a, b = int(m.group(1)), int(m.group(2))
                    if b < a:
                        raise ValidationError(f"empty range {part!r}")
                    out.extend(range(a, b + 1))
                else:
                    out.append(int(part))
            except ValueError:
                raise ValidationError(f"not an integer index: {part!r}") from None
        return cls(tuple(out))

    @property
    def positions(self) -> np.ndarray:
        """Zero-based column positions."""
        return np.asarray(self.indices, dtype=np.intp) - 1

    @property
    def size(self) -> int:
        return len(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __str__(self) -> str:
        return ";".join(str(i) for i in self.indices)


def validate_group(g: GroupSpec | Iterable[int], p: int) -> GroupSpec:
    """Check ``g`` against ``p`` covariates; return it canonicalized.

    Raises
    ------
    ValidationError
        For an empty group, an index below 1, a duplicate, or an index above p.
    """
    if not isinstance(g, GroupSpec):
        g = GroupSpec(tuple(g))
    if g.indices[-1] > p:
        raise ValidationError(f"index {g.indices[-1]} exceeds p={p}")
    return g


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric positive definite weight ``a`` for the functional b'Ab."""

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError(f"weight matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("weight matrix has non-finite entries")
        scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
        if np.max(np.abs(a - a.T)) > 1e-10 * scale:
            raise ValidationError("weight matrix is not symmetric")
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise ValidationError("weight matrix is not positive definite") from None
        object.__setattr__(self, "a", _frozen((a + a.T) / 2))

    @classmethod
    def identity(cls, k: int) -> "WeightMatrix":
        return cls(np.eye(k))

    @property
    def dim(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class SampleSplit:
    """Random halving of the rows; positions are zero-based."""

    first_half: np.ndarray
    second_half: np.ndarray
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        a = np.asarray(self.first_half, dtype=np.intp)
        b = np.asarray(self.second_half, dtype=np.intp)
        if np.intersect1d(a, b).size:
            raise ValidationError("split halves overlap")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "first_half", a)
        object.__setattr__(self, "second_half", b)

    @property
    def n(self) -> int:
        return self.first_half.size + self.second_half.size


def make_split(n: int, seed) -> SampleSplit:
    """Uniformly random partition of ``n`` rows into sizes floor(n/2), n - floor(n/2).

    ``seed`` may be an int, a ``numpy.random.SeedSequence`` or a Generator.
    """
    if n < 4:
        raise ValidationError(f"sample splitting needs n >= 4, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(n)
    n1 = n // 2
    return SampleSplit(
        np.sort(perm[:n1]),
        np.sort(perm[n1:]),
        seed=seed if isinstance(seed, int) else None,
    )


# ---------------------------------------------------------------------------
# file ingestion


def _parse_cell(text: str, line: int, col: int) -> float:
    s = text.strip()
    if s == "" or s.lower() in {"na", "nan"}:
        return math.nan
    try:
        v = float(s)
    except ValueError:
        raise ValidationError(
            f"non-numeric cell {text!r} at row {line}, column {col}"
        ) from None
    if math.isinf(v):
        raise ValidationError(f"infinite value at row {line}, column {col}")
    return v


def load_dataset(
    path: str | Path,
    header: bool = True,
    response: str | int | None = None,
    drop_incomplete: bool = False,
) -> Dataset:
    """Read a comma-separated numeric table.

    Parameters
    ----------
    path : file path
    header : whether the first line holds column names.
    response : column holding y, either a header name or a 1-based column
        number. Defaults to the column named ``"y"``; a headerless file must
        name the column by number.
    drop_incomplete : drop rows with blank/NA cells instead of failing.

    Rows and columns in error messages are 1-based file coordinates (the
    header, when present, is row 1).
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        records = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if any(c.strip() for c in r)]
    if not records:
        raise ValidationError(f"{path}: file is empty")

    names: list[str] | None = None
    if header:
        names = [c.strip() for c in records[0][1]]
        records = records[1:]
        if not records:
            raise ValidationError(f"{path}: header but no data rows")
    width = len(names) if names is not None else len(records[0][1])

    if response is None:
        if names is None or "y" not in names:
            raise ValidationError(
                f"{path}: missing response column (expected a column named 'y' "
                "or an explicit response column)"
            )
        resp_col = names.index("y")
    elif isinstance(response, int) or str(response).isdigit():
        resp_col = int(response) - 1
        if not 0 <= resp_col < width:
            raise ValidationError(f"{path}: response column {response} out of range 1..{width}")
    else:
        if names is None or response not in names:
            raise ValidationError(f"{path}: missing response column {response!r}")
        resp_col = names.index(response)

    values = np.empty((len(records), width))
    for k, (line, row) in enumerate(records):
        if len(row) != width:
            raise ValidationError(
                f"{path}: ragged row {line}: expected {width} columns, found {len(row)}"
            )
        for j, cell in enumerate(row):
            values[k, j] = _parse_cell(cell, line, j + 1)

    bad = np.isnan(values)
    if bad.any():
        if drop_incomplete:
            values = values[~bad.any(axis=1)]
        else:
            k, j = np.argwhere(bad)[0]
            raise ValidationError(
                f"{path}: blank or missing cell at row {records[k][0]}, column {j + 1}"
            )

    keep = [j for j in range(width) if j != resp_col]
    cols = tuple(names[j] for j in keep) if names is not None else None
    return Dataset(values[:, keep], values[:, resp_col], cols)


def save_dataset(d: Dataset, path: str | Path, header: bool = True) -> None:
    """Write ``d`` as CSV with covariates first and ``y`` last."""
    names = list(d.columns) if d.columns is not None else [f"x{j + 1}" for j in range(d.p)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(names + ["y"])
        for row, yi in zip(d.x, d.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(yi))])


def load_group_file(path: str | Path, p: int | None = None) -> GroupSpec:
    """One 1-based index per line; blank lines and ``#`` comments ignored."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such group file: {path}")
    idx: list[int] = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        try:
            v = int(s)
        except ValueError:
            raise ValidationError(f"{path}: line {line_no}: not an integer index: {s!r}") from None
        if v < 1:
            raise ValidationError(f"{path}: line {line_no}: index below 1: {v}")
        if p is not None and v > p:
            raise ValidationError(f"{path}: line {line_no}: index {v} exceeds p={p}")
        if v in idx:
            raise ValidationError(f"{path}: line {line_no}: duplicate index {v}")
        idx.append(v)
    if not idx:
        raise ValidationError(f"{path}: group file is empty")
    return GroupSpec(tuple(idx))


def load_groups_file(path: str | Path, p: int | None = None) -> list[GroupSpec]:
    """One group per line, comma-separated 1-based indices (ranges allowed)."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such groups file: {path}")
    groups = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        try:
            g = GroupSpec.parse(s)
            if p is not None:
                validate_group(g, p)
        except ValidationError as exc:
            raise ValidationError(f"{path}: line {line_no}: {exc}") from None
        groups.append(g)
    if not groups:
        raise ValidationError(f"{path}: no groups found")
    return groups


def load_matrix(path: str | Path) -> np.ndarray:
    """Headerless numeric CSV into a 2-D array (used for weight matrices)."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return a
