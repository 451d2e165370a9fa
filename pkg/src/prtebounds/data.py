"""Observed data container and CSV input/output."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingDataError, ValidationError


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Rows ``(y, w, z, x)`` with a declared outcome support.

    Parameters
    ----------
    y : array_like
        Outcomes inside ``[y_min, y_max]``.
    w : array_like
        Binary treatment indicators.
    z : array_like
        Instrument values: labels for a discrete instrument, reals for a
        continuous one.
    x : array_like, shape (n, d), optional
        Covariates; ``d = 0`` when absent.
    y_min, y_max : float
    instrument_kind : {"discrete", "continuous"}
    x_names : tuple of str, optional
    """

    y: np.ndarray
    w: np.ndarray
    z: np.ndarray
    x: np.ndarray = None
    y_min: float = 0.0
    y_max: float = 1.0
    instrument_kind: str = "discrete"
    x_names: tuple = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.size
        if n == 0:
            raise ValidationError("dataset is empty")
        w_raw = np.asarray(self.w).ravel()
        if w_raw.size != n:
            raise ValidationError("w has the wrong length")
        if not np.all(np.isin(w_raw.astype(float), (0.0, 1.0))):
            bad = np.flatnonzero(~np.isin(w_raw.astype(float), (0.0, 1.0)))
            raise ValidationError(f"w must be 0/1; offending rows {bad[:10].tolist()}")
        z = np.asarray(self.z).ravel()
        if z.size != n:
            raise ValidationError("z has the wrong length")
        if self.instrument_kind not in ("discrete", "continuous"):
            raise ValidationError("instrument_kind must be 'discrete' or 'continuous'")
        if self.instrument_kind == "continuous":
            z = z.astype(float)
        x = np.zeros((n, 0)) if self.x is None else np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != n:
            raise ValidationError("x has the wrong number of rows")
        if not self.y_min < self.y_max:
            raise ValidationError("need y_min < y_max")
        bad = np.flatnonzero(~np.isfinite(y) | (y < self.y_min) | (y > self.y_max))
        if bad.size:
            raise ValidationError(
                f"{bad.size} outcomes outside [{self.y_min}, {self.y_max}]; "
                f"rows {bad[:10].tolist()}")
        names = tuple(self.x_names) or tuple(f"x{i + 1}" for i in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValidationError("x_names does not match the number of columns")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "w", _frozen(w_raw.astype(np.int8)))
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "x_names", names)

    @property
    def n(self):
        return self.y.size

    def __len__(self):
        return self.n

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.y[idx], self.w[idx], self.z[idx], self.x[idx], self.y_min,
                       self.y_max, self.instrument_kind, self.x_names)

    def with_treatment(self, w) -> "Dataset":
        return Dataset(self.y, w, self.z, self.x, self.y_min, self.y_max,
                       self.instrument_kind, self.x_names)

    def labels(self):
        """Distinct instrument labels in sorted order."""
        return list(np.unique(self.z))

    @property
    def is_binary_outcome(self):
        return bool(np.all(np.isin(self.y, (0.0, 1.0))))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(ds: Dataset, path):
    """Write ``y, w, z, x*`` columns with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["y", "w", "z", *ds.x_names])
        for i in range(ds.n):
            out.writerow([_fmt(ds.y[i]), int(ds.w[i]), _fmt(ds.z[i]),
                          *[_fmt(v) for v in ds.x[i]]])


def load_csv(path, config=None) -> Dataset:
    """Read a dataset from CSV.

    Parameters
    ----------
    path : str or path-like
    config : dict, optional
        Keys ``y_min``, ``y_max`` (default: observed range), ``instrument_kind``
        (default ``"discrete"``) and ``columns``, a mapping from the logical
        names ``y``, ``w``, ``z`` to header names (e.g. ``{"z": "price",
        "w": "purchase", "y": "usage"}``). Covariates are all columns whose
        header starts with ``x`` unless ``x_columns`` is given.
    """
    config = dict(config or {})
    cols = {"y": "y", "w": "w", "z": "z", **config.get("columns", {})}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("CSV file is empty") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    for key in ("y", "w", "z"):
        if cols[key] not in header:
            raise MissingDataError(f"missing column {cols[key]!r}")
    x_cols = config.get("x_columns")
    if x_cols is None:
        x_cols = [h for h in header if h.startswith("x") and h not in cols.values()]
    idx = {h: i for i, h in enumerate(header)}
    y, w, z, x = [], [], [], []
    for r, row in enumerate(rows, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise ValidationError(f"row {r}: expected {len(header)} fields")
        try:
            y.append(float(row[idx[cols["y"]]]))
        except ValueError:
            raise ValidationError(f"row {r}: non-numeric y {row[idx[cols['y']]]!r}") from None
        try:
            wv = float(row[idx[cols["w"]]])
        except ValueError:
            wv = float("nan")
        if wv not in (0.0, 1.0):
            raise ValidationError(f"row {r}: w must be 0 or 1, got {row[idx[cols['w']]]!r}")
        w.append(int(wv))
        z.append(row[idx[cols["z"]]].strip())
        try:
            x.append([float(row[idx[c]]) for c in x_cols])
        except ValueError:
            raise ValidationError(f"row {r}: non-numeric covariate") from None
    if not y:
        raise ValidationError("CSV has no data rows")
    y = np.asarray(y)
    kind = config.get("instrument_kind", "discrete")
    try:
        z_arr = np.asarray([float(v) for v in z])
    except ValueError:
        if kind == "continuous":
            raise ValidationError("continuous instrument must be numeric") from None
        z_arr = np.asarray(z, dtype=object)
    y_min = float(config.get("y_min", y.min()))
    y_max = float(config.get("y_max", y.max()))
    if y_min == y_max:
        y_max = y_min + 1.0
    bad = np.flatnonzero((y < y_min) | (y > y_max))
    if bad.size:
        raise ValidationError(
            f"outcomes outside [{y_min}, {y_max}] on data rows {(bad + 1).tolist()[:20]}")
    x_arr = np.asarray(x, dtype=float).reshape(len(y), len(x_cols))
    return Dataset(y, np.asarray(w), z_arr, x_arr, y_min, y_max, kind, tuple(x_cols))
