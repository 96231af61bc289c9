"""Directed irreflexive networks, actor covariates and dyad folds."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

INTERCEPT = "intercept"
CONTINUOUS = "continuous"
BINARY = "binary"
DUMMY = "dummy"


class InputError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Network:
    """Binary directed network with an observation mask.

    ``mask[i, j]`` is True when dyad (i, j) is observed. The diagonal is
    always False. Adjacency values under a False mask are kept (so held-out
    dyads can be scored later) but must not be read by fitting code.
    """

    adjacency: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.adjacency, dtype=np.int8)
        m = np.asarray(self.mask, dtype=bool).copy()
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise InputError("adjacency must be a square matrix")
        if m.shape != y.shape:
            raise InputError("mask shape does not match adjacency")
        np.fill_diagonal(m, False)
        if np.any((y != 0) & (y != 1)):
            raise InputError("adjacency entries must be 0 or 1")
        y = y.copy()
        np.fill_diagonal(y, 0)
        y.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "adjacency", y)
        object.__setattr__(self, "mask", m)

    @classmethod
    def from_adjacency(cls, adjacency):
        y = np.asarray(adjacency)
        mask = ~np.eye(y.shape[0], dtype=bool)
        return cls(y, mask)

    @property
    def n_actors(self):
        return self.adjacency.shape[0]

    @property
    def n_observed(self):
        return int(self.mask.sum())

    @property
    def n_links(self):
        """Number of observed links."""
        return int(self.adjacency[self.mask].sum())

    def density(self):
        if self.n_observed == 0:
            return 0.0
        return self.n_links / self.n_observed

    def is_fully_observed(self):
        return self.n_observed == self.n_actors * (self.n_actors - 1)

    def edges(self):
        """Observed links as a list of 0-based (i, j) pairs in row order."""
        ii, jj = np.nonzero((self.adjacency == 1) & self.mask)
        return list(zip(ii.tolist(), jj.tolist()))


def _lines(source):
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def load_edge_list(source, n_actors):
    """Read "i,j" records (1-based ids) into a fully observed network.

    Blank lines and ``#`` comments are skipped; duplicate records are
    harmless. Self-loops and out-of-range ids raise :class:`InputError`
    naming the offending line.
    """
    if n_actors < 1:
        raise InputError("n_actors must be positive")
    y = np.zeros((n_actors, n_actors), dtype=np.int8)
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.replace("\t", ",").split(",")]
        if len(parts) != 2:
            raise InputError(f"line {lineno}: expected 'source,target', got {raw.strip()!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise InputError(f"line {lineno}: non-integer actor id in {raw.strip()!r}") from None
        for a in (i, j):
            if not 1 <= a <= n_actors:
                raise InputError(f"line {lineno}: actor id {a} outside 1..{n_actors}")
        if i == j:
            raise InputError(f"line {lineno}: self-loop {i},{j} in an irreflexive network")
        y[i - 1, j - 1] = 1
    return Network.from_adjacency(y)


def load_adjacency_matrix(source):
    """Read a dense N x N 0/1 matrix (comma or whitespace separated).

    Diagonal entries are ignored.
    """
    rows = []
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.replace(",", " ").split()
        try:
            rows.append([int(float(t)) for t in tokens])
        except ValueError:
            raise InputError(f"line {lineno}: non-numeric entry") from None
    n = len(rows)
    if n == 0 or any(len(r) != n for r in rows):
        raise InputError("adjacency matrix must be square and non-empty")
    y = np.array(rows)
    np.fill_diagonal(y, 0)
    if np.any((y != 0) & (y != 1)):
        raise InputError("adjacency matrix entries must be 0 or 1")
    return Network.from_adjacency(y)


def write_edge_list(network, stream):
    """Write observed links as 1-based "i,j" lines."""
    for i, j in network.edges():
        stream.write(f"{i + 1},{j + 1}\n")


@dataclass(frozen=True)
class CovariateMatrix:
    values: np.ndarray
    column_names: tuple
    column_kinds: tuple

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise InputError("covariate values must be a 2-d matrix")
        if len(self.column_names) != v.shape[1] or len(self.column_kinds) != v.shape[1]:
            raise InputError("column metadata does not match the covariate matrix")
        kinds = tuple(self.column_kinds)
        if kinds.count(INTERCEPT) != 1:
            raise InputError("exactly one intercept column is required")
        if not np.all(v[:, kinds.index(INTERCEPT)] == 1.0):
            raise InputError("intercept column must be all ones")
        if not np.all(np.isfinite(v)):
            raise InputError("covariates must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "column_kinds", kinds)

    @property
    def n_actors(self):
        return self.values.shape[0]

    @property
    def n_covariates(self):
        return self.values.shape[1]

    @property
    def intercept_index(self):
        return self.column_kinds.index(INTERCEPT)

    @classmethod
    def intercept_only(cls, n_actors):
        return cls(np.ones((n_actors, 1)), ("intercept",), (INTERCEPT,))

    @classmethod
    def from_columns(cls, columns, names=None, kinds=None):
        """Build a design matrix with a prepended intercept.

        ``columns`` is an N x K array of already-encoded covariates (no
        standardisation is applied here).
        """
        cols = np.asarray(columns, dtype=float)
        if cols.ndim == 1:
            cols = cols[:, None]
        k = cols.shape[1]
        names = tuple(names) if names is not None else tuple(f"x{c + 1}" for c in range(k))
        kinds = tuple(kinds) if kinds is not None else (CONTINUOUS,) * k
        vals = np.hstack([np.ones((cols.shape[0], 1)), cols])
        return cls(vals, ("intercept",) + names, (INTERCEPT,) + kinds)


def standardize(column, name="column"):
    """Centre and scale to sample mean 0, sample sd 1 (ddof=1)."""
    x = np.asarray(column, dtype=float)
    if x.size < 2:
        raise InputError(f"{name}: at least two actors are needed to standardise")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise InputError(f"{name}: zero variance, cannot standardise")
    z = (x - x.mean()) / sd
    # one corrective pass keeps mean/sd within 1e-12 for badly scaled input
    z = z - z.mean()
    return z / z.std(ddof=1)


def _parse_schema_entry(name, entry):
    if isinstance(entry, str):
        return {"kind": entry}
    if isinstance(entry, dict) and "kind" in entry:
        return dict(entry)
    raise InputError(f"schema entry for {name!r} must be a kind string or a mapping with 'kind'")


def load_covariates(source, schema, n_actors=None):
    """Read a covariate CSV and encode it into a design matrix.

    Parameters
    ----------
    source : str or text stream
        CSV with a header row and one row per actor, in actor-id order.
    schema : dict
        Maps column name to a kind. Kinds are ``"continuous"`` (standardised),
        ``"binary"`` (0/1, used as is), ``"exclude"`` (dropped) or a mapping
        ``{"kind": "categorical", "baseline": b, "labels": {level: name}}``
        which expands into one dummy column per non-baseline level.
        Columns absent from the schema are an error.
    n_actors : int, optional
        Expected number of rows.
    """
    reader = csv.reader(_lines(source))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InputError("covariate file is empty") from None
    rows = [r for r in reader if any(c.strip() for c in r)]
    if n_actors is not None and len(rows) != n_actors:
        raise InputError(f"covariate file has {len(rows)} rows, expected {n_actors}")
    for k, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise InputError(f"line {k}: expected {len(header)} fields, got {len(r)}")
        for name, c in zip(header, r):
            if c.strip() in ("", "NA", "NaN", "nan"):
                raise InputError(f"line {k}: missing value in column {name!r}")
    unknown = [s for s in schema if s not in header]
    if unknown:
        raise InputError(f"schema names columns not in the file: {unknown}")

    names, kinds, cols = [], [], []
    for c, name in enumerate(header):
        if name not in schema:
            raise InputError(f"column {name!r} has no schema entry")
        spec = _parse_schema_entry(name, schema[name])
        raw = [r[c].strip() for r in rows]
        kind = spec["kind"]
        if kind == "exclude":
            continue
        if kind == CONTINUOUS:
            try:
                x = np.array([float(v) for v in raw])
            except ValueError:
                raise InputError(f"column {name!r}: non-numeric value") from None
            cols.append(standardize(x, name))
            names.append(name)
            kinds.append(CONTINUOUS)
        elif kind == BINARY:
            try:
                x = np.array([float(v) for v in raw])
            except ValueError:
                raise InputError(f"column {name!r}: non-numeric value") from None
            if np.any((x != 0) & (x != 1)):
                raise InputError(f"column {name!r}: binary column must hold 0/1")
            cols.append(x)
            names.append(name)
            kinds.append(BINARY)
        elif kind == "categorical":
            baseline = str(spec.get("baseline"))
            labels = {str(k): v for k, v in spec.get("labels", {}).items()}
            levels = spec.get("levels")
            if levels is None:
                levels = sorted(set(raw) | set(labels), key=_level_key)
            levels = [str(lv) for lv in levels]
            if baseline not in levels:
                raise InputError(f"column {name!r}: baseline {baseline!r} not among levels")
            bad = sorted(set(raw) - set(levels))
            if bad:
                raise InputError(f"column {name!r}: unknown level(s) {bad}")
            for lv in levels:
                if lv == baseline:
                    continue
                cols.append(np.array([1.0 if v == lv else 0.0 for v in raw]))
                names.append(labels.get(lv, f"{name}={lv}"))
                kinds.append(DUMMY)
        else:
            raise InputError(f"column {name!r}: unknown kind {kind!r}")
    n = len(rows)
    if cols:
        return CovariateMatrix.from_columns(np.column_stack(cols), names, kinds)
    return CovariateMatrix.intercept_only(n)


def _level_key(v):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of the off-diagonal dyads into ``n_folds`` folds.

    ``fold_of_dyad`` is an N x N integer matrix holding fold indices 1..k
    off the diagonal and 0 on it.
    """

    n_folds: int
    fold_of_dyad: np.ndarray
    seed: object = None
    sizes: tuple = field(init=False)

    def __post_init__(self):
        f = np.asarray(self.fold_of_dyad, dtype=np.int64)
        f.flags.writeable = False
        object.__setattr__(self, "fold_of_dyad", f)
        counts = np.bincount(f[~np.eye(f.shape[0], dtype=bool)], minlength=self.n_folds + 1)
        object.__setattr__(self, "sizes", tuple(int(c) for c in counts[1:]))

    def dyads(self, fold):
        """0-based (i, j) index arrays of the dyads in ``fold``."""
        return np.nonzero(self.fold_of_dyad == fold)

    def to_csv(self, stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["i", "j", "fold"])
        n = self.fold_of_dyad.shape[0]
        for i in range(n):
            for j in range(n):
                if i != j:
                    w.writerow([i + 1, j + 1, int(self.fold_of_dyad[i, j])])


def make_folds(network, k, seed=None):
    """Uniformly random split of the N(N-1) dyads into k near-equal folds."""
    n = network.n_actors
    n_dyads = n * (n - 1)
    if not 2 <= k <= n_dyads:
        raise InputError(f"number of folds must lie in [2, {n_dyads}], got {k}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n_dyads) % k + 1
    rng.shuffle(labels)
    f = np.zeros((n, n), dtype=np.int64)
    f[~np.eye(n, dtype=bool)] = labels
    return FoldAssignment(k, f, seed)


def mask_fold(network, folds, drop):
    """Copy of ``network`` with every dyad of fold ``drop`` unobserved."""
    if not 1 <= drop <= folds.n_folds:
        raise InputError(f"fold index must lie in [1, {folds.n_folds}], got {drop}")
    if folds.fold_of_dyad.shape != network.mask.shape:
        raise InputError("fold assignment does not match the network size")
    mask = network.mask & (folds.fold_of_dyad != drop)
    return Network(network.adjacency, mask)
