"""Reading and writing CSV data, PCA preprocessing, bundled fixtures and the
two-component simulation scenarios."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .distributions import DataMatrix, as_components, sample_mssal
from .metrics import CrossTab

__all__ = [
    "CsvError",
    "ScenarioSpec",
    "fixture_path",
    "generate_scenario",
    "load_banknotes",
    "load_bench_data",
    "load_crabs",
    "pca_scores",
    "read_csv",
    "read_labels",
    "scenario_params",
    "separation",
    "write_csv",
]

SCENARIOS = ("I", "II", "III")


class CsvError(ValueError):
    """Malformed CSV input; the message names the offending position."""


def _rows(path) -> list[list[str]]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as err:
        raise OSError(f"cannot read {path}: {err.strerror or err}") from err
    if not rows:
        raise CsvError(f"{path}: empty file")
    return rows


def read_csv(path, has_header: bool = True) -> DataMatrix:
    """Parse a numeric CSV file.

    Errors name the 1-based data row (header excluded) and the column name,
    e.g. ``cell (2, "length")``.
    """
    rows = _rows(path)
    if has_header:
        names, body = [c.strip() for c in rows[0]], rows[1:]
    else:
        names, body = [f"x{j + 1}" for j in range(len(rows[0]))], rows
    if not body:
        raise CsvError(f"{path}: no data rows")
    p = len(names)
    values = np.empty((len(body), p))
    for i, row in enumerate(body, start=1):
        if len(row) != p:
            raise CsvError(f"{path}: row {i} has {len(row)} fields, expected {p}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise CsvError(f'{path}: cell ({i}, "{names[j]}") is not a finite number: {cell!r}')
            values[i - 1, j] = v
    return DataMatrix(values, tuple(names))


def read_labels(path, column: int | str = 0, has_header: bool = True) -> NDArray:
    """Read one column of class labels. Integer-looking labels become ints,
    anything else stays a string."""
    rows = _rows(path)
    if has_header:
        header, body = [c.strip() for c in rows[0]], rows[1:]
        if isinstance(column, str):
            if column not in header:
                raise CsvError(f"{path}: no column named {column!r}")
            column = header.index(column)
    else:
        body = rows
        if isinstance(column, str):
            raise CsvError(f"{path}: column names need a header row")
    if not body:
        raise CsvError(f"{path}: no data rows")
    try:
        cells = [r[column].strip() for r in body]
    except IndexError:
        raise CsvError(f"{path}: column {column} missing in some rows") from None
    try:
        return np.array([int(c) for c in cells], dtype=np.int64)
    except ValueError:
        return np.array(cells)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(obj, path, header: Sequence[str] | None = None) -> None:
    """Write a :class:`DataMatrix`, a label vector, a 2-D array or a
    :class:`CrossTab`. Floats use 17 significant digits so values survive a
    round trip through :func:`read_csv` unchanged."""
    if not str(path):
        raise ValueError("output path is empty")
    path = Path(path)
    if isinstance(obj, CrossTab):
        text = obj.to_csv()
    else:
        if isinstance(obj, DataMatrix):
            arr, names = obj.values, list(obj.column_names)
        else:
            arr = np.asarray(obj)
            if arr.ndim == 1:
                arr = arr[:, None]
                names = ["label"]
            else:
                names = [f"x{j + 1}" for j in range(arr.shape[1])]
        names = list(header) if header is not None else names
        rows = [",".join(names)] + [",".join(_fmt(v) for v in row) for row in arr.tolist()]
        text = "\n".join(rows) + "\n"
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror or err}") from err


def pca_scores(
    data: DataMatrix, components: Sequence[int], standardize: bool = False, tol: float = 1e-10
) -> DataMatrix:
    """Project centered data onto principal axes.

    Parameters
    ----------
    components : sequence of int
        1-based indices into the eigenvalues sorted in decreasing order.
    standardize : bool
        Scale each column to unit variance first (correlation-matrix PCA).
    tol : float
        Eigenvalues below ``tol * largest`` count as zero; asking for such
        a component is an error.

    Each eigenvector's sign is chosen so that its largest-magnitude loading
    is positive.
    """
    x = data.values
    p = x.shape[1]
    comps = [int(c) for c in components]
    if not comps:
        raise ValueError("no components requested")
    bad = [c for c in comps if c < 1 or c > p]
    if bad:
        raise ValueError(f"component indices must be in 1..{p}, got {bad}")
    xc = x - x.mean(axis=0)
    if standardize:
        sd = xc.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(p)
        if np.any(sd <= 0):
            raise ValueError("cannot standardize a constant column")
        xc = xc / sd
    cov = np.atleast_2d(np.cov(xc, rowvar=False)) if x.shape[0] > 1 else np.zeros((p, p))
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    rank = int(np.sum(vals > tol * max(vals[0], 0.0))) if vals[0] > 0 else 0
    if max(comps) > rank:
        raise ValueError(f"covariance has rank {rank}; component {max(comps)} is degenerate")
    pick = vecs[:, [c - 1 for c in comps]]
    lead = np.argmax(np.abs(pick), axis=0)
    pick = pick * np.sign(pick[lead, np.arange(pick.shape[1])])
    return DataMatrix(xc @ pick, tuple(f"PC{c}" for c in comps))


# ---------------------------------------------------------------- fixtures


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("mssal") / "fixtures" / name))


def load_crabs() -> tuple[DataMatrix, dict[str, NDArray]]:
    """The 200 x 5 crab morphology measurements with ``sex`` and ``sp``
    (colour form) labels."""
    x = read_csv(fixture_path("crabs.csv"))
    path = fixture_path("crabs_labels.csv")
    labels = {k: read_labels(path, k) for k in ("sex", "sp")}
    return x, labels


def load_banknotes() -> tuple[DataMatrix, NDArray]:
    """The 200 x 6 Swiss banknote measurements with genuine/counterfeit
    labels, read from ``fixtures/banknotes.csv`` (last column ``status``).

    Raises
    ------
    FileNotFoundError
        The fixture is not bundled with this build; see the README.
    """
    path = fixture_path("banknotes.csv")
    if not path.exists():
        raise FileNotFoundError(f"banknote fixture not available: {path}")
    full = read_labels(path, "status")
    rows = _rows(path)
    keep = [j for j, h in enumerate(rows[0]) if h.strip() != "status"]
    names = [rows[0][j].strip() for j in keep]
    vals = np.array([[float(r[j]) for j in keep] for r in rows[1:]])
    return DataMatrix(vals, tuple(names)), full


def load_bench_data() -> DataMatrix:
    """The 30-variable fixture used for timing sweeps."""
    return read_csv(fixture_path("wdbc.csv"))


# --------------------------------------------------------------- scenarios


def scenario_params(scenario: str) -> dict:
    """Pinned generator parameters for a scenario, from ``scenarios.json``."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {', '.join(SCENARIOS)}")
    text = (resources.files("mssal") / "scenarios.json").read_text(encoding="utf-8")
    return json.loads(text)[scenario]


@dataclass(frozen=True)
class ScenarioSpec:
    """A two-component simulation design.

    Data come from ``numpy.random.Generator(PCG64(seed))``; component 1's
    rows are drawn first, then component 2's.
    """

    scenario: str
    n_per_component: int = 100
    seed: int = 0
    params: dict = field(default=None, compare=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n_per_component < 1:
            raise ValueError("n_per_component must be >= 1")
        if self.params is None:
            object.__setattr__(self, "params", scenario_params(self.scenario))


def _moments(family: str, comp: dict) -> tuple[NDArray, NDArray]:
    """Mean and covariance of one component."""
    if family == "gaussian":
        return np.asarray(comp["mean"], float), np.asarray(comp["cov"], float)
    if family == "skew_normal":
        delta = np.asarray(comp["delta"], float)
        low = np.linalg.cholesky(np.asarray(comp["scale"], float))
        c = math.sqrt(2 / math.pi)
        cov_z = np.diag(1 - delta**2) + (1 - 2 / math.pi) * np.outer(delta, delta)
        return np.asarray(comp["xi"], float) + c * low @ delta, low @ cov_z @ low.T
    if family == "mssal":
        (cp,) = as_components([comp])
        alpha = cp.skew_eigen
        cov = cp.d_mat @ np.diag(cp.a_diag + alpha**2) @ cp.d_mat.T
        return cp.mean(), cov
    raise ValueError(f"unknown family {family!r}")


def separation(params: dict) -> float:
    """Distance between the two component means in units of the pooled
    scale ``sqrt(mean of each component's largest covariance eigenvalue)``."""
    (m1, c1), (m2, c2) = (_moments(params["family"], c) for c in params["components"])
    scale = math.sqrt(0.5 * (np.linalg.eigvalsh(c1)[-1] + np.linalg.eigvalsh(c2)[-1]))
    return float(np.linalg.norm(m1 - m2) / scale)


def _draw(family: str, comp: dict, n: int, rng: np.random.Generator) -> NDArray:
    if family == "gaussian":
        return rng.multivariate_normal(comp["mean"], comp["cov"], size=n, method="cholesky")
    if family == "skew_normal":
        # hidden truncation: z_j = delta_j |u0| + sqrt(1 - delta_j^2) u1_j
        delta = np.asarray(comp["delta"], float)
        low = np.linalg.cholesky(np.asarray(comp["scale"], float))
        u0 = np.abs(rng.standard_normal((n, 1)))
        u1 = rng.standard_normal((n, delta.size))
        z = delta * u0 + np.sqrt(1 - delta**2) * u1
        return np.asarray(comp["xi"], float) + z @ low.T
    if family == "mssal":
        (cp,) = as_components([comp])
        return sample_mssal(cp, n, rng).values
    raise ValueError(f"unknown family {family!r}")


def generate_scenario(spec: ScenarioSpec) -> tuple[DataMatrix, NDArray[np.int64]]:
    """Draw a labelled two-component data set; labels are 1 and 2."""
    rng = np.random.default_rng(spec.seed)
    family = spec.params["family"]
    parts = [_draw(family, c, spec.n_per_component, rng) for c in spec.params["components"]]
    labels = np.repeat(np.arange(1, len(parts) + 1), spec.n_per_component)
    return DataMatrix(np.vstack(parts)), labels
