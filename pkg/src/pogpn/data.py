"""Datasets, standardisation and evaluation metrics.

Loaders validate user-supplied files and never download anything.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .graph import Dataset

LOG_2PI = math.log(2.0 * math.pi)


class DataError(ValueError):
    """Malformed or missing dataset."""


# ---------------------------------------------------------------------------
# standardisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StandardizationRecord:
    """``z = (g(v) - mean) / std`` with ``g = log`` when ``log`` is set."""

    column: str
    log: bool
    mean: float
    std: float

    @classmethod
    def fit(cls, column: str, values: np.ndarray, log: bool = False) -> StandardizationRecord:
        v = np.asarray(values, dtype=np.float64)
        v = v[~np.isnan(v)]
        if log:
            if np.any(v <= 0):
                raise DataError(f"column {column!r}: non-positive value before log transform")
            v = np.log(v)
        std = float(v.std())
        if not std > 0:
            raise DataError(f"column {column!r}: zero spread, cannot standardise")
        return cls(column=column, log=log, mean=float(v.mean()), std=std)

    def apply(self, values: Any) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        if self.log:
            v = np.log(v)
        return (v - self.mean) / self.std

    def invert(self, z: Any) -> np.ndarray:
        v = np.asarray(z, dtype=np.float64) * self.std + self.mean
        return np.exp(v) if self.log else v

    def to_dict(self) -> dict:
        return asdict(self)


def standardize_columns(Y: np.ndarray, names: Sequence[str], fit_rows: np.ndarray,
                        log: bool = False) -> tuple[np.ndarray, list[StandardizationRecord]]:
    records = [StandardizationRecord.fit(n, Y[fit_rows, j], log) for j, n in enumerate(names)]
    Z = np.column_stack([r.apply(Y[:, j]) for j, r in enumerate(records)])
    return Z, records


# ---------------------------------------------------------------------------
# synthetic system
# ---------------------------------------------------------------------------

THRESHOLD = 1.5


def synth_f1(x: Any) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return -np.sin(10.0 * np.pi * (x + 1.0)) / (2.0 * x + 1.0) - x**4


def synth_f2(x: Any) -> np.ndarray:
    return np.cos(synth_f1(x)) ** 2 + np.sin(3.0 * np.asarray(x, dtype=np.float64))


def synth_f3(x: Any) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    f1, f2 = synth_f1(x), synth_f2(x)
    offset = np.where(f2 < THRESHOLD, -2.5, 2.5)
    return f2 * f1**2 + 3.0 * x + offset


def synth_truth(x: Any) -> dict[str, np.ndarray]:
    """Noise-free latent functions and the deterministic class label."""
    f2 = synth_f2(x)
    return {"f1": synth_f1(x), "f2": f2, "f3": synth_f3(x), "y2": (f2 >= THRESHOLD).astype(np.float64)}


def synth_test_inputs(n: int = 200) -> np.ndarray:
    """Cell midpoints ``(i + 0.5) / n``; never coincide with an equally spaced training grid."""
    return (np.arange(n) + 0.5) / n


@dataclass
class SynthData:
    train: Dataset
    test: Dataset
    truth_train: dict[str, np.ndarray]
    truth_test: dict[str, np.ndarray]


def synth_generate(n_train: int = 40, noise_seed: int = 0, *, n_test: int = 200, noise: float = 0.1,
                   noise_is_variance: bool = True, standardize: bool = True) -> SynthData:
    """Sample the three-stage synthetic process.

    Training inputs are ``n_train`` equally spaced points on [0, 1]; test
    inputs are ``synth_test_inputs(n_test)``.  The continuous channels get
    additive Gaussian noise (``noise`` is a variance unless
    ``noise_is_variance`` is false); the class channel is noise free.
    Continuous columns are z-scored with training statistics.
    """
    sd = math.sqrt(noise) if noise_is_variance else noise
    rng = np.random.default_rng(noise_seed)
    x_tr = np.linspace(0.0, 1.0, n_train)
    x_te = synth_test_inputs(n_test)
    t_tr, t_te = synth_truth(x_tr), synth_truth(x_te)
    y1_tr = t_tr["f1"] + sd * rng.standard_normal(n_train)
    y3_tr = t_tr["f3"] + sd * rng.standard_normal(n_train)
    y1_te = t_te["f1"] + sd * rng.standard_normal(n_test)
    y3_te = t_te["f3"] + sd * rng.standard_normal(n_test)
    records: dict[str, list[StandardizationRecord]] = {}
    if standardize:
        r1 = StandardizationRecord.fit("y1", y1_tr)
        r3 = StandardizationRecord.fit("y3", y3_tr)
    else:
        r1 = StandardizationRecord("y1", False, 0.0, 1.0)
        r3 = StandardizationRecord("y3", False, 0.0, 1.0)
    records = {"f1": [r1], "f3": [r3]}

    def build(x, y1, y2, y3):
        return Dataset(X=x[:, None], Y={"f1": r1.apply(y1), "f2": y2, "f3": r3.apply(y3)},
                       standardization=records)

    return SynthData(
        train=build(x_tr, y1_tr, t_tr["y2"], y3_tr),
        test=build(x_te, y1_te, t_te["y2"], y3_te),
        truth_train=t_tr,
        truth_test=t_te,
    )


SYNTH_COLUMNS = ["x", "y1", "y2", "y3"]


def write_synth_csv(path: str | Path, x: np.ndarray, y1: np.ndarray, y2: np.ndarray, y3: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SYNTH_COLUMNS)
        for row in zip(x, y1, y2, y3):
            w.writerow([repr(float(v)) for v in row])


def load_synth_csv(path: str | Path, records: dict[str, list[StandardizationRecord]] | None = None) -> Dataset:
    """Read a synthetic CSV in original units; standardise with ``records`` or fit new ones."""
    table = read_table(path)
    missing = [c for c in SYNTH_COLUMNS if c not in table]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    y1, y3 = table["y1"], table["y3"]
    if records is None:
        records = {"f1": [StandardizationRecord.fit("y1", y1)], "f3": [StandardizationRecord.fit("y3", y3)]}
    return Dataset(
        X=table["x"][:, None],
        Y={"f1": records["f1"][0].apply(y1), "f2": table["y2"], "f3": records["f3"][0].apply(y3)},
        standardization=records,
    )


# ---------------------------------------------------------------------------
# generic table reading
# ---------------------------------------------------------------------------


def read_table(path: str | Path) -> dict[str, np.ndarray]:
    """Numeric columns of a comma- or whitespace-delimited file with a header row.

    Header names are lower-cased.  Empty cells and ``nan`` become NaN.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty file")
    split = (lambda s: [c.strip() for c in s.split(",")]) if "," in lines[0] else str.split
    header = [h.strip().strip('"').lower() for h in split(lines[0])]
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        cells = split(ln)
        if len(cells) != len(header):
            raise DataError(f"{path}:{i}: expected {len(header)} fields, got {len(cells)}")
        try:
            rows.append([float(c) if c not in ("", "NA") else np.nan for c in cells])
        except ValueError as exc:
            raise DataError(f"{path}:{i}: {exc}") from None
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return {h: data[:, j] for j, h in enumerate(header)}


def _column(table: dict[str, np.ndarray], names: Sequence[str], path: Any) -> np.ndarray:
    for n in names:
        if n in table:
            return table[n]
    raise DataError(f"{path}: missing column {names[0]!r}")


# ---------------------------------------------------------------------------
# Jura
# ---------------------------------------------------------------------------

JURA_TRAIN_ROWS = 259
JURA_VALID_ROWS = 100
JURA_ROCK_CLASSES = 5
JURA_LAND_CLASSES = 4
JURA_MINERALS = ("ni", "zn", "cd")


@dataclass
class JuraData:
    """Training data over all 359 locations with Cd hidden on the last 100.

    ``cd_truth`` holds the hidden Cd values in original units; ``test_rows``
    indexes those rows in ``train``.
    """

    train: Dataset
    cd_truth: np.ndarray
    test_rows: np.ndarray


def _labels(values: np.ndarray, n_classes: int, name: str, path: Any) -> np.ndarray:
    if np.any(np.isnan(values)) or np.any(values != np.round(values)):
        raise DataError(f"{path}: {name} must be integer class codes")
    lo, hi = values.min(), values.max()
    if lo < 1 or hi > n_classes:
        raise DataError(f"{path}: {name} codes must lie in 1..{n_classes}, got {lo:g}..{hi:g}")
    return values - 1.0


def load_jura(train_path: str | Path, valid_path: str | Path) -> JuraData:
    """Read the prediction (259 rows) and validation (100 rows) Jura tables.

    Required columns (case-insensitive): x/xloc, y/yloc, landuse, rock, cd,
    ni, zn.  Land and rock codes are 1-based in the files and 0-based here.
    Minerals are log-transformed then z-scored with training-row statistics;
    coordinates are z-scored the same way.
    """
    tables = []
    for path, expected in ((train_path, JURA_TRAIN_ROWS), (valid_path, JURA_VALID_ROWS)):
        t = read_table(path)
        n = len(next(iter(t.values())))
        if n != expected:
            raise DataError(f"{path}: expected {expected} rows, found {n}")
        tables.append((path, t))
    cols: dict[str, list[np.ndarray]] = {k: [] for k in ("x", "y", "land", "rock") + JURA_MINERALS}
    for path, t in tables:
        cols["x"].append(_column(t, ("x", "xloc"), path))
        cols["y"].append(_column(t, ("y", "yloc"), path))
        cols["land"].append(_labels(_column(t, ("landuse", "land"), path), JURA_LAND_CLASSES, "landuse", path))
        cols["rock"].append(_labels(_column(t, ("rock",), path), JURA_ROCK_CLASSES, "rock", path))
        for m in JURA_MINERALS:
            cols[m].append(_column(t, (m,), path))
    full = {k: np.concatenate(v) for k, v in cols.items()}
    n_all = JURA_TRAIN_ROWS + JURA_VALID_ROWS
    train_rows = np.arange(JURA_TRAIN_ROWS)
    test_rows = np.arange(JURA_TRAIN_ROWS, n_all)
    coords = np.column_stack([full["x"], full["y"]])
    X, x_rec = standardize_columns(coords, ["x", "y"], train_rows)
    minerals = np.column_stack([full[m] for m in JURA_MINERALS])
    if np.any(np.isnan(minerals[:, :2])) or np.any(np.isnan(minerals[train_rows, 2])):
        raise DataError("Jura: missing mineral values")
    Ym, m_rec = standardize_columns(minerals, list(JURA_MINERALS), train_rows, log=True)
    cd_truth = minerals[test_rows, 2].copy()
    Ym[test_rows, 2] = np.nan
    mask = ~np.isnan(Ym)
    ds = Dataset(
        X=X,
        Y={"rock": full["rock"][:, None], "land": full["land"][:, None], "minerals": Ym},
        mask={"rock": np.ones((n_all, 1), bool), "land": np.ones((n_all, 1), bool), "minerals": mask},
        standardization={"X": x_rec, "minerals": m_rec},
    )
    return JuraData(train=ds, cd_truth=cd_truth, test_rows=test_rows)


def find_jura_files(data_dir: str | Path) -> tuple[Path, Path]:
    d = Path(data_dir)
    for train, valid in (("jura_train.csv", "jura_valid.csv"), ("prediction.dat", "validation.dat"),
                         ("jura_pred.dat", "jura_val.dat")):
        if (d / train).is_file() and (d / valid).is_file():
            return d / train, d / valid
    raise FileNotFoundError(f"no Jura train/validation pair in {d}")


# ---------------------------------------------------------------------------
# EEG
# ---------------------------------------------------------------------------

EEG_STEPS = 256
EEG_TRAIN_STEPS = 156
EEG_CONTEXT = ("f3", "f4", "f5", "f6")
EEG_TARGETS = ("f1", "f2", "fz")


@dataclass
class EEGData:
    """Both sensor groups over 256 steps; targets hidden after step 156.

    ``target_truth`` is ``(100, 3)`` in original units for F1, F2, FZ.
    """

    train: Dataset
    target_truth: np.ndarray
    test_rows: np.ndarray


_RD_LINE = re.compile(r"^\s*(\d+)\s+(\S+)\s+(\d+)\s+(\S+)\s*$")


def _read_rd(path: Path, trial: int | None) -> dict[str, np.ndarray]:
    series: dict[str, dict[int, float]] = {}
    chosen = trial
    for ln in path.read_text().splitlines():
        m = _RD_LINE.match(ln)
        if not m:
            continue
        t = int(m.group(1))
        if chosen is None:
            chosen = t
        if t != chosen:
            continue
        series.setdefault(m.group(2).lower(), {})[int(m.group(3))] = float(m.group(4))
    return {k: np.array([v[i] for i in sorted(v)]) for k, v in series.items()}


def load_eeg(path: str | Path, trial: int | None = None) -> EEGData:
    """Read one EEG trial from a CSV (columns f1..f6, fz) or a raw ``.rd`` text file.

    Raw files hold ``trial sensor sample value`` lines; ``trial`` picks one
    (default: the first trial in the file).  Time is ``i / 256``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    try:
        table = read_table(path)
    except DataError:
        table = _read_rd(path, trial)
    needed = EEG_CONTEXT + EEG_TARGETS
    missing = [c for c in needed if c not in table]
    if missing:
        raise DataError(f"{path}: missing sensors {missing}")
    for c in needed:
        if table[c].shape[0] != EEG_STEPS:
            raise DataError(f"{path}: sensor {c} has {table[c].shape[0]} samples, expected {EEG_STEPS}")
    t = np.arange(EEG_STEPS) / EEG_STEPS
    train_rows = np.arange(EEG_TRAIN_STEPS)
    test_rows = np.arange(EEG_TRAIN_STEPS, EEG_STEPS)
    ctx = np.column_stack([table[c] for c in EEG_CONTEXT])
    tgt = np.column_stack([table[c] for c in EEG_TARGETS])
    Zc, c_rec = standardize_columns(ctx, [c.upper() for c in EEG_CONTEXT], np.arange(EEG_STEPS))
    Zt, t_rec = standardize_columns(tgt, [c.upper() for c in EEG_TARGETS], train_rows)
    truth = tgt[test_rows].copy()
    Zt[test_rows] = np.nan
    ds = Dataset(X=t[:, None], Y={"context": Zc, "targets": Zt},
                 standardization={"context": c_rec, "targets": t_rec})
    return EEGData(train=ds, target_truth=truth, test_rows=test_rows)


def find_eeg_file(data_dir: str | Path) -> Path:
    d = Path(data_dir)
    for name in ("eeg.csv", "eeg_337.csv"):
        if (d / name).is_file():
            return d / name
    raw = sorted(d.glob("*.rd*"))
    if raw:
        return raw[0]
    raise FileNotFoundError(f"no EEG file in {d}")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _unstandardize(mean: np.ndarray, var: np.ndarray, records: Sequence[StandardizationRecord] | None):
    if records is None:
        return mean, var, [False] * mean.shape[1]
    m = np.column_stack([mean[:, j] * r.std + r.mean for j, r in enumerate(records)])
    v = np.column_stack([var[:, j] * r.std**2 for j, r in enumerate(records)])
    return m, v, [r.log for r in records]


def metrics(y_true: Any, mean: Any, var: Any,
            records: Sequence[StandardizationRecord] | None = None) -> dict[str, Any]:
    """MAE, SMSE and MLL in original units.

    ``mean``/``var`` are Gaussian predictive moments (observation noise
    included) in model units; ``records`` maps them back.  For log-scale
    columns the point prediction is ``exp(mean)`` and the density is the
    log-normal one.  SMSE is averaged over columns; NaN truths are skipped.
    """
    y = np.asarray(y_true, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if y.ndim == 1:
        y, mean, var = y[:, None], mean.reshape(-1, 1), var.reshape(-1, 1)
    if y.shape != mean.shape or y.shape != var.shape:
        raise ValueError(f"shape mismatch: truth {y.shape}, mean {mean.shape}, var {var.shape}")
    m, v, logs = _unstandardize(mean, var, records)
    abs_err, sq_err, nlpd, smse = [], [], [], []
    for j in range(y.shape[1]):
        ok = ~np.isnan(y[:, j])
        yt = y[ok, j]
        if logs[j]:
            point = np.exp(m[ok, j])
            ly = np.log(yt)
            dens = -0.5 * (LOG_2PI + np.log(v[ok, j])) - 0.5 * (ly - m[ok, j]) ** 2 / v[ok, j] - ly
        else:
            point = m[ok, j]
            dens = -0.5 * (LOG_2PI + np.log(v[ok, j])) - 0.5 * (yt - point) ** 2 / v[ok, j]
        err = yt - point
        spread = yt.var()
        if not spread > 0:
            raise ValueError("test targets have zero variance; SMSE undefined")
        abs_err.append(np.abs(err))
        sq_err.append(err**2)
        nlpd.append(-dens)
        smse.append(float(np.mean(err**2) / spread))
    return {
        "MAE": float(np.mean(np.concatenate(abs_err))),
        "SMSE": float(np.mean(smse)),
        "MLL": float(np.mean(np.concatenate(nlpd))),
        "SMSE_per_column": smse,
    }
