"""CSV dataset ingestion and draw persistence.

Dataset files carry one row per agent: an ``id`` column, a ``choice`` column
holding a category label, ``d_<name>`` columns for agent covariates and
``a_<name>_<label>`` columns for alternative covariates.  Category labels
are taken in first-appearance order from the header (or from the choice
column when there are no alternative covariates).

Draws persist as a directory holding ``draws.csv`` (one row per retained
iteration: b, alpha2, log_kernel, beta_*, upper triangle of sigma) and
``meta.json``.  The default float format has 17 significant digits, so a
save/load round trip reproduces every draw bit-exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .draws import DrawStore
from .types import ChoiceDataset

DEFAULT_FLOAT_FMT = "%.17g"


class DatasetFormatError(ValueError):
    pass


def _parse_header(fields: list[str]):
    if fields[:2] != ["id", "choice"]:
        raise DatasetFormatError("header must start with 'id,choice'")
    d_names: list[str] = []
    a_names: list[str] = []
    labels: list[str] = []
    a_cols: dict[str, dict[str, int]] = {}
    d_cols: dict[str, int] = {}
    for k, col in enumerate(fields[2:], start=2):
        if col.startswith("d_"):
            name = col[2:]
            if not name or name in d_cols:
                raise DatasetFormatError(f"bad agent-covariate column {col!r}")
            d_names.append(name)
            d_cols[name] = k
        elif col.startswith("a_"):
            body = col[2:]
            if "_" not in body:
                raise DatasetFormatError(
                    f"alternative column {col!r} must look like a_<name>_<label>"
                )
            name, label = body.rsplit("_", 1)
            if not name or not label:
                raise DatasetFormatError(f"bad alternative column {col!r}")
            if name not in a_names:
                a_names.append(name)
            if label not in labels:
                labels.append(label)
            a_cols.setdefault(name, {})
            if label in a_cols[name]:
                raise DatasetFormatError(f"duplicate column {col!r}")
            a_cols[name][label] = k
        else:
            raise DatasetFormatError(f"unrecognized column {col!r}")
    for name in a_names:
        missing = [lab for lab in labels if lab not in a_cols[name]]
        if missing:
            raise DatasetFormatError(
                f"alternative covariate {name!r} lacks columns for labels {missing}"
            )
    return d_names, a_names, labels, d_cols, a_cols


def parse_dataset(path) -> ChoiceDataset:
    """Read and validate a choice dataset; errors name the offending row and
    column."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        d_names, a_names, labels, d_cols, a_cols = _parse_header(
            [c.strip() for c in header]
        )
        rows = list(reader)
    choices: list[str] = []
    seen_labels = list(labels)
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DatasetFormatError(f"{path}: row {r} has {len(row)} fields")
        choice = row[1].strip()
        if not a_names and choice not in seen_labels:
            seen_labels.append(choice)
        choices.append(choice)
    if not seen_labels:
        raise DatasetFormatError(f"{path}: no category labels found")
    label_index = {lab: j for j, lab in enumerate(seen_labels)}
    n, p = len(rows), len(seen_labels)

    def number(r, k):
        text = rows[r][k].strip()
        try:
            v = float(text)
        except ValueError:
            raise DatasetFormatError(
                f"{path}: row {r}, column {header[k]!r}: cannot parse {text!r}"
            ) from None
        if not math.isfinite(v):
            raise DatasetFormatError(
                f"{path}: row {r}, column {header[k]!r}: non-finite value"
            )
        return v

    y = np.empty(n, dtype=np.int64)
    for r, choice in enumerate(choices):
        if choice not in label_index:
            raise DatasetFormatError(
                f"{path}: row {r}: unknown choice label {choice!r}"
            )
        y[r] = label_index[choice]
    x_d = np.empty((n, len(d_names)))
    for j, name in enumerate(d_names):
        for r in range(n):
            x_d[r, j] = number(r, d_cols[name])
    x_a = np.empty((n, p, len(a_names)))
    for j, name in enumerate(a_names):
        for c, lab in enumerate(seen_labels):
            k = a_cols[name][lab]
            for r in range(n):
                x_a[r, c, j] = number(r, k)
    ds = ChoiceDataset(y=y, x_d=x_d, x_a=x_a, labels=tuple(seen_labels))
    return ds


def write_dataset(
    dataset: ChoiceDataset,
    path,
    d_names=None,
    a_names=None,
    float_fmt: str = DEFAULT_FLOAT_FMT,
) -> None:
    """Inverse of :func:`parse_dataset` (covariate names default to x0, x1, ...)."""
    ds = dataset
    d_names = d_names or [f"x{j}" for j in range(ds.k_d)]
    a_names = a_names or [f"z{j}" for j in range(ds.k_a)]
    header = ["id", "choice"]
    header += [f"d_{nm}" for nm in d_names]
    header += [f"a_{nm}_{lab}" for nm in a_names for lab in ds.labels]
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [str(i), ds.labels[ds.y[i]]]
            row += [float_fmt % v for v in ds.x_d[i]]
            row += [
                float_fmt % ds.x_a[i, c, j]
                for j in range(ds.k_a)
                for c in range(ds.p)
            ]
            writer.writerow(row)


def _triu_indices(d):
    return [(i, j) for i in range(d) for j in range(i, d)]


def save_draws(store: DrawStore, out_dir, float_fmt: str = DEFAULT_FLOAT_FMT) -> Path:
    """Write ``draws.csv`` and ``meta.json`` under ``out_dir``.

    Retained utilities, when present, are not persisted (they are a debug
    feature and scale with n per draw).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = store.sigma.shape[1]
    triu = _triu_indices(d)
    header = ["b", "alpha2", "log_kernel"]
    header += [f"beta_{k}" for k in range(store.beta.shape[1])]
    header += [f"sigma_{i}_{j}" for i, j in triu]
    with (out / "draws.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in range(store.n_draws):
            row = [str(int(store.b[s]))]
            row.append(float_fmt % store.alpha2[s])
            row.append(float_fmt % store.log_kernel[s])
            row += [float_fmt % v for v in store.beta[s]]
            row += [float_fmt % store.sigma[s, i, j] for i, j in triu]
            writer.writerow(row)
    meta = dict(store.meta)
    meta.update(
        {
            "kind": store.kind,
            "labels": list(store.labels),
            "n_draws": store.n_draws,
            "n_beta": store.beta.shape[1],
            "sigma_dim": d,
        }
    )
    with (out / "meta.json").open("w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_draws(out_dir) -> DrawStore:
    """Reload a persisted draw store bit-exactly."""
    out = Path(out_dir)
    meta_path = out / "meta.json"
    draws_path = out / "draws.csv"
    if not meta_path.exists() or not draws_path.exists():
        raise FileNotFoundError(f"{out} does not contain draws.csv and meta.json")
    with meta_path.open() as fh:
        meta = json.load(fh)
    d = int(meta["sigma_dim"])
    n_beta = int(meta["n_beta"])
    m = int(meta["n_draws"])
    triu = _triu_indices(d)
    b = np.empty(m, dtype=np.int64)
    alpha2 = np.empty(m)
    kernel = np.empty(m)
    beta = np.empty((m, n_beta))
    sigma = np.empty((m, d, d))
    s = -1
    with draws_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = 3 + n_beta + len(triu)
        if len(header) != expected:
            raise DatasetFormatError(f"{draws_path}: unexpected column count")
        for s, row in enumerate(reader):
            b[s] = int(row[0])
            alpha2[s] = float(row[1])
            kernel[s] = float(row[2])
            beta[s] = [float(v) for v in row[3 : 3 + n_beta]]
            for (i, j), text in zip(triu, row[3 + n_beta :]):
                sigma[s, i, j] = float(text)
                sigma[s, j, i] = sigma[s, i, j]
    if s + 1 != m:
        raise DatasetFormatError(f"{draws_path}: expected {m} draw rows, found {s + 1}")
    return DrawStore(
        kind=meta["kind"],
        labels=tuple(meta["labels"]),
        b=b,
        alpha2=alpha2,
        beta=beta,
        sigma=sigma,
        log_kernel=kernel,
        meta=meta,
    )


def write_table(path, header: list[str], rows, float_fmt: str = DEFAULT_FLOAT_FMT) -> None:
    """Small CSV writer used by the command-line tools."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [float_fmt % v if isinstance(v, float) else str(v) for v in row]
            )
