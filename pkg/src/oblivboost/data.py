"""Dataset I/O: CSV files, per-row serialization, synthetic generators.

Row plaintext is one UTF-8 CSV line "label,f1,...,fd" per sample; files
carry a "label,f1,...,fd" header. Feature values must be finite; -0.0 is
canonicalized to +0.0 on load so that float comparisons agree across the
traced and compiled paths.
"""

from __future__ import annotations

import math

import numpy as np


def format_row(label: float, features) -> bytes:
    parts = [repr(float(label))] + [repr(float(x)) for x in features]
    return ",".join(parts).encode("utf-8")


def parse_row(data: bytes, expected_features: int | None = None) -> tuple[float, list[float]]:
    parts = data.decode("utf-8").split(",")
    if len(parts) < 2:
        raise ValueError("row needs a label and at least one feature")
    values = [float(p) for p in parts]
    label, features = values[0], values[1:]
    if expected_features is not None and len(features) != expected_features:
        raise ValueError(
            f"expected {expected_features} features, got {len(features)}"
        )
    for x in features:
        if not math.isfinite(x):
            raise ValueError("feature values must be finite")
    return label, [x + 0.0 for x in features]


def matrix_to_rows(X: np.ndarray, y: np.ndarray) -> list[bytes]:
    return [format_row(y[i], X[i]) for i in range(X.shape[0])]


def rows_to_matrix(rows: list[bytes]) -> tuple[np.ndarray, np.ndarray]:
    if not rows:
        raise ValueError("no rows")
    parsed = [parse_row(r) for r in rows]
    d = len(parsed[0][1])
    X = np.empty((len(parsed), d), dtype=np.float64)
    y = np.empty(len(parsed), dtype=np.float64)
    for i, (label, feats) in enumerate(parsed):
        if len(feats) != d:
            raise ValueError(f"row {i + 1}: inconsistent feature count")
        X[i] = feats
        y[i] = label
    return X + 0.0, y


def csv_header(d: int) -> str:
    return ",".join(["label"] + [f"f{k + 1}" for k in range(d)])


def load_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Load a labeled dataset; parse failures report 1-based line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].strip()
    if not header.startswith("label"):
        raise ValueError(f"{path}: line 1: expected 'label,f1,...' header")
    d = len(header.split(",")) - 1
    if d < 1:
        raise ValueError(f"{path}: line 1: header has no feature columns")
    rows = []
    labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            label, feats = parse_row(line.encode("utf-8"), d)
        except ValueError as e:
            raise ValueError(f"{path}: line {lineno}: {e}") from None
        rows.append(feats)
        labels.append(label)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64) + 0.0, np.asarray(labels, dtype=np.float64)


def save_csv(path: str, X: np.ndarray, y: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(csv_header(X.shape[1]) + "\n")
        for i in range(X.shape[0]):
            fh.write(format_row(y[i], X[i]).decode("utf-8") + "\n")


def synth_classification(
    n: int, d: int, seed: int = 0, margin_gap: float = 0.3
) -> tuple[np.ndarray, np.ndarray]:
    """Linearly separable binary data with a margin gap around the boundary."""
    rng = np.random.default_rng(seed)
    w = np.zeros(d)
    w[0] = 0.8
    if d > 1:
        w[1] = 0.6
    X = np.empty((n, d))
    y = np.empty(n)
    filled = 0
    while filled < n:
        batch = rng.standard_normal((2 * (n - filled) + 8, d))
        margin = batch @ w
        keep = np.abs(margin) > margin_gap
        take = batch[keep][: n - filled]
        X[filled : filled + take.shape[0]] = take
        y[filled : filled + take.shape[0]] = (take @ w > 0).astype(np.float64)
        filled += take.shape[0]
    return X + 0.0, y


def synth_regression(n: int, d: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    y = X @ w + 0.1 * rng.standard_normal(n)
    return X + 0.0, y


def random_dataset(
    rng: np.random.Generator, n: int, d: int, objective: str
) -> tuple[np.ndarray, np.ndarray]:
    """Small random dataset with repeated feature values (stress for bins)."""
    base = rng.integers(-8, 9, size=(n, d)).astype(np.float64)
    X = base + rng.choice([0.0, 0.25, 0.5], size=(n, d))
    if objective == "binary:logistic":
        y = (rng.random(n) < 0.5).astype(np.float64)
    else:
        y = rng.standard_normal(n)
    return X + 0.0, y
