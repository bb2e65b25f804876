"""Feature-table ingestion, PCA reduction to feature-map angles, and a
small synthetic dataset generator.

No image data ships with the package; any rectangular numeric CSV works.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, SchemaError


@dataclass(frozen=True)
class FeatureTable:
    features: np.ndarray           # (rows, k)
    labels: np.ndarray = None      # optional (rows,)
    provenance: str = ""

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2:
            raise DimensionError("feature table must be 2-dimensional")
        if not np.all(np.isfinite(f)):
            raise DimensionError("feature table has non-finite entries")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (f.shape[0],):
                raise DimensionError("label column length mismatch")
        f = f.copy()
        f.setflags(write=False)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", labels)

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]


def ingest_csv(path, columns, label_column=None, provenance=None) -> FeatureTable:
    """Read a numeric CSV with an exact expected header.

    columns: the full header, in order. label_column, if given, names the
    one column stored as labels; the rest are features. Decimal parsing
    is plain float() (dot decimal separator, no locale grouping). Any
    failure names the offending row and column.
    """
    columns = list(columns)
    if label_column is not None and label_column not in columns:
        raise SchemaError(f"label column {label_column!r} not in schema")
    feat_names = [c for c in columns if c != label_column]
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"empty file: expected header {columns}") from None
        header = [h.strip() for h in header]
        if header != columns:
            missing = [c for c in columns if c not in header]
            extra = [c for c in header if c not in columns]
            raise SchemaError(
                f"header mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}")
        feats, labels = [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(columns):
                raise SchemaError(f"row has {len(row)} cells, expected {len(columns)}",
                                  row=rownum)
            vals = {}
            for name, cell in zip(columns, row):
                try:
                    vals[name] = float(cell.strip())
                except ValueError:
                    raise SchemaError(f"cannot parse {cell.strip()!r} as a number",
                                      row=rownum, col=name) from None
            feats.append([vals[c] for c in feat_names])
            if label_column is not None:
                labels.append(vals[label_column])
    if not feats:
        raise SchemaError("file has a header but no data rows")
    return FeatureTable(np.array(feats),
                        labels=np.array(labels) if label_column is not None else None,
                        provenance=provenance or f"csv:{path}")


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray         # (k_in,)
    components: np.ndarray   # (k_in, k_out), columns are directions
    variances: np.ndarray    # (k_out,), non-increasing
    angle_min: np.ndarray    # per output axis, pre-rescale minimum
    angle_range: np.ndarray  # per output axis span (0 for constant axes)

    def transform(self, features: np.ndarray) -> np.ndarray:
        proj = (np.asarray(features, dtype=np.float64) - self.mean) @ self.components
        out = np.zeros_like(proj)
        nz = self.angle_range > 0
        out[:, nz] = (proj[:, nz] - self.angle_min[nz]) / self.angle_range[nz] * (2 * np.pi)
        return out

    def reconstruct(self, angles: np.ndarray) -> np.ndarray:
        """Invert the rescale and projection (up to discarded components)."""
        angles = np.asarray(angles, dtype=np.float64)
        proj = np.zeros_like(angles)
        nz = self.angle_range > 0
        proj[:, nz] = angles[:, nz] / (2 * np.pi) * self.angle_range[nz] + self.angle_min[nz]
        proj[:, ~nz] = self.angle_min[~nz]
        return proj @ self.components.T + self.mean


def pca_fit(table: FeatureTable, k: int) -> PCAModel:
    x = table.features
    if k < 1 or k > table.n_features:
        raise DimensionError(f"cannot keep {k} of {table.n_features} components")
    if table.n_rows < 2:
        raise DimensionError("need at least 2 rows")
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False, ddof=1).reshape(table.n_features, table.n_features)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]  # descending; zero-variance directions land last
    evals, evecs = evals[order][:k], evecs[:, order][:, :k]
    for j in range(evecs.shape[1]):
        lead = np.argmax(np.abs(evecs[:, j]))
        if evecs[lead, j] < 0:
            evecs[:, j] = -evecs[:, j]
    proj = (x - mean) @ evecs
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    return PCAModel(mean=mean, components=evecs, variances=np.maximum(evals, 0.0),
                    angle_min=lo, angle_range=hi - lo)


def pca_reduce(table: FeatureTable, k: int, return_model: bool = False):
    """Project onto the top-k principal directions, rescaled to [0, 2pi]
    per axis so rows feed the feature map directly."""
    model = pca_fit(table, k)
    reduced = FeatureTable(model.transform(table.features), labels=table.labels,
                           provenance=f"{table.provenance}|pca(k={k})")
    return (reduced, model) if return_model else reduced


def synthetic_two_class(n_samples: int, n_features: int, rng: np.random.Generator,
                        separation: float = 2.0) -> FeatureTable:
    """Two Gaussian blobs with +-separation/2 mean offset on every axis."""
    if n_samples < 2 or n_features < 1:
        raise DimensionError("need at least 2 samples and 1 feature")
    labels = rng.integers(0, 2, size=n_samples)
    shift = (labels * 2 - 1)[:, None] * (separation / 2)
    feats = rng.standard_normal((n_samples, n_features)) + shift
    return FeatureTable(feats, labels=labels,
                        provenance=f"synthetic-two-class(sep={separation})")


def write_table_csv(path, table: FeatureTable, feature_names=None, label_name="label"):
    names = feature_names or [f"x{i}" for i in range(table.n_features)]
    if len(names) != table.n_features:
        raise DimensionError("feature name count mismatch")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if table.labels is not None:
            writer.writerow(list(names) + [label_name])
            for row, lab in zip(table.features, table.labels):
                writer.writerow([repr(float(v)) for v in row] + [lab])
        else:
            writer.writerow(list(names))
            for row in table.features:
                writer.writerow([repr(float(v)) for v in row])
