"""Tabular datasets: CSV ingestion, preprocessing, splitting, and synthetic
data generation.

All operations are pure functions of their inputs plus an explicit seed;
datasets are immutable after construction.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "TabularDataset",
    "SyntheticConfig",
    "SplitDataset",
    "ZScoreStats",
    "SYNTHETIC_FEATURE_NAMES",
    "load_csv",
    "write_csv",
    "write_schema",
    "load_schema",
    "label_encode",
    "zscore_normalize",
    "apply_zscore",
    "train_test_split",
    "standardized_split",
    "generate_synthetic",
    "dataset_dp",
    "oversample_to_dp",
    "pearson_correlation",
    "select_fair_features",
    "concat_datasets",
]

SYNTHETIC_FEATURE_NAMES = ("x1", "x2", "xs", "xp")


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TabularDataset:
    """Feature matrix with binary labels and a designated sensitive column.

    ``group_values`` holds the raw values of the sensitive column that mark
    the (advantaged, disadvantaged) groups. The sensitive column stays inside
    the feature matrix so that models can be trained with or without it by
    plain column subsetting.
    """

    features: np.ndarray
    feature_names: tuple[str, ...]
    labels: np.ndarray
    sensitive_index: int
    group_values: tuple[float, float]
    provenance: str = ""

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError("features must be a non-empty 2-D matrix")
        if not np.isfinite(feats).all():
            raise ValueError("features contain non-finite values")
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != feats.shape[1]:
            raise ValueError("feature_names length does not match feature count")
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names")
        labels = np.asarray(self.labels)
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must be one value per row")
        labels = labels.astype(np.int64)
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must all be 0 or 1")
        if not 0 <= int(self.sensitive_index) < feats.shape[1]:
            raise ValueError("sensitive_index out of range")
        gv = (float(self.group_values[0]), float(self.group_values[1]))
        if gv[0] == gv[1]:
            raise ValueError("group values must be distinct")
        col = feats[:, int(self.sensitive_index)]
        for value in gv:
            if not (col == value).any():
                raise ValueError(f"group value {value} absent from the sensitive column")
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "sensitive_index", int(self.sensitive_index))
        object.__setattr__(self, "group_values", gv)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def sensitive_column(self) -> np.ndarray:
        return self.features[:, self.sensitive_index]

    @property
    def advantaged_mask(self) -> np.ndarray:
        return self.sensitive_column == self.group_values[0]

    @property
    def disadvantaged_mask(self) -> np.ndarray:
        return self.sensitive_column == self.group_values[1]

    def take(self, rows: np.ndarray, provenance: str | None = None) -> "TabularDataset":
        """Row-subset copy; metadata is preserved."""
        return TabularDataset(
            self.features[rows],
            self.feature_names,
            self.labels[rows],
            self.sensitive_index,
            self.group_values,
            self.provenance if provenance is None else provenance,
        )


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings for the four-feature synthetic benchmark dataset."""

    m: int = 10000
    n_advantaged: int = 6000
    weights: tuple[float, float, float, float, float] = (-0.2, 1.5, 0.5, 0.5, 0.5)
    proxy_std: float = 0.1
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.n_advantaged < self.m:
            raise ValueError("need 0 < n_advantaged < m")
        if not self.proxy_std > 0:
            raise ValueError("proxy_std must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    def config_hash(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class SplitDataset:
    """Disjoint train/test partition of one source dataset."""

    train: TabularDataset
    test: TabularDataset
    ratio: float = 0.8
    seed: int = 0


def generate_synthetic(config: SyntheticConfig | None = None) -> TabularDataset:
    """Generate the synthetic benchmark: two independent standard-normal
    features, a binary sensitive feature, and a proxy tracking it.

    The label is 1 exactly when the noisy linear score
    ``w0 + w1*x1 + w2*x2 + w3*xs + w4*xp + N(0, noise_std)`` is >= 0
    (rounding the sigmoid of the score to the nearest integer).
    """
    config = config or SyntheticConfig()
    rng = np.random.default_rng(config.seed)
    x1 = rng.standard_normal(config.m)
    x2 = rng.standard_normal(config.m)
    xs = np.zeros(config.m)
    xs[: config.n_advantaged] = 1.0
    xp = rng.normal(xs, config.proxy_std)
    noise = rng.normal(0.0, config.noise_std, size=config.m)
    w0, w1, w2, w3, w4 = config.weights
    t = w0 + w1 * x1 + w2 * x2 + w3 * xs + w4 * xp + noise
    labels = (t >= 0.0).astype(np.int64)
    features = np.column_stack([x1, x2, xs, xp])
    provenance = f"synthetic seed={config.seed} config={config.config_hash()}"
    return TabularDataset(features, SYNTHETIC_FEATURE_NAMES, labels, 2, (1.0, 0.0), provenance)


def label_encode(values) -> tuple[np.ndarray, dict[str, int] | None]:
    """Encode one column: numeric columns pass through, anything else gets
    integer codes in first-appearance order.

    Returns the encoded column and the code mapping (None for numeric input).
    """
    raw = list(values)
    if not raw:
        raise ValueError("empty column")
    try:
        return np.array([float(v) for v in raw]), None
    except (TypeError, ValueError):
        pass
    mapping: dict[str, int] = {}
    codes = np.empty(len(raw))
    for i, v in enumerate(raw):
        key = str(v)
        if key not in mapping:
            mapping[key] = len(mapping)
        codes[i] = mapping[key]
    return codes, mapping


@dataclass(frozen=True)
class ZScoreStats:
    """Per-column standardization statistics (population mean/std).

    Zero-variance columns are recorded and passed through unscaled when the
    statistics are applied.
    """

    mean: np.ndarray
    std: np.ndarray
    constant_columns: tuple[int, ...]

    def transform(self, features: np.ndarray) -> np.ndarray:
        shift = np.where(self.std > 0, self.mean, 0.0)
        scale = np.where(self.std > 0, self.std, 1.0)
        return (np.asarray(features, dtype=float) - shift) / scale

    def transform_value(self, column: int, value: float) -> float:
        if self.std[column] == 0:
            return float(value)
        return (float(value) - self.mean[column]) / self.std[column]


def zscore_normalize(dataset: TabularDataset) -> tuple[TabularDataset, ZScoreStats]:
    """Standardize every column to zero mean and unit (population) std.

    Returns the fitted statistics so a held-out split can be transformed with
    the same parameters. Constant columns are passed through with a warning.
    """
    mean = dataset.features.mean(axis=0)
    std = dataset.features.std(axis=0)
    constant = tuple(int(i) for i in np.flatnonzero(std == 0.0))
    if constant:
        names = ", ".join(dataset.feature_names[i] for i in constant)
        warnings.warn(f"constant column(s) passed through unscaled: {names}", stacklevel=2)
    stats = ZScoreStats(_readonly(mean), _readonly(std), constant)
    return apply_zscore(dataset, stats), stats


def apply_zscore(dataset: TabularDataset, stats: ZScoreStats) -> TabularDataset:
    """Apply previously fitted standardization statistics to a dataset."""
    if stats.mean.shape != (dataset.d,):
        raise ValueError("statistics do not match the feature count")
    features = stats.transform(dataset.features)
    group_values = tuple(
        stats.transform_value(dataset.sensitive_index, v) for v in dataset.group_values
    )
    return TabularDataset(
        features,
        dataset.feature_names,
        dataset.labels,
        dataset.sensitive_index,
        group_values,
        dataset.provenance + "|zscore",
    )


def train_test_split(dataset: TabularDataset, ratio: float = 0.8, seed: int = 0) -> SplitDataset:
    """Seeded uniform split; train receives ceil(ratio * m) rows."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    if dataset.m < 2:
        raise ValueError("need at least two rows to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.m)
    n_train = math.ceil(ratio * dataset.m)
    if n_train >= dataset.m:
        raise ValueError("ratio leaves an empty test split")
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    adv, dis = dataset.group_values
    for name, idx in (("train", train_idx), ("test", test_idx)):
        col = dataset.features[idx, dataset.sensitive_index]
        if not ((col == adv).any() and (col == dis).any()):
            raise ValueError(f"{name} split lost a sensitive group; use a different seed")
    y_train = dataset.labels[train_idx]
    if y_train.min() == y_train.max():
        raise ValueError("train split lost a label class; use a different seed")

    tag = f"|split({ratio}, seed={seed})"
    return SplitDataset(
        dataset.take(train_idx, dataset.provenance + tag + "[train]"),
        dataset.take(test_idx, dataset.provenance + tag + "[test]"),
        ratio,
        seed,
    )


def standardized_split(
    dataset: TabularDataset, ratio: float = 0.8, seed: int = 0
) -> tuple[SplitDataset, ZScoreStats]:
    """Split, then z-score both parts with statistics fitted on train only."""
    split = train_test_split(dataset, ratio, seed)
    train, stats = zscore_normalize(split.train)
    test = apply_zscore(split.test, stats)
    return SplitDataset(train, test, ratio, seed), stats


def dataset_dp(dataset: TabularDataset) -> float:
    """Demographic-parity gap of the raw labels between the two groups."""
    adv = dataset.advantaged_mask
    rate_adv = dataset.labels[adv].mean()
    rate_dis = dataset.labels[~adv].mean()
    return float(abs(rate_adv - rate_dis))


def oversample_to_dp(
    dataset: TabularDataset,
    target_dp: float,
    seed: int = 0,
    max_appended: int | None = None,
) -> TabularDataset:
    """Append random copies of positive-labeled advantaged rows, one at a
    time, until the dataset's DP first exceeds ``target_dp``.
    """
    if not 0.0 < target_dp < 1.0:
        raise ValueError("target_dp must lie strictly between 0 and 1")
    cap = 10 * dataset.m if max_appended is None else max_appended
    current = dataset_dp(dataset)
    if current >= target_dp:
        raise ValueError(f"dataset DP {current:.4f} already >= target {target_dp}")
    adv = dataset.advantaged_mask
    adv_pos = np.flatnonzero(adv & (dataset.labels == 1))
    if adv_pos.size == 0:
        raise ValueError("no positive-labeled rows in the advantaged group")

    n_adv = int(adv.sum())
    pos_adv = int(adv_pos.size)
    n_dis = dataset.m - n_adv
    pos_dis = int(dataset.labels[~adv].sum())
    rng = np.random.default_rng(seed)
    added: list[int] = []
    dp_now = current
    while dp_now <= target_dp:
        if len(added) >= cap:
            raise ValueError(
                f"target DP {target_dp} not reached after appending {cap} rows"
            )
        added.append(int(adv_pos[rng.integers(adv_pos.size)]))
        n_adv += 1
        pos_adv += 1
        dp_now = abs(pos_adv / n_adv - pos_dis / n_dis)
    rows = np.concatenate([np.arange(dataset.m), np.array(added, dtype=int)])
    tag = f"|oversampled(dp>{target_dp}, seed={seed}, added={len(added)})"
    return dataset.take(rows, dataset.provenance + tag)


def pearson_correlation(dataset: TabularDataset, feature: int) -> float:
    """Pearson correlation between one feature column and the sensitive column."""
    x = dataset.features[:, feature]
    s = dataset.sensitive_column
    if x.std() == 0.0 or s.std() == 0.0:
        raise ValueError("zero-variance column in correlation")
    return float(np.corrcoef(x, s)[0, 1])


def select_fair_features(dataset: TabularDataset, threshold: float = 0.10) -> tuple[int, ...]:
    """Indices of non-sensitive features whose |correlation| with the
    sensitive column is below the threshold. Constant columns carry no group
    signal and count as fair.
    """
    fair = []
    for j in range(dataset.d):
        if j == dataset.sensitive_index:
            continue
        try:
            r = pearson_correlation(dataset, j)
        except ValueError:
            r = 0.0
        if abs(r) < threshold:
            fair.append(j)
    if not fair:
        raise ValueError(
            f"no feature correlates below {threshold}; retry with a higher threshold"
        )
    return tuple(fair)


def concat_datasets(a: TabularDataset, b: TabularDataset) -> TabularDataset:
    """Row-concatenate two datasets with identical schema."""
    if a.feature_names != b.feature_names or a.sensitive_index != b.sensitive_index:
        raise ValueError("datasets have different schemas")
    if a.group_values != b.group_values:
        raise ValueError("datasets have different group encodings")
    return TabularDataset(
        np.vstack([a.features, b.features]),
        a.feature_names,
        np.concatenate([a.labels, b.labels]),
        a.sensitive_index,
        a.group_values,
        a.provenance + "+" + b.provenance,
    )


# ---------------------------------------------------------------------------
# CSV + schema sidecar I/O


def _coerce(value):
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value).strip()


def load_schema(schema) -> dict:
    if isinstance(schema, dict):
        doc = dict(schema)
    else:
        with open(schema, encoding="utf-8") as fh:
            doc = json.load(fh)
    for key in ("label", "sensitive", "advantaged_value", "disadvantaged_value"):
        if key not in doc:
            raise ValueError(f"schema is missing the {key!r} entry")
    return doc


def _encode_label_column(column: list[str], positive) -> np.ndarray:
    parsed = [_coerce(c) for c in column]
    distinct: list = []
    for v in parsed:
        if v not in distinct:
            distinct.append(v)
    if positive is not None:
        pos = _coerce(positive)
        if len(distinct) > 2:
            raise ValueError(f"non-binary label column: values {distinct}")
        if pos not in distinct:
            raise ValueError(f"positive label {positive!r} absent from the label column")
        return np.array([1 if v == pos else 0 for v in parsed], dtype=np.int64)
    if not set(distinct) <= {0.0, 1.0}:
        raise ValueError(f"non-binary label column: values {distinct}")
    return np.array([int(v) for v in parsed], dtype=np.int64)


def _resolve_group_value(value, mapping: dict[str, int] | None) -> float:
    if mapping is not None:
        key = str(value)
        if key not in mapping:
            raise ValueError(f"group value {value!r} absent from the sensitive column")
        return float(mapping[key])
    return float(value)


def load_csv(path, schema) -> TabularDataset:
    """Read a UTF-8 comma-separated file with one header row.

    ``schema`` designates the label and sensitive columns and the raw values
    marking the groups and the positive label. Non-numeric columns are
    integer-coded in first-appearance order; the code maps are recorded in the
    dataset provenance. Lines starting with '#' (the provenance footer) are
    skipped.
    """
    schema = load_schema(schema)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if len(rows) < 2:
        raise ValueError("CSV needs a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ValueError("duplicate header names")
    data = rows[1:]
    for i, row in enumerate(data):
        if len(row) != len(header):
            raise ValueError(f"ragged row {i + 2}: expected {len(header)} cells, got {len(row)}")

    label_name = str(schema["label"])
    sensitive_name = str(schema["sensitive"])
    if label_name not in header:
        raise ValueError(f"unknown label column {label_name!r}")
    if sensitive_name not in header:
        raise ValueError(f"unknown sensitive column {sensitive_name!r}")

    columns = list(zip(*data))
    labels = _encode_label_column(list(columns[header.index(label_name)]), schema.get("positive_label"))

    feature_positions = [i for i, name in enumerate(header) if name != label_name]
    names = tuple(header[i] for i in feature_positions)
    encoded = []
    mappings: dict[str, dict[str, int]] = {}
    for i in feature_positions:
        codes, mapping = label_encode(list(columns[i]))
        encoded.append(codes)
        if mapping is not None:
            mappings[header[i]] = mapping
    features = np.column_stack(encoded)
    sensitive_index = names.index(sensitive_name)
    group_values = (
        _resolve_group_value(schema["advantaged_value"], mappings.get(sensitive_name)),
        _resolve_group_value(schema["disadvantaged_value"], mappings.get(sensitive_name)),
    )
    provenance = f"csv:{path.name}"
    if mappings:
        provenance += "|encoded=" + json.dumps(mappings, sort_keys=True)
    return TabularDataset(features, names, labels, sensitive_index, group_values, provenance)


def write_csv(dataset: TabularDataset, path, label_name: str = "label") -> None:
    """Write the dataset with a provenance footer comment line."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.feature_names) + [label_name])
        for i in range(dataset.m):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(str(int(dataset.labels[i])))
            writer.writerow(row)
        fh.write(f"# provenance: {dataset.provenance}\n")


def write_schema(dataset: TabularDataset, path, label_name: str = "label", positive_label=1) -> None:
    doc = {
        "label": label_name,
        "sensitive": dataset.feature_names[dataset.sensitive_index],
        "advantaged_value": dataset.group_values[0],
        "disadvantaged_value": dataset.group_values[1],
        "positive_label": positive_label,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
