"""Flow-CSV ingestion, cleaning, label binarization, and split plumbing."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import substream

# Identifier columns removed before model training.  Short and long name
# variants cover the common CSV exports of the same capture tooling;
# names absent from a given file are ignored with a provenance note.
IDENTIFIER_COLUMNS = [
    "Flow ID",
    "Src IP",
    "Source IP",
    "Dst IP",
    "Destination IP",
    "Src Port",
    "Source Port",
    "Dst Port",
    "Destination Port",
    "Protocol",
    "Timestamp",
]

# Columns whose cells are free text (addresses, timestamps, URLs).  These
# can never live in a numeric feature matrix, so the prep pipeline passes
# them to clean_and_binarize as exclusions up front.
TEXT_COLUMNS = [
    "Flow ID",
    "Src IP",
    "Source IP",
    "Dst IP",
    "Destination IP",
    "Timestamp",
    "SimillarHTTP",
    "Unnamed: 0",
]


@dataclass
class RawFlowTable:
    """A parsed CSV: trimmed header plus verbatim text cells."""

    column_names: list
    rows: list
    source_path: str


@dataclass
class LabeledDataset:
    """Numeric feature matrix with binary labels (0 benign, 1 DDoS)."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: list
    provenance: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    def validate(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        n, d = self.features.shape
        if len(self.labels) != n:
            raise ValueError(f"labels length {len(self.labels)} != {n} rows")
        if len(self.feature_names) != d:
            raise ValueError(
                f"{len(self.feature_names)} feature names != {d} columns"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 or 1")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def with_provenance(self, note: str) -> "LabeledDataset":
        text = f"{self.provenance}; {note}" if self.provenance else note
        return LabeledDataset(self.features, self.labels, list(self.feature_names), text)


@dataclass
class SplitSpec:
    """Fractions for a train/val/test partition."""

    train_fraction: float = 0.70
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not (0.0 < f < 1.0) for f in fracs):
            raise ValueError(f"split fractions must lie in (0,1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def load_csv(path) -> RawFlowTable:
    """Read a header-first CSV into a RawFlowTable.

    Column names are whitespace-trimmed; all other cells are kept
    verbatim.  Rows whose cell count differs from the header raise with
    the offending row index (1-based, header excluded).
    """
    try:
        handle = open(path, "r", newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise OSError(f"cannot read CSV {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"empty CSV file: {path}") from None
        columns = [name.strip() for name in header]
        if len(set(columns)) != len(columns):
            dupes = sorted({c for c in columns if columns.count(c) > 1})
            raise ValueError(f"duplicate column names after trimming: {dupes}")
        rows = []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(columns):
                raise ValueError(
                    f"ragged row {i} in {path}: {len(row)} cells, expected {len(columns)}"
                )
            rows.append(row)
    return RawFlowTable(column_names=columns, rows=rows, source_path=str(path))


def _parse_cell(text: str) -> float:
    cell = text.strip()
    if cell == "":
        return math.nan
    return float(cell)  # accepts "Infinity", "-Infinity", "NaN" spellings


def clean_and_binarize(
    table: RawFlowTable,
    label_column: str = "Label",
    benign_token: str = "BENIGN",
    exclude_columns=(),
) -> LabeledDataset:
    """Numeric matrix + binary labels from a raw table.

    Labels equal to benign_token (trimmed, case-insensitive) become 0,
    everything else 1.  Rows with any non-finite feature value after
    parsing are dropped.  Columns in exclude_columns are left out of the
    matrix entirely (needed for free-text identifiers that cannot parse
    as numbers); exclusions and drop counts are recorded in provenance.
    """
    if label_column not in table.column_names:
        raise ValueError(
            f"label column {label_column!r} not in {table.column_names[:8]}..."
        )
    excluded = set(exclude_columns)
    label_idx = table.column_names.index(label_column)
    keep = [
        (i, name)
        for i, name in enumerate(table.column_names)
        if i != label_idx and name not in excluded
    ]
    feature_names = [name for _, name in keep]
    if not feature_names:
        raise ValueError("no feature columns remain after exclusions")

    benign = benign_token.strip().lower()
    features = []
    labels = []
    dropped = 0
    for r, row in enumerate(table.rows, start=1):
        values = np.empty(len(keep))
        for out_col, (i, name) in enumerate(keep):
            try:
                values[out_col] = _parse_cell(row[i])
            except ValueError:
                raise ValueError(
                    f"column {name!r} row {r}: cell {row[i]!r} is not numeric; "
                    "pass it via exclude_columns if it is an identifier"
                ) from None
        if not np.all(np.isfinite(values)):
            dropped += 1
            continue
        features.append(values)
        labels.append(0 if row[label_idx].strip().lower() == benign else 1)
    if not features:
        raise ValueError("zero rows survive cleaning")

    notes = [f"loaded {table.source_path}"]
    present_excluded = sorted(excluded & set(table.column_names))
    if present_excluded:
        notes.append(f"excluded columns {present_excluded}")
    notes.append(f"kept {len(feature_names)} feature columns")
    notes.append(f"dropped {dropped} rows with non-finite values")
    notes.append(f"binarized {label_column!r} with benign token {benign_token!r}")
    return LabeledDataset(
        np.vstack(features), np.array(labels), feature_names, "; ".join(notes)
    )


def drop_identifier_columns(ds: LabeledDataset, drop_list=None) -> LabeledDataset:
    """Remove identifier features (flow ids, addresses, ports, protocol, time)."""
    if drop_list is None:
        drop_list = IDENTIFIER_COLUMNS
    if not drop_list:
        return ds
    drop = set(drop_list)
    keep_idx = [i for i, name in enumerate(ds.feature_names) if name not in drop]
    if not keep_idx:
        raise ValueError("dropping identifier columns would leave zero features")
    missing = sorted(drop - set(ds.feature_names))
    removed = [n for n in ds.feature_names if n in drop]
    note = f"dropped identifier columns {removed}"
    if missing:
        note += f" (not present, ignored: {missing})"
    return LabeledDataset(
        ds.features[:, keep_idx],
        ds.labels,
        [ds.feature_names[i] for i in keep_idx],
        f"{ds.provenance}; {note}" if ds.provenance else note,
    )


def _allocate_counts(n: int, fractions, priority_offset: int) -> list:
    """Largest-remainder apportionment of n rows over the fractions.

    Each count lands within one row of the exact share.  Ties between
    equal remainders rotate with priority_offset so that repeated .5
    remainders (e.g. 0.15 * 50) alternate between splits and the global
    totals stay on target.
    """
    exact = [f * n for f in fractions]
    counts = [int(math.floor(e)) for e in exact]
    remainder = n - sum(counts)
    order = sorted(
        range(len(fractions)),
        key=lambda s: (-(exact[s] - counts[s]), (s + priority_offset) % len(fractions)),
    )
    for s in order[:remainder]:
        counts[s] += 1
    return counts


def stratified_split(ds: LabeledDataset, spec: SplitSpec):
    """Disjoint, exhaustive (train, val, test) partition.

    Stratified mode apportions each class independently; every split's
    per-class count is within one row of the exact share.  Deterministic
    in spec.seed.
    """
    fractions = (spec.train_fraction, spec.val_fraction, spec.test_fraction)
    rng = substream(spec.seed, "split")
    parts = [[], [], []]

    if spec.stratified:
        classes = np.unique(ds.labels)
        if len(classes) < 2:
            raise ValueError("stratified split requires both classes present")
        for position, c in enumerate(classes):
            idx = np.flatnonzero(ds.labels == c)
            if len(idx) < len(fractions):
                raise ValueError(
                    f"class {c} has {len(idx)} rows, fewer than {len(fractions)} splits"
                )
            counts = _allocate_counts(len(idx), fractions, position)
            perm = idx[rng.permutation(len(idx))]
            start = 0
            for s, count in enumerate(counts):
                parts[s].append(perm[start : start + count])
                start += count
    else:
        if ds.n_rows < len(fractions):
            raise ValueError("fewer rows than splits")
        counts = _allocate_counts(ds.n_rows, fractions, 0)
        perm = rng.permutation(ds.n_rows)
        start = 0
        for s, count in enumerate(counts):
            parts[s].append(perm[start : start + count])
            start += count

    names = ("train", "val", "test")
    out = []
    for s, name in enumerate(names):
        idx = np.sort(np.concatenate(parts[s]))
        out.append(
            LabeledDataset(
                ds.features[idx],
                ds.labels[idx],
                list(ds.feature_names),
                f"{ds.provenance}; {name} split "
                f"({fractions[s]:g} of {ds.n_rows} rows, seed {spec.seed})",
            )
        )
    return tuple(out)


def subsample_reduced(ds: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """Class-balanced subsample of exactly n rows (n/2 per class).

    Sampling is without replacement and the chosen rows keep their
    original relative order, so streaming order survives reduction.
    """
    if n % 2 != 0:
        raise ValueError(f"reduced sample size must be even, got {n}")
    if n > ds.n_rows:
        raise ValueError(f"requested {n} rows from a {ds.n_rows}-row dataset")
    per_class = n // 2
    rng = substream(seed, "subsample")
    chosen = []
    for c in (0, 1):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) < per_class:
            raise ValueError(
                f"class {c} has {len(idx)} rows, needs {per_class} for n={n}"
            )
        chosen.append(rng.choice(idx, size=per_class, replace=False))
    idx = np.sort(np.concatenate(chosen))
    return LabeledDataset(
        ds.features[idx],
        ds.labels[idx],
        list(ds.feature_names),
        f"{ds.provenance}; reduced to {n} rows ({per_class}/class, seed {seed})",
    )


def write_dataset_csv(ds: LabeledDataset, path) -> None:
    """Serialize as CSV: feature columns at full precision plus a final label column."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(list(ds.feature_names) + ["label"])
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def read_dataset_csv(path) -> LabeledDataset:
    """Load a CSV produced by write_dataset_csv."""
    table = load_csv(path)
    if table.column_names[-1] != "label":
        raise ValueError(f"{path} has no trailing 'label' column")
    if not table.rows:
        raise ValueError(f"{path} contains no data rows")
    features = np.array(
        [[float(c) for c in row[:-1]] for row in table.rows], dtype=np.float64
    )
    labels = np.array([int(row[-1]) for row in table.rows], dtype=np.int64)
    return LabeledDataset(
        features, labels, table.column_names[:-1], f"loaded {path}"
    )
