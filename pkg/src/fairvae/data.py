"""Adult-format tabular ingestion, preprocessing, splitting and attribute masking.

The sensitive attribute (the ``sex`` column) is removed from the feature
vector by default and kept as a separate target ``z``. Masking hides ``z``
for a seed-deterministic share of the training set; the true values of masked
samples are retained in a shadow field that only evaluation code should touch
(reads are counted so experiments can assert training never looked).
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np


class ParseError(ValueError):
    """A row failed to parse (message includes file and line number)."""


class SchemaError(ValueError):
    """A row does not match the expected column layout."""


class ConfigError(ValueError):
    """Invalid split or masking configuration."""


NUMERIC = "numeric"
CATEGORICAL = "categorical"

# canonical Adult census schema: (column name, kind)
ADULT_SCHEMA = [
    ("age", NUMERIC),
    ("workclass", CATEGORICAL),
    ("fnlwgt", NUMERIC),
    ("education", CATEGORICAL),
    ("education-num", NUMERIC),
    ("marital-status", CATEGORICAL),
    ("occupation", CATEGORICAL),
    ("relationship", CATEGORICAL),
    ("race", CATEGORICAL),
    ("sex", CATEGORICAL),
    ("capital-gain", NUMERIC),
    ("capital-loss", NUMERIC),
    ("hours-per-week", NUMERIC),
    ("native-country", CATEGORICAL),
    ("income", CATEGORICAL),
]
SENSITIVE_COLUMN = "sex"
LABEL_COLUMN = "income"
POSITIVE_LABEL = ">50K"
MISSING = "?"

RawRecord = dict  # column name -> stripped string value


def _read_adult_file(path) -> list[RawRecord]:
    names = [c for c, _ in ADULT_SCHEMA]
    numeric_cols = {c for c, kind in ADULT_SCHEMA if kind == NUMERIC}
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != len(names):
                raise SchemaError(
                    f"{path}:{lineno}: expected {len(names)} fields, "
                    f"got {len(fields)}"
                )
            record = dict(zip(names, fields))
            # the test file suffixes labels with a period
            record[LABEL_COLUMN] = record[LABEL_COLUMN].rstrip(".")
            for col in numeric_cols:
                if record[col] != MISSING:
                    try:
                        float(record[col])
                    except ValueError:
                        raise ParseError(
                            f"{path}:{lineno}: column {col!r} is not numeric: "
                            f"{record[col]!r}"
                        ) from None
            records.append(record)
    if not records:
        warnings.warn(f"{path}: no records found", stacklevel=2)
    return records


def load_adult(train_path, test_path) -> tuple[list[RawRecord], list[RawRecord]]:
    """Read the Adult train/test files (32,561 and 16,281 rows for the canonical pair)."""
    return _read_adult_file(train_path), _read_adult_file(test_path)


@dataclass
class Stats:
    """Train-split statistics that define the feature encoding."""

    cat_vocab: dict
    cat_mode: dict
    num_mean: dict
    num_std: dict
    include_sensitive: bool = False

    @property
    def feature_columns(self):
        cols = []
        for name, kind in ADULT_SCHEMA:
            if name == LABEL_COLUMN:
                continue
            if name == SENSITIVE_COLUMN and not self.include_sensitive:
                continue
            cols.append((name, kind))
        return cols

    @property
    def feature_dim(self) -> int:
        dim = 0
        for name, kind in self.feature_columns:
            dim += 1 if kind == NUMERIC else len(self.cat_vocab[name])
        return dim

    def schema_hash(self) -> str:
        payload = json.dumps(
            {
                "vocab": self.cat_vocab,
                "mode": self.cat_mode,
                "mean": self.num_mean,
                "std": self.num_std,
                "include_sensitive": self.include_sensitive,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class Sample:
    """One encoded example: features, task label, sensitive attribute."""

    x: np.ndarray
    y: int
    z: int


def _fit_stats(records, include_sensitive: bool) -> Stats:
    cat_vocab, cat_mode, num_mean, num_std = {}, {}, {}, {}
    for name, kind in ADULT_SCHEMA:
        if name == LABEL_COLUMN:
            continue
        values = [r[name] for r in records]
        if kind == CATEGORICAL:
            observed = [v for v in values if v != MISSING]
            counts = {}
            for v in observed:
                counts[v] = counts.get(v, 0) + 1
            cat_vocab[name] = sorted(counts)
            # deterministic mode: highest count, ties broken alphabetically
            cat_mode[name] = min(sorted(counts), key=lambda v: (-counts[v], v)) \
                if counts else ""
        else:
            observed = np.array([float(v) for v in values if v != MISSING])
            mean = float(observed.mean()) if observed.size else 0.0
            std = float(observed.std()) if observed.size else 1.0
            num_mean[name] = mean
            num_std[name] = std if std > 0 else 1.0
    return Stats(cat_vocab, cat_mode, num_mean, num_std, include_sensitive)


def preprocess(records, stats: Stats | None = None,
               include_sensitive: bool = False) -> tuple[list[Sample], Stats]:
    """Encode records as one-hot + standardized-numeric feature vectors.

    Pass the train-split ``stats`` when encoding test data so vocabularies and
    standardization constants come from training. Unknown categories encode as
    an all-zero block; missing cells are imputed with the train mode/mean.
    """
    if stats is None:
        stats = _fit_stats(records, include_sensitive)
    feature_cols = stats.feature_columns
    dim = stats.feature_dim
    samples = []
    for r in records:
        x = np.zeros(dim)
        pos = 0
        for name, kind in feature_cols:
            if kind == NUMERIC:
                raw = r[name]
                value = stats.num_mean[name] if raw == MISSING else float(raw)
                x[pos] = (value - stats.num_mean[name]) / stats.num_std[name]
                pos += 1
            else:
                vocab = stats.cat_vocab[name]
                raw = r[name]
                if raw == MISSING:
                    raw = stats.cat_mode[name]
                try:
                    x[pos + vocab.index(raw)] = 1.0
                except ValueError:
                    pass  # unseen category: leave the block all zeros
                pos += len(vocab)
        y = int(r[LABEL_COLUMN] == POSITIVE_LABEL)
        sex = r[SENSITIVE_COLUMN]
        if sex == MISSING:
            sex = stats.cat_mode[SENSITIVE_COLUMN]
        z = int(sex == "Female")
        samples.append(Sample(x=x, y=y, z=z))
    return samples, stats


def _stack(samples, idx):
    if len(idx) == 0:
        dim = samples[0].x.shape[0] if samples else 0
        return (np.zeros((0, dim)), np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    x = np.stack([samples[i].x for i in idx])
    y = np.array([samples[i].y for i in idx], dtype=int)
    z = np.array([samples[i].z for i in idx], dtype=int)
    return x, y, z


class DatasetSplit:
    """Train partition (labeled / unlabeled / validation) plus the test set.

    Unlabeled samples expose only features and task labels; their true
    attributes sit in a shadow array whose accessor counts every read.
    """

    def __init__(self, lab, unl, val, test, lab_index, unl_index, val_index,
                 seed: int):
        self.lab_x, self.lab_y, self.lab_z = lab
        self.unl_x, self.unl_y, self._shadow_unl_z = unl
        self.val_x, self.val_y, self.val_z = val
        self.test_x, self.test_y, self.test_z = test
        self.lab_index = lab_index
        self.unl_index = unl_index
        self.val_index = val_index
        self.seed = seed
        self.shadow_reads = 0

    @property
    def n_labeled(self) -> int:
        return len(self.lab_y)

    @property
    def n_unlabeled(self) -> int:
        return len(self.unl_y)

    @property
    def feature_dim(self) -> int:
        return self.lab_x.shape[1]

    def shadow_unlabeled_attributes(self) -> np.ndarray:
        """True attributes of masked samples; for evaluation only (reads counted)."""
        self.shadow_reads += 1
        return self._shadow_unl_z.copy()

    def training_view(self) -> dict:
        """Everything training is allowed to see."""
        return {
            "labeled": {"x": self.lab_x, "y": self.lab_y, "z": self.lab_z},
            "unlabeled": {"x": self.unl_x, "y": self.unl_y},
            "validation": {"x": self.val_x, "y": self.val_y, "z": self.val_z},
        }

    def all_train_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Labeled + unlabeled features/labels in original dataset order.

        Methods that ignore attribute labels train on this stream so their
        results cannot depend on the masking ratio.
        """
        idx = np.concatenate([self.lab_index, self.unl_index])
        order = np.argsort(idx, kind="stable")
        x = np.concatenate([self.lab_x, self.unl_x])[order]
        y = np.concatenate([self.lab_y, self.unl_y])[order]
        return x, y

    def with_pseudo_labels(self, adopt_mask: np.ndarray,
                           pseudo_z: np.ndarray) -> "DatasetSplit":
        """Move the masked samples selected by ``adopt_mask`` into the labeled
        set under the given pseudo attributes. Shadow values travel with the
        remaining unlabeled samples; none are read here."""
        adopt_mask = np.asarray(adopt_mask, dtype=bool)
        if adopt_mask.shape != (self.n_unlabeled,):
            raise ConfigError(
                f"adopt mask has shape {adopt_mask.shape}, expected "
                f"({self.n_unlabeled},)"
            )
        lab = (
            np.concatenate([self.lab_x, self.unl_x[adopt_mask]]),
            np.concatenate([self.lab_y, self.unl_y[adopt_mask]]),
            np.concatenate([self.lab_z, np.asarray(pseudo_z, dtype=int)]),
        )
        keep = ~adopt_mask
        unl = (self.unl_x[keep], self.unl_y[keep], self._shadow_unl_z[keep])
        return DatasetSplit(
            lab, unl,
            (self.val_x, self.val_y, self.val_z),
            (self.test_x, self.test_y, self.test_z),
            np.concatenate([self.lab_index, self.unl_index[adopt_mask]]),
            self.unl_index[keep], self.val_index, self.seed,
        )

    def with_unlabeled_fraction(self, fraction: float) -> "DatasetSplit":
        """A copy keeping only the first ``fraction`` of the unlabeled pool."""
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError(f"unlabeled fraction must be in [0, 1], got {fraction}")
        keep = int(math.floor(fraction * self.n_unlabeled))
        out = DatasetSplit(
            (self.lab_x, self.lab_y, self.lab_z),
            (self.unl_x[:keep], self.unl_y[:keep], self._shadow_unl_z[:keep]),
            (self.val_x, self.val_y, self.val_z),
            (self.test_x, self.test_y, self.test_z),
            self.lab_index, self.unl_index[:keep], self.val_index,
            self.seed,
        )
        return out


def split_and_mask(samples, val_frac: float, label_ratio: float, seed: int,
                   test_samples=()) -> DatasetSplit:
    """Carve validation, then mask attributes for all but ``label_ratio`` of the rest.

    The shuffle is fully determined by ``seed``; exactly
    ``floor(label_ratio * N_post_validation)`` samples keep their attribute.
    """
    if not 0.0 < val_frac < 1.0:
        raise ConfigError(f"val_frac must be in (0, 1), got {val_frac}")
    if not 0.0 < label_ratio <= 1.0:
        raise ConfigError(
            f"label_ratio must be in (0, 1]; the method needs some observed "
            f"attributes (got {label_ratio})"
        )
    n = len(samples)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    perm = rng.permutation(n)
    n_val = int(math.floor(val_frac * n))
    val_index = np.sort(perm[:n_val])
    rest = perm[n_val:]
    n_lab = int(math.floor(label_ratio * len(rest)))
    lab_index = np.sort(rest[:n_lab])
    unl_index = np.sort(rest[n_lab:])
    return DatasetSplit(
        _stack(samples, lab_index),
        _stack(samples, unl_index),
        _stack(samples, val_index),
        _stack(test_samples, np.arange(len(test_samples))),
        lab_index, unl_index, val_index, seed,
    )


@dataclass
class Batch:
    """One mini-batch; ``z`` is None when attributes are masked."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None

    def __len__(self):
        return len(self.y)


def _tiled_order(rng, n: int, total: int) -> np.ndarray:
    perm = rng.permutation(n)
    if n >= total:
        return perm
    reps = -(-total // n)
    return np.tile(perm, reps)[:total]


def batches(split: DatasetSplit, batch_size: int, seed: int, epoch: int):
    """Yield (labeled, unlabeled) batch pairs, cycling the shorter set.

    Steps per epoch = ceil(max(|labeled|, |unlabeled|) / batch_size); both
    sets are reshuffled per epoch from (seed, epoch).
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n_lab, n_unl = split.n_labeled, split.n_unlabeled
    longer = max(n_lab, n_unl)
    steps = -(-longer // batch_size)
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 0xBA7C4]))
    lab_order = _tiled_order(rng, n_lab, longer)
    unl_order = _tiled_order(rng, n_unl, longer) if n_unl else np.zeros(0, dtype=int)
    for i in range(steps):
        lo, hi = i * batch_size, min((i + 1) * batch_size, longer)
        li = lab_order[lo:hi]
        lab = Batch(split.lab_x[li], split.lab_y[li], split.lab_z[li])
        if n_unl:
            ui = unl_order[lo:hi]
            unl = Batch(split.unl_x[ui], split.unl_y[ui], None)
        else:
            unl = Batch(np.zeros((0, split.feature_dim)), np.zeros(0, dtype=int), None)
        yield lab, unl


def single_stream_batches(x: np.ndarray, y: np.ndarray, batch_size: int,
                          seed: int, epoch: int):
    """Plain mini-batches over one array pair, reshuffled per (seed, epoch)."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 0x51247]))
    perm = rng.permutation(len(y))
    for i in range(-(-len(y) // batch_size)):
        idx = perm[i * batch_size:(i + 1) * batch_size]
        yield Batch(x[idx], y[idx], None)


def save_cache(path, samples, stats: Stats) -> None:
    """Binary cache of preprocessed samples keyed by the schema hash."""
    x = np.stack([s.x for s in samples]) if samples else np.zeros((0, stats.feature_dim))
    y = np.array([s.y for s in samples], dtype=int)
    z = np.array([s.z for s in samples], dtype=int)
    meta = json.dumps({
        "schema_hash": stats.schema_hash(),
        "stats": {
            "cat_vocab": stats.cat_vocab,
            "cat_mode": stats.cat_mode,
            "num_mean": stats.num_mean,
            "num_std": stats.num_std,
            "include_sensitive": stats.include_sensitive,
        },
    })
    np.savez(path, x=x, y=y, z=z, meta=np.frombuffer(meta.encode(), dtype=np.uint8))


def load_cache(path, expect_schema_hash: str | None = None):
    """Load a preprocessing cache; returns (samples, stats)."""
    archive = np.load(path)
    meta = json.loads(archive["meta"].tobytes().decode())
    if expect_schema_hash is not None and meta["schema_hash"] != expect_schema_hash:
        raise ConfigError(
            f"cache schema hash {meta['schema_hash'][:12]} does not match "
            f"expected {expect_schema_hash[:12]}"
        )
    st = meta["stats"]
    stats = Stats(st["cat_vocab"], st["cat_mode"], st["num_mean"], st["num_std"],
                  st["include_sensitive"])
    samples = [Sample(x=x, y=int(y), z=int(z))
               for x, y, z in zip(archive["x"], archive["y"], archive["z"])]
    return samples, stats
