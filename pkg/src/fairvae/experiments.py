"""Config-driven experiment runner: grids, ablations, sweeps, exports.

Every output file embeds the config hash and the seed list, and all floats
are written with round-trip ``repr`` so a rerun under the same hash is
byte-identical. Cells (backbone x method x ratio x seed) run independently;
a failing cell is recorded as FAILED and the run continues.
"""

from __future__ import annotations

import json
import hashlib
import os
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import data as D
from . import metrics as MX
from . import models as M
from . import training as T
from .objectives import ObjectiveConfig

DOWNLOAD_HINT = (
    "the canonical Adult census files are available from the UCI repository "
    "(https://archive.ics.uci.edu/ml/machine-learning-databases/adult/); "
    "scripts/fetch_adult.py downloads and verifies them"
)

ABLATION_VARIANTS = {
    "full": {},
    "no_zhat_decoder": {"use_zhat_in_decoder": False},
    "no_ztilde_decoder": {"use_ztilde_in_decoder": False},
    "no_entropy_zhat": {"use_entropy_zhat": False},
    "no_entropy_ztilde": {"use_entropy_ztilde": False},
}

SWEEP_AXES = ("lambda", "unlabeled_fraction")


@dataclass
class ExperimentConfig:
    train_path: str = "data/adult/adult.data"
    test_path: str = "data/adult/adult.test"
    output_dir: str = "results"
    backbones: list = field(default_factory=lambda: ["lr", "dnn", "fm"])
    methods: list = field(default_factory=lambda: list(T.METHODS))
    label_ratios: list = field(default_factory=lambda: [0.1, 0.2, 0.5])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    lambda_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.4, 1.0, 4.0])
    unlabeled_fractions: list = field(
        default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    grl_lambda: float = 0.4
    epochs: int = 50
    batch_size: int = 128
    lr: float = 0.01
    hidden_dim: int = 256
    latent_dim: int = 32
    fm_factors: int = 16
    dropout_rate: float = 0.2
    head_hidden: int = 0
    st_threshold: float = 0.9
    val_frac: float = 0.1
    ablation_ratio: float = 0.2
    ablation_backbone: str = "fm"
    sweep_backbone: str = "fm"
    sweep_ratio: float = 0.2
    include_sensitive_feature: bool = False
    use_zhat_in_decoder: bool = True
    use_ztilde_in_decoder: bool = True
    use_entropy_zhat: bool = True
    use_entropy_ztilde: bool = True
    negate_entropy_zhat: bool = False
    workers: int = 1
    save_checkpoints: bool = True
    save_logs: bool = True

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        raw.update(overrides or {})
        known = set(cls.__dataclass_fields__)  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise D.ConfigError(
                f"unknown config keys: {sorted(unknown)}; known keys: {sorted(known)}"
            )
        return cls(**raw)

    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            use_zhat_in_decoder=self.use_zhat_in_decoder,
            use_ztilde_in_decoder=self.use_ztilde_in_decoder,
            use_entropy_zhat=self.use_entropy_zhat,
            use_entropy_ztilde=self.use_entropy_ztilde,
            negate_entropy_zhat=self.negate_entropy_zhat,
        )


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def output_root(cfg: ExperimentConfig) -> str:
    root = os.environ.get("FAIRVAE_OUTPUT_ROOT", "")
    path = os.path.join(root, cfg.output_dir) if root else cfg.output_dir
    os.makedirs(path, exist_ok=True)
    return path


# per-process cache of preprocessed datasets, keyed by paths + flags
_DATA_CACHE: dict = {}


def load_dataset(cfg: ExperimentConfig):
    key = (cfg.train_path, cfg.test_path, cfg.include_sensitive_feature)
    if key not in _DATA_CACHE:
        for path in (cfg.train_path, cfg.test_path):
            if not os.path.exists(path):
                raise FileNotFoundError(
                    f"dataset file not found: {path}; {DOWNLOAD_HINT}"
                )
        train_records, test_records = D.load_adult(cfg.train_path, cfg.test_path)
        train_samples, stats = D.preprocess(
            train_records, include_sensitive=cfg.include_sensitive_feature)
        test_samples, _ = D.preprocess(
            test_records, stats, include_sensitive=cfg.include_sensitive_feature)
        _DATA_CACHE[key] = (train_samples, test_samples, stats)
    return _DATA_CACHE[key]


def _cell_name(backbone, method, ratio, seed, **extra):
    parts = [backbone, method, f"r{ratio}", f"s{seed}"]
    parts += [f"{k}{v}" for k, v in sorted(extra.items())]
    return "_".join(str(p) for p in parts)


def _method_spec(cfg: ExperimentConfig, backbone: str, method: str,
                 ratio: float, seed: int, grl_lambda: float | None = None,
                 objective: ObjectiveConfig | None = None) -> T.MethodSpec:
    return T.MethodSpec(
        backbone=backbone, method=method,
        grl_lambda=cfg.grl_lambda if grl_lambda is None else grl_lambda,
        label_ratio=ratio, seed=seed, st_threshold=cfg.st_threshold,
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
        hidden_dim=cfg.hidden_dim, latent_dim=cfg.latent_dim,
        fm_factors=cfg.fm_factors, dropout_rate=cfg.dropout_rate,
        head_hidden=cfg.head_hidden,
        objective=objective if objective is not None else cfg.objective(),
    )


def run_cell(cfg: ExperimentConfig, backbone: str, method: str, ratio: float,
             seed: int, grl_lambda: float | None = None,
             objective: ObjectiveConfig | None = None,
             unlabeled_fraction: float | None = None,
             cell_name: str | None = None) -> dict:
    """Train and evaluate one experiment cell; returns a raw results row."""
    name = cell_name or _cell_name(backbone, method, ratio, seed)
    train_samples, test_samples, stats = load_dataset(cfg)
    split = D.split_and_mask(train_samples, cfg.val_frac, ratio, seed,
                             test_samples=test_samples)
    if unlabeled_fraction is not None:
        split = split.with_unlabeled_fraction(unlabeled_fraction)
    root = output_root(cfg)
    log_writer = None
    log_fh = None
    if cfg.save_logs:
        os.makedirs(os.path.join(root, "logs"), exist_ok=True)
        log_fh = open(os.path.join(root, "logs", f"{name}.jsonl"), "w",
                      encoding="utf-8")
        log_fh.write(json.dumps({"config_hash": config_hash(cfg),
                                 "cell": name, "seed": seed}) + "\n")
        def log_writer(record):
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
    spec = _method_spec(cfg, backbone, method, ratio, seed,
                        grl_lambda=grl_lambda, objective=objective)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bundle, report = T.train(spec, split, log_writer=log_writer)
    finally:
        if log_fh is not None:
            log_fh.close()
    if report.shadow_reads_during_training != 0:
        raise RuntimeError(
            f"{name}: training read {report.shadow_reads_during_training} "
            f"shadow attribute values"
        )
    probs = T.predict_probs(bundle, split.test_x)
    labels = probs.argmax(axis=1)
    r_f, _, _ = M.encode(bundle, split.test_x, training=False)
    fairness = MX.fairness_report(split.test_y, labels, probs[:, 1],
                                  split.test_z, r_f.value, seed=seed)
    if cfg.save_checkpoints:
        os.makedirs(os.path.join(root, "checkpoints"), exist_ok=True)
        M.save_bundle(
            bundle, os.path.join(root, "checkpoints", f"{name}.ckpt"),
            config_hash=config_hash(cfg), seed=seed,
            extra={"cell": name, "stats": _stats_payload(stats),
                   "method": method, "label_ratio": ratio},
        )
    row = {
        "cell": name, "backbone": backbone, "method": method, "ratio": ratio,
        "seed": seed, "status": "OK", **fairness.as_dict(),
        "selected_epoch": report.selected_epoch,
    }
    if grl_lambda is not None:
        row["grl_lambda"] = grl_lambda
    if unlabeled_fraction is not None:
        row["unlabeled_fraction"] = unlabeled_fraction
    if report.pseudo_label_count is not None:
        row["pseudo_label_count"] = report.pseudo_label_count
    return row


def _stats_payload(stats: D.Stats) -> dict:
    return {
        "cat_vocab": stats.cat_vocab, "cat_mode": stats.cat_mode,
        "num_mean": stats.num_mean, "num_std": stats.num_std,
        "include_sensitive": stats.include_sensitive,
    }


def _stats_from_payload(payload: dict) -> D.Stats:
    return D.Stats(payload["cat_vocab"], payload["cat_mode"],
                   payload["num_mean"], payload["num_std"],
                   payload["include_sensitive"])


def _run_cell_task(args):
    cfg_dict, kwargs = args
    cfg = ExperimentConfig(**cfg_dict)
    try:
        return run_cell(cfg, **kwargs)
    except Exception as exc:  # cell isolation: record and continue
        return {
            "cell": kwargs.get("cell_name") or _cell_name(
                kwargs["backbone"], kwargs["method"], kwargs["ratio"],
                kwargs["seed"]),
            "backbone": kwargs["backbone"], "method": kwargs["method"],
            "ratio": kwargs["ratio"], "seed": kwargs["seed"],
            "status": f"FAILED: {type(exc).__name__}: {exc}",
            "traceback": traceback.format_exc(limit=3),
        }


def _execute(cfg: ExperimentConfig, cell_kwargs: list[dict]) -> list[dict]:
    tasks = [(asdict(cfg), kw) for kw in cell_kwargs]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_run_cell_task, tasks))
    else:
        rows = [_run_cell_task(t) for t in tasks]
    return sorted(rows, key=lambda r: r["cell"])


@dataclass
class ResultsTable:
    kind: str
    config_hash: str
    seeds: list
    raw_rows: list
    aggregated: list
    group_keys: tuple

    def ok_rows(self):
        return [r for r in self.raw_rows if r["status"] == "OK"]

    def render_text(self) -> str:
        lines = [f"# kind={self.kind} config_hash={self.config_hash} "
                 f"seeds={self.seeds}"]
        if self.kind == "experiments":
            ratios = sorted({r["ratio"] for r in self.aggregated})
            header = f"{'Method':24s}" + "".join(
                f" | {'%g' % ratio + ':':<7s}Acc    DP     OPP   " for ratio in ratios)
            lines.append(header)
            lines.append("-" * len(header))
            pairs = []
            for row in self.aggregated:
                pair = (row["backbone"], row["method"])
                if pair not in pairs:
                    pairs.append(pair)
            for backbone, method in pairs:
                cells = []
                for ratio in ratios:
                    match = [r for r in self.aggregated
                             if (r["backbone"], r["method"], r["ratio"])
                             == (backbone, method, ratio)]
                    if match and match[0]["n_ok"] > 0:
                        r = match[0]
                        cells.append(f" |        {r['accuracy']:.4f} "
                                     f"{r['dp_gap']:.4f} {r['opp_gap']:.4f}")
                    else:
                        cells.append(" |        FAILED" + " " * 13)
                lines.append(f"{backbone + '+' + method:24s}" + "".join(cells))
        else:
            keys = [k for k in self.group_keys]
            metrics = ["accuracy", "dp_gap", "opp_gap"]
            header = " ".join(f"{k:>20s}" for k in keys) + "".join(
                f" {m + '_mean':>14s} {m + '_std':>14s}" for m in metrics)
            lines.append(header)
            for row in self.aggregated:
                cells = " ".join(f"{str(row[k]):>20s}" for k in keys)
                for m in metrics:
                    cells += f" {row[m]:14.4f} {row[m + '_std']:14.4f}"
                lines.append(cells)
        return "\n".join(lines) + "\n"


def _aggregate(rows: list[dict], group_keys: tuple) -> list[dict]:
    metrics = ["accuracy", "auc", "dp_gap", "opp_gap", "probe_accuracy"]
    groups: dict[tuple, list[dict]] = {}
    order: list[tuple] = []
    for row in rows:
        key = tuple(row.get(k) for k in group_keys)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    aggregated = []
    for key in order:
        members = groups[key]
        ok = [r for r in members if r["status"] == "OK"]
        agg = dict(zip(group_keys, key))
        agg["n_ok"] = len(ok)
        agg["n_failed"] = len(members) - len(ok)
        for metric in metrics:
            values = [r[metric] for r in ok]
            agg[metric] = float(np.mean(values)) if values else float("nan")
            agg[metric + "_std"] = float(np.std(values)) if values else float("nan")
        aggregated.append(agg)
    return aggregated


def _write_csv(path, rows: list[dict], header_comment: str) -> None:
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns and key != "traceback":
                columns.append(key)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header_comment + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for col in columns:
                value = row.get(col, "")
                # round-trip repr of a builtin float keeps reruns byte-identical
                cells.append(repr(float(value)) if isinstance(value, float)
                             else str(value))
            fh.write(",".join(cells) + "\n")


def _emit(cfg: ExperimentConfig, table: ResultsTable, stem: str) -> ResultsTable:
    root = output_root(cfg)
    comment = (f"# kind={table.kind} config_hash={table.config_hash} "
               f"seeds={table.seeds}")
    _write_csv(os.path.join(root, f"{stem}_raw.csv"), table.raw_rows, comment)
    _write_csv(os.path.join(root, f"{stem}_agg.csv"), table.aggregated, comment)
    with open(os.path.join(root, f"{stem}.txt"), "w", encoding="utf-8") as fh:
        fh.write(table.render_text())
    return table


def run_experiments(cfg: ExperimentConfig) -> ResultsTable:
    """The full grid: backbone x method x label ratio x seed."""
    load_dataset(cfg)  # fail fast with the download hint if files are missing
    cells = [
        dict(backbone=b, method=m, ratio=r, seed=s)
        for b in cfg.backbones for m in cfg.methods
        for r in cfg.label_ratios for s in cfg.seeds
    ]
    rows = _execute(cfg, cells)
    table = ResultsTable(
        kind="experiments", config_hash=config_hash(cfg), seeds=cfg.seeds,
        raw_rows=rows,
        aggregated=_aggregate(rows, ("backbone", "method", "ratio")),
        group_keys=("backbone", "method", "ratio"),
    )
    return _emit(cfg, table, "results")


def run_ablation(cfg: ExperimentConfig) -> ResultsTable:
    """Single-switch-off variants of the full model at the ablation ratio."""
    load_dataset(cfg)
    cells = []
    for variant, switches in ABLATION_VARIANTS.items():
        objective = replace(cfg.objective(), **switches)
        for seed in cfg.seeds:
            cells.append(dict(
                backbone=cfg.ablation_backbone, method="fairvae",
                ratio=cfg.ablation_ratio, seed=seed, objective=objective,
                cell_name=_cell_name(cfg.ablation_backbone, "fairvae",
                                     cfg.ablation_ratio, seed, variant=variant),
            ))
    rows = _execute(cfg, cells)
    for row in rows:
        row["variant"] = row["cell"].split("variant")[-1]
    table = ResultsTable(
        kind="ablation", config_hash=config_hash(cfg), seeds=cfg.seeds,
        raw_rows=rows, aggregated=_aggregate(rows, ("variant",)),
        group_keys=("variant",),
    )
    return _emit(cfg, table, "ablation")


def run_sweep(cfg: ExperimentConfig, axis: str) -> ResultsTable:
    """One aggregated row per grid point along lambda or unlabeled fraction."""
    if axis not in SWEEP_AXES:
        raise D.ConfigError(f"unknown sweep axis {axis!r}; expected {SWEEP_AXES}")
    load_dataset(cfg)
    cells = []
    if axis == "lambda":
        if not cfg.lambda_grid:
            raise D.ConfigError("lambda sweep needs a non-empty lambda_grid")
        for lam in cfg.lambda_grid:
            for seed in cfg.seeds:
                cells.append(dict(
                    backbone=cfg.sweep_backbone, method="fairvae",
                    ratio=cfg.sweep_ratio, seed=seed, grl_lambda=lam,
                    cell_name=_cell_name(cfg.sweep_backbone, "fairvae",
                                         cfg.sweep_ratio, seed, lam=lam),
                ))
        group = ("grl_lambda",)
    else:
        if not cfg.unlabeled_fractions:
            raise D.ConfigError(
                "unlabeled-fraction sweep needs a non-empty unlabeled_fractions")
        for frac in cfg.unlabeled_fractions:
            for seed in cfg.seeds:
                cells.append(dict(
                    backbone=cfg.sweep_backbone, method="fairvae",
                    ratio=cfg.sweep_ratio, seed=seed, unlabeled_fraction=frac,
                    cell_name=_cell_name(cfg.sweep_backbone, "fairvae",
                                         cfg.sweep_ratio, seed, frac=frac),
                ))
        group = ("unlabeled_fraction",)
    rows = _execute(cfg, cells)
    table = ResultsTable(
        kind=f"sweep_{axis}", config_hash=config_hash(cfg), seeds=cfg.seeds,
        raw_rows=rows, aggregated=_aggregate(rows, group), group_keys=group,
    )
    return _emit(cfg, table, f"sweep_{axis}")


# ---------------------------------------------------------------------------
# checkpoint consumers


def _load_test_set(checkpoint_header: dict, test_path):
    stats = _stats_from_payload(checkpoint_header["extra"]["stats"])
    records = D._read_adult_file(test_path)
    samples, _ = D.preprocess(records, stats,
                              include_sensitive=stats.include_sensitive)
    x = np.stack([s.x for s in samples])
    y = np.array([s.y for s in samples], dtype=int)
    z = np.array([s.z for s in samples], dtype=int)
    return x, y, z


def evaluate_checkpoint(checkpoint_path, test_path, seed: int = 0) -> MX.FairnessReport:
    """Load a checkpoint and produce a FairnessReport on an Adult-format file."""
    bundle, header = M.load_bundle(checkpoint_path)
    x, y, z = _load_test_set(header, test_path)
    probs = T.predict_probs(bundle, x)
    labels = probs.argmax(axis=1)
    r_f, _, _ = M.encode(bundle, x, training=False)
    return MX.fairness_report(y, labels, probs[:, 1], z, r_f.value, seed=seed)


def export_embeddings(checkpoint_path, test_path, out_path) -> int:
    """Write one CSV row per test sample: bias-free representation values,
    true attribute, true label, predicted label. Returns the row count."""
    bundle, header = M.load_bundle(checkpoint_path)
    x, y, z = _load_test_set(header, test_path)
    r_f, _, _ = M.encode(bundle, x, training=False)
    labels = T.predict_probs(bundle, x).argmax(axis=1)
    dim = r_f.value.shape[1]
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={header['config_hash']} seed={header['seed']}\n")
        fh.write(",".join([f"r_{i}" for i in range(dim)]
                          + ["attribute", "label", "predicted"]) + "\n")
        for i in range(len(y)):
            fh.write(",".join([repr(float(v)) for v in r_f.value[i]]
                              + [str(z[i]), str(y[i]), str(labels[i])]) + "\n")
    return len(y)
