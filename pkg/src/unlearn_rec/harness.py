"""Config-driven two-phase experiment protocol.

Phase one (`run_experiment`) trains the base recommender, applies the
configured unlearning method, evaluates ranking quality, and persists an
append-only experiment directory.  Phase two (`run_attack`) loads the
released user embeddings back from such a directory and measures attribute
leakage.  Directories are self-describing: attacking a moved directory works
from its contents alone.

Wall-clock timings live in `timing.txt`, which is the one file whose bytes
are not reproducible across reruns; everything else is deterministic per
seed.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .attack import ATTACKER_KINDS, AttackReport, attack_embeddings
from .dataio import AttributeLabels
from .errors import ConfigError, DataError
from .recmetrics import RecReport, evaluate_model
from .recmodels import (EmbeddingModel, TrainHyperparams, build_norm_adjacency,
                        effective_embeddings, init_model, save_model, train)
from .unlearning import UNLEARN_METHODS, UnlearnHyperparams, run_unlearn

RECORD_VERSION = 1

MODEL_ALIASES = {"mf": "mf", "ncf": "mf", "lightgcn": "lightgcn", "lgcn": "lightgcn"}
ATTACKER_ALIASES = {"mlp": "mlp", "gbt": "gbt", "xgb": "gbt"}

_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainHyperparams)}
_UNLEARN_KEYS = {f.name for f in dataclasses.fields(UnlearnHyperparams)} - {
    "au_trade_off", "retrain_trade_off", "seed"}


@dataclass
class UnlearnConfig:
    method: str
    model: str
    dataset: str
    device: str | None = None
    au_trade_off: float = 1e-6
    retrain_trade_off: float = 1.0
    seed: int = 0
    data_dir: str | None = None
    lgcn_layers: int = 3
    train: dict = field(default_factory=dict)
    unlearn: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out = {"method": self.method, "model": self.model, "dataset": self.dataset,
               "au_trade_off": self.au_trade_off,
               "retrain_trade_off": self.retrain_trade_off, "seed": self.seed,
               "lgcn_layers": self.lgcn_layers}
        if self.device is not None:
            out["device"] = self.device
        if self.data_dir is not None:
            out["data_dir"] = self.data_dir
        if self.train:
            out["train"] = dict(self.train)
        if self.unlearn:
            out["unlearn"] = dict(self.unlearn)
        return out

    def train_hp(self) -> TrainHyperparams:
        hp = TrainHyperparams(seed=self.seed)
        for key, val in self.train.items():
            setattr(hp, key, type(getattr(hp, key))(val))
        return hp

    def unlearn_hp(self) -> UnlearnHyperparams:
        hp = UnlearnHyperparams(au_trade_off=self.au_trade_off,
                                retrain_trade_off=self.retrain_trade_off,
                                seed=self.seed)
        for key, val in self.unlearn.items():
            cur = getattr(hp, key)
            setattr(hp, key, val if isinstance(cur, str) else type(cur)(val))
        return hp


def parse_unlearn_config(obj) -> UnlearnConfig:
    """Parse and validate an experiment config (dict or JSON file path)."""
    if not isinstance(obj, dict):
        path = Path(obj)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    allowed = {"method", "model", "dataset", "device", "au_trade_off",
               "retrain_trade_off", "seed", "data_dir", "lgcn_layers",
               "train", "unlearn"}
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    for req in ("method", "model", "dataset"):
        if req not in obj:
            raise ConfigError(f"missing required config key {req!r}")
    method = str(obj["method"])
    if method not in UNLEARN_METHODS:
        raise ConfigError(f"method must be one of {UNLEARN_METHODS}, got {method!r}")
    model_raw = str(obj["model"])
    if model_raw not in MODEL_ALIASES:
        raise ConfigError(f"model must be one of {sorted(MODEL_ALIASES)}, got {model_raw!r}")
    train_over = dict(obj.get("train", {}))
    unknown_t = set(train_over) - _TRAIN_KEYS
    if unknown_t:
        raise ConfigError(f"unknown train key(s): {sorted(unknown_t)}")
    unlearn_over = dict(obj.get("unlearn", {}))
    unknown_u = set(unlearn_over) - _UNLEARN_KEYS
    if unknown_u:
        raise ConfigError(f"unknown unlearn key(s): {sorted(unknown_u)}")
    cfg = UnlearnConfig(
        method=method,
        model=MODEL_ALIASES[model_raw],
        dataset=str(obj["dataset"]),
        device=obj.get("device"),
        au_trade_off=float(obj.get("au_trade_off", 1e-6)),
        retrain_trade_off=float(obj.get("retrain_trade_off", 1.0)),
        seed=int(obj.get("seed", 0)),
        data_dir=obj.get("data_dir"),
        lgcn_layers=int(obj.get("lgcn_layers", 3)),
        train=train_over,
        unlearn=unlearn_over,
    )
    cfg.train_hp().validate()
    cfg.unlearn_hp().validate()
    return cfg


@dataclass
class AttackConfig:
    experiment: str
    attackers: tuple[str, ...] = ("mlp", "gbt")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    train_frac: float = 0.8


def parse_attack_config(obj) -> AttackConfig:
    if not isinstance(obj, dict):
        path = Path(obj)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    allowed = {"experiment", "attackers", "seeds", "train_frac"}
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown attack config key(s): {sorted(unknown)}")
    if "experiment" not in obj:
        raise ConfigError("missing required attack config key 'experiment'")
    attackers = []
    for kind in obj.get("attackers", ["mlp", "gbt"]):
        kind = str(kind).lower()
        if kind not in ATTACKER_ALIASES:
            raise ConfigError(f"attacker must be one of {sorted(ATTACKER_ALIASES)}, "
                              f"got {kind!r}")
        attackers.append(ATTACKER_ALIASES[kind])
    seeds = tuple(int(s) for s in obj.get("seeds", (0, 1, 2, 3, 4)))
    if not seeds:
        raise ConfigError("attack config needs at least one seed")
    frac = float(obj.get("train_frac", 0.8))
    if not 0.0 < frac < 1.0:
        raise ConfigError(f"train_frac must be in (0, 1), got {frac}")
    return AttackConfig(experiment=str(obj["experiment"]),
                        attackers=tuple(attackers), seeds=seeds, train_frac=frac)


# ---------------------------------------------------------------------------
# experiment records

def results_root() -> Path:
    return Path(os.environ.get("UNLEARN_RESULTS_DIR", "exp_results"))


@dataclass
class ExperimentRecord:
    path: Path
    meta: dict

    def load_final_user_embeddings(self) -> np.ndarray:
        arr = np.fromfile(self.path / "user_emb_final.f32", dtype="<f4")
        n, d = self.meta["n_users"], self.meta["d"]
        if arr.size != n * d:
            raise DataError(f"{self.path}/user_emb_final.f32: wrong size")
        return arr.reshape(n, d).astype(np.float64)

    def load_labels(self) -> AttributeLabels:
        arr = np.full(self.meta["n_users"], -1, dtype=np.int64)
        with open(self.path / "user_attr.tsv", encoding="utf-8") as fh:
            for line in fh:
                u, c = line.split("\t")
                arr[int(u)] = int(c)
        if (arr < 0).any():
            raise DataError(f"{self.path}/user_attr.tsv: incomplete labels")
        return AttributeLabels(labels=arr, class_names=tuple(self.meta["class_names"]))


def open_record(path) -> ExperimentRecord:
    path = Path(path)
    meta_path = path / "record.json"
    if not meta_path.exists():
        raise DataError(f"{path}: no record.json (not an experiment directory)")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format_version") != RECORD_VERSION:
        raise DataError(f"{path}: record version mismatch")
    return ExperimentRecord(path=path, meta=meta)


def _write_kv(path: Path, pairs, append=False):
    with open(path, "a" if append else "w", encoding="utf-8", newline="\n") as fh:
        for key, val in pairs:
            fh.write(f"{key}={val}\n")


def _fmt(v: float) -> str:
    return repr(float(v))


def _resolve_dataset_dir(cfg: UnlearnConfig) -> Path:
    cand = Path(cfg.dataset)
    if cand.is_dir():
        return cand
    root = Path(cfg.data_dir) if cfg.data_dir else Path("data")
    cand = root / cfg.dataset
    if cand.is_dir():
        return cand
    raise DataError(f"dataset {cfg.dataset!r} not found (looked at {cfg.dataset!r} "
                    f"and {cand})")


def _record_dir_name(cfg: UnlearnConfig) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return f"{Path(cfg.dataset).name}_{cfg.model}_{cfg.method}_{cfg.seed}_{stamp}"


def run_experiment(config, out_dir=None, config_bytes: bytes | None = None) -> ExperimentRecord:
    """Train, unlearn, evaluate, persist; returns the experiment record.

    `config` is an UnlearnConfig, dict, or JSON path.  `config_bytes`
    preserves the raw config file for the record snapshot.
    """
    if isinstance(config, (str, Path)) and config_bytes is None:
        config_bytes = Path(config).read_bytes()
    cfg = config if isinstance(config, UnlearnConfig) else parse_unlearn_config(config)
    if cfg.device is not None:
        import warnings
        warnings.warn("config key 'device' is accepted but ignored (CPU only)")

    if out_dir is None:
        out_dir = results_root() / _record_dir_name(cfg)
        n = 1
        while out_dir.exists():
            out_dir = out_dir.with_name(out_dir.name + f"-{n}")
            n += 1
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    snapshot = config_bytes if config_bytes is not None else (
        json.dumps(cfg.to_json_dict(), indent=2, sort_keys=True) + "\n").encode("utf-8")
    (out_dir / "config.json").write_bytes(snapshot)
    log: list[tuple[str, object]] = [("status", "incomplete")]
    _write_kv(out_dir / "log.txt", log)

    phase = "load_data"
    try:
        data_dir = _resolve_dataset_dir(cfg)
        split, labels = dataio.load_split(data_dir)
        if labels is None:
            raise DataError(f"{data_dir}: no attribute labels; unlearning needs them")
        adj = build_norm_adjacency(split.train) if cfg.model == "lightgcn" else None
        hp_train = cfg.train_hp()
        hp_unlearn = cfg.unlearn_hp()

        phase = "train"
        t0 = time.perf_counter()
        base = None
        train_losses: list[float] = []
        if cfg.method in ("original", "u2u", "d2d"):
            model0 = init_model(cfg.model, split.train.n_users, split.train.n_items,
                                hp_train, lgcn_layers=cfg.lgcn_layers)
            base, train_losses = train(model0, split, hp_train, adj=adj)
        wall_train = time.perf_counter() - t0

        phase = "unlearn"
        result = run_unlearn(base if base is not None else
                             init_model(cfg.model, split.train.n_users,
                                        split.train.n_items, hp_train,
                                        lgcn_layers=cfg.lgcn_layers),
                             labels, cfg.method, hp_unlearn,
                             split=split, hp_train=hp_train, adj=adj)

        phase = "evaluate"
        report = evaluate_model(result.model, split, adj=adj)

        phase = "persist"
        if base is not None:
            save_model(base, out_dir / "base_model", seed=cfg.seed)
        save_model(result.model, out_dir / "unlearned_model", seed=cfg.seed)
        ue_final, _ = effective_embeddings(result.model, adj)
        ue_final.astype("<f4").tofile(out_dir / "user_emb_final.f32")
        with open(out_dir / "user_attr.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for u in range(split.train.n_users):
                fh.write(f"{u}\t{int(labels.labels[u])}\n")
        if train_losses:
            _write_lines(out_dir / "train_trace.tsv",
                         (f"{e}\t{_fmt(loss)}" for e, loss in enumerate(train_losses)))
        _write_lines(out_dir / "unlearn_trace.tsv",
                     (f"{s}\t{_fmt(dist)}\t{_fmt(reg)}\t"
                      f"{_fmt(_trace_total(cfg.method, hp_unlearn, dist, reg))}"
                      for s, dist, reg in result.trace))
        meta = {
            "format_version": RECORD_VERSION,
            "dataset": cfg.dataset,
            "model": cfg.model,
            "method": cfg.method,
            "seed": cfg.seed,
            "n_users": split.train.n_users,
            "n_items": split.train.n_items,
            "d": result.model.d,
            "class_names": list(labels.class_names),
            "status": "complete",
        }
        with open(out_dir / "record.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")

        log = [("status", "complete"), ("dataset", cfg.dataset),
               ("model", cfg.model), ("method", cfg.method), ("seed", cfg.seed)]
        log += [(k, _fmt(v)) for k, v in sorted(report.flat().items())]
        _write_kv(out_dir / "log.txt", log)
        _write_kv(out_dir / "timing.txt",
                  [("wall_time_train_seconds", _fmt(wall_train)),
                   ("wall_time_unlearn_seconds", _fmt(result.wall_time_seconds))])
        record = ExperimentRecord(path=out_dir, meta=meta)
        record.rec_report = report
        record.unlearn_result = result
        record.wall_time_train = wall_train
        return record
    except Exception as exc:
        _write_kv(out_dir / "log.txt",
                  [("status", "incomplete"), ("failed_phase", phase),
                   ("error", type(exc).__name__)])
        raise type(exc)(f"[phase {phase}] {exc}") from exc


def _trace_total(method: str, hp: UnlearnHyperparams, dist: float, reg: float) -> float:
    if method in ("u2u", "d2d", "original"):
        return dist + hp.au_trade_off * reg
    return reg + hp.retrain_trade_off * dist  # in-training: reg column holds BPR


def _write_lines(path: Path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def run_attack(config) -> list[AttackReport]:
    """Attack a completed experiment record; append reports to its attack log."""
    cfg = config if isinstance(config, AttackConfig) else parse_attack_config(config)
    path = Path(cfg.experiment)
    if not path.is_dir():
        path = results_root() / cfg.experiment
    if not path.is_dir():
        raise DataError(f"experiment {cfg.experiment!r} not found")
    record = open_record(path)
    if record.meta.get("status") != "complete":
        raise DataError(f"{path}: experiment record is incomplete")
    rows = record.load_final_user_embeddings()
    labels = record.load_labels()
    reports = attack_embeddings(rows, labels, kinds=cfg.attackers,
                                seeds=cfg.seeds, train_frac=cfg.train_frac)
    for rep in reports:
        pairs = [("attack", rep.kind), ("seeds", ",".join(map(str, cfg.seeds))),
                 ("train_frac", repr(cfg.train_frac))]
        for fold in rep.folds:
            for name in ("accuracy", "precision", "recall", "auc"):
                val = getattr(fold, name)
                pairs.append((f"fold{fold.seed}_{name}",
                              "nan" if val is None else _fmt(val)))
        for name in ("accuracy", "precision", "recall", "auc"):
            val = getattr(rep, name)
            pairs.append((f"mean_{name}", "nan" if val is None else _fmt(val)))
        _write_kv(path / "attack_log.txt", pairs, append=True)
    return reports


def export_embedding_histograms(record_path, n_bins: int = 50,
                                dims=None) -> str:
    """Per-class histogram counts over shared bins, one TSV block per dimension.

    Columns: dim, bin_lo, bin_hi, then one count column per class.  Bins are
    half-open [lo, hi) except the last, which is closed.
    """
    record = open_record(record_path)
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    rows = record.load_final_user_embeddings()
    labels = record.load_labels()
    if dims is None:
        dims = list(range(min(8, rows.shape[1])))
    by_class = [labels.class_indices(c) for c in range(labels.n_classes)]
    for c, members in enumerate(by_class):
        if len(members) == 0:
            raise DataError(f"class {labels.class_names[c]!r} is empty")
    header = ["dim", "bin_lo", "bin_hi"] + [f"count_{name}" for name in labels.class_names]
    lines = ["\t".join(header)]
    for dim in dims:
        if not 0 <= dim < rows.shape[1]:
            raise ConfigError(f"dimension {dim} out of range for d={rows.shape[1]}")
        col = rows[:, dim]
        lo, hi = float(col.min()), float(col.max())
        if lo == hi:
            hi = lo + 1.0  # degenerate constant column still gets one bin span
        edges = np.linspace(lo, hi, n_bins + 1)
        counts = [np.histogram(col[members], bins=edges)[0] for members in by_class]
        for b in range(n_bins):
            row = [str(dim), _fmt(edges[b]), _fmt(edges[b + 1])]
            row += [str(int(c[b])) for c in counts]
            lines.append("\t".join(row))
    return "\n".join(lines) + "\n"
