"""Command-line pipeline: embed, train, generate, eval, or all four.

Every run is reproducible from (config, seed) alone. One base seed fans out
into fixed stage streams: feature map 10*seed, generator init 10*seed+1,
training batches 10*seed+2, privatization noise 10*seed+3, final sampling
10*seed+4, and downstream classifier seeds 10*seed+5 onward. `pipeline
--seeds N` runs base seeds seed..seed+N-1 in subdirectories and averages
their reports.

The embed step is the only one that reads raw data. It writes the released
embedding, the (public-by-assumption) column schema, and the held-out real
test split; training and later stages work from those artifacts alone, so
the raw dataset file can be deleted after embedding.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

from ntksynth import data as D
from ntksynth import embedding as E
from ntksynth import evaluation as EV
from ntksynth import generator as G
from ntksynth import privacy as P
from ntksynth.ntk import NtkArchitecture, NtkFeatureMap
from ntksynth.presets import get_preset, preset_names
from ntksynth.tensor import Rng

__all__ = ["RunConfig", "main", "cmd_embed", "cmd_train", "cmd_generate",
           "cmd_eval", "cmd_pipeline"]

EMBEDDING_FILE = "embedding.ntke"
SCHEMA_FILE = "schema.json"
CONFIG_FILE = "run_config.json"
CHECKPOINT_FILE = "checkpoint.ntkg"
TRACE_FILE = "loss_trace.csv"
REPORT_FILE = "report.json"
REPORT_CSV = "report.csv"
MANIFEST_FILE = "manifest.json"


@dataclass
class RunConfig:
    """One pipeline run. Field names follow the benchmark preset columns."""

    dataset: str | None = None
    data_format: str = "csv"
    schema_spec: str | None = None
    out_dir: str = "runs/out"
    architecture: str = "fc_1l"
    ntk_width: str = "200"
    activation: str = "relu"
    c_out: int | None = None
    d_code: int = 16
    n_iter: int = 1000
    batch: int = 100
    lr: float = 0.01
    eps: float | None = 1.0
    delta: float = 1e-5
    calibration: str = "analytic"
    seed: int = 0
    imbalance_mode: bool = False
    privacy_split: float = 0.1
    train_fraction: float = 0.8
    stratify: bool = True
    gen_hidden: str | None = None
    gen_norm: bool = True
    n_synth: int = 2000
    eval_seeds: int = 5
    eval_classifiers: str = "logreg,mlp"
    classifier_iters: int = 400

    def validate(self):
        if self.data_format not in ("csv", "images"):
            raise ValueError(f"data_format must be csv or images, got {self.data_format!r}")
        if self.architecture not in ("fc_1l", "fc_2l"):
            raise ValueError(f"architecture must be fc_1l or fc_2l, got {self.architecture!r}")
        widths = self.parsed_widths()
        want = 1 if self.architecture == "fc_1l" else 2
        if len(widths) != want:
            raise ValueError(f"{self.architecture} needs {want} width(s) in ntk_width, "
                             f"got {self.ntk_width!r}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"activation must be relu or tanh, got {self.activation!r}")
        if self.eps is not None:
            if not self.eps > 0:
                raise ValueError("eps must be positive (or 'none' for non-private)")
            if not 0 < self.delta < 1:
                raise ValueError("delta must lie in (0, 1)")
        if self.calibration not in ("analytic", "classical"):
            raise ValueError("calibration must be analytic or classical")
        if self.n_iter < 0 or self.batch < 1 or not self.lr > 0 or self.d_code < 1:
            raise ValueError("need n_iter >= 0, batch >= 1, lr > 0, d_code >= 1")
        if not 0 < self.privacy_split < 1:
            raise ValueError("privacy_split must lie in (0, 1)")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.n_synth < 0 or self.eval_seeds < 1 or self.classifier_iters < 0:
            raise ValueError("need n_synth >= 0, eval_seeds >= 1, classifier_iters >= 0")
        unknown = set(self.classifier_names()) - {"logreg", "mlp"}
        if unknown:
            raise ValueError(f"unknown classifier(s) {sorted(unknown)}")
        if self.data_format == "csv" and self.dataset and not self.schema_spec:
            raise ValueError("csv datasets need --schema-spec")

    def parsed_widths(self) -> tuple[int, ...]:
        try:
            return tuple(int(w) for w in str(self.ntk_width).split("_"))
        except ValueError:
            raise ValueError(f"ntk_width must look like '800' or '3000_200', "
                             f"got {self.ntk_width!r}") from None

    def classifier_names(self) -> tuple[str, ...]:
        return tuple(s.strip() for s in self.eval_classifiers.split(",") if s.strip())

    def gen_hidden_widths(self) -> tuple[int, ...] | None:
        if self.gen_hidden is None:
            return None
        return tuple(int(w) for w in str(self.gen_hidden).split("_"))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_sources(cls, preset: str | None, config_path: str | None,
                     overrides: dict) -> "RunConfig":
        merged: dict = {}
        if preset:
            merged.update(get_preset(preset))
        if config_path:
            with open(config_path) as fh:
                loaded = json.load(fh)
            if not isinstance(loaded, dict):
                raise ValueError("config file must hold a JSON object")
            merged.update(loaded)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = set(merged) - known
        if unknown:
            raise ValueError(f"unknown config key(s) {sorted(unknown)}")
        if isinstance(merged.get("eps"), str):
            merged["eps"] = None if merged["eps"].lower() == "none" else float(merged["eps"])
        cfg = cls(**merged)
        cfg.validate()
        return cfg


# ---- shared helpers ---------------------------------------------------------

def _stage_seed(cfg: RunConfig, stage: int) -> int:
    return 10 * cfg.seed + stage


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(payload: dict, path: Path):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _load_raw_dataset(cfg: RunConfig) -> D.LabeledDataset:
    if cfg.dataset is None:
        raise ValueError("this command needs --dataset")
    if cfg.data_format == "images":
        return D.load_images(cfg.dataset)
    with open(cfg.schema_spec) as fh:
        spec = json.load(fh)
    return D.load_csv(cfg.dataset, spec)


def _build_arch(cfg: RunConfig, input_dim: int, n_classes: int) -> NtkArchitecture:
    return NtkArchitecture(cfg.architecture, input_dim, cfg.parsed_widths(),
                           cfg.c_out or n_classes, cfg.activation)


def _build_feature_map(cfg: RunConfig, input_dim: int, n_classes: int) -> NtkFeatureMap:
    return NtkFeatureMap(_build_arch(cfg, input_dim, n_classes),
                         seed=_stage_seed(cfg, 0))


def _test_split_name(cfg: RunConfig) -> str:
    return "real_test.ntki" if cfg.data_format == "images" else "real_test.csv"


def _write_split(ds: D.LabeledDataset, cfg: RunConfig, path: Path):
    if cfg.data_format == "images":
        rows, cols = ds.schema.image_shape
        D.write_images(path, ds.features.reshape(ds.n, rows, cols),
                       ds.label_indices.astype(np.uint8), ds.schema.n_classes)
    else:
        D.write_csv(ds, path)


def _load_split(path: Path, cfg: RunConfig, schema: D.DatasetSchema) -> D.LabeledDataset:
    if cfg.data_format == "images":
        return D.load_images(path)
    spec = {"columns": {**{c.name: ("numeric" if isinstance(c, D.NumericColumn)
                                    else "categorical") for c in schema.columns},
                        schema.label_name: "label"}}
    return D.load_csv(path, spec, schema=schema)


# ---- commands ----------------------------------------------------------------

def cmd_embed(cfg: RunConfig) -> dict:
    """Split the data, build and release the embedding, persist artifacts."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = _load_raw_dataset(cfg)
    train, test = D.split(ds, cfg.train_fraction, seed=cfg.seed, stratify=cfg.stratify)

    fmap = _build_feature_map(cfg, ds.schema.feature_dim, ds.schema.n_classes)
    log = P.ReleaseLog()
    noise_rng = Rng(_stage_seed(cfg, 3))
    if cfg.imbalance_mode:
        emb, _ = E.imbalanced_embedding(fmap, train, cfg.eps, cfg.delta, noise_rng,
                                        privacy_split=cfg.privacy_split,
                                        calibration=cfg.calibration, release_log=log)
    else:
        emb = E.data_embedding(fmap, train)
        if cfg.eps is None:
            emb = E.release_nonprivate(emb)
        else:
            params = P.calibrate(cfg.eps, cfg.delta, E.sensitivity(emb.m),
                                 method=cfg.calibration)
            emb = E.privatize(emb, params, noise_rng, release_log=log)

    E.save_embedding(emb, out / EMBEDDING_FILE)
    _dump_json(D.schema_to_dict(ds.schema), out / SCHEMA_FILE)
    _write_split(test, cfg, out / _test_split_name(cfg))
    _dump_json(cfg.to_dict(), out / CONFIG_FILE)

    p = emb.privacy
    print(f"embedded: d={emb.d} c={emb.c} m={emb.m} "
          f"sensitivity={E.sensitivity(emb.m):.8g} sigma={p.sigma:.8g} "
          f"eps={p.epsilon} delta={p.delta} calibration={p.calibration}")
    return {"embedding": out / EMBEDDING_FILE, "schema": out / SCHEMA_FILE,
            "test": out / _test_split_name(cfg)}


def cmd_train(cfg: RunConfig, embedding_path: str | None = None) -> dict:
    """Train the generator against a released embedding (raw data not read)."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emb_path = Path(embedding_path) if embedding_path else out / EMBEDDING_FILE
    emb = E.load_embedding(emb_path)
    schema = D.schema_from_dict(json.loads((out / SCHEMA_FILE).read_text()))

    fmap = _build_feature_map(cfg, schema.feature_dim, emb.c)
    gen = G.GeneratorModel(schema, cfg.d_code, cfg.gen_hidden_widths(),
                           seed=_stage_seed(cfg, 1), activation="relu",
                           use_norm=cfg.gen_norm)
    tcfg = G.TrainConfig(n_iter=cfg.n_iter, batch_size=cfg.batch, lr=cfg.lr,
                         seed=_stage_seed(cfg, 2),
                         eval_every=max(cfg.n_iter // 10, 1))
    trace = G.train(gen, fmap, emb, tcfg)

    G.save_checkpoint(gen, out / CHECKPOINT_FILE, emb.feature_map_fingerprint, tcfg)
    lines = ["iter,loss"] + [f"{i},{v!r}" for i, v in enumerate(trace)]
    (out / TRACE_FILE).write_text("\n".join(lines) + "\n")
    if trace:
        print(f"trained: {len(trace)} iterations, loss {trace[0]:.6g} -> {trace[-1]:.6g}")
    else:
        print("trained: 0 iterations")
    return {"checkpoint": out / CHECKPOINT_FILE, "trace": out / TRACE_FILE}


def cmd_generate(cfg: RunConfig, n: int | None = None,
                 checkpoint_path: str | None = None,
                 embedding_path: str | None = None) -> dict:
    """Sample a synthetic dataset from a checkpoint."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = cfg.n_synth if n is None else n
    gen, meta = G.load_checkpoint(
        Path(checkpoint_path) if checkpoint_path else out / CHECKPOINT_FILE)
    emb = E.load_embedding(Path(embedding_path) if embedding_path
                           else out / EMBEDDING_FILE)
    if meta["embedding_fingerprint"] != emb.feature_map_fingerprint:
        raise E.FingerprintMismatchError(
            "checkpoint and embedding come from different feature maps")
    weights = emb.class_weights if emb.normalization == "per_class" else None
    synth = G.sample_dataset(gen, Rng(_stage_seed(cfg, 4)), n, class_weights=weights)

    if cfg.data_format == "images":
        path = out / "synthetic.ntki"
        rows, cols = synth.schema.image_shape
        D.write_images(path, synth.features.reshape(max(n, 0), rows, cols),
                       synth.label_indices.astype(np.uint8), synth.schema.n_classes)
        grid_path = out / "samples.pgm"
        _write_sample_grid(synth, grid_path)
        print(f"generated: {n} images -> {path}")
        return {"synthetic": path, "samples": grid_path}
    path = out / "synthetic.csv"
    D.write_csv(synth, path)
    print(f"generated: {n} rows -> {path}")
    return {"synthetic": path}


def cmd_eval(cfg: RunConfig, synthetic_path: str | None = None,
             test_path: str | None = None) -> dict:
    """Train classifiers on the synthetic set, score them on the real test set."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schema = D.schema_from_dict(json.loads((out / SCHEMA_FILE).read_text()))
    syn_path = Path(synthetic_path) if synthetic_path else \
        out / ("synthetic.ntki" if cfg.data_format == "images" else "synthetic.csv")
    real_path = Path(test_path) if test_path else out / _test_split_name(cfg)
    synth = _load_split(syn_path, cfg, schema)
    real = _load_split(real_path, cfg, schema)

    ecfg = EV.EvalConfig(
        seeds=tuple(_stage_seed(cfg, 5) + i for i in range(cfg.eval_seeds)),
        classifiers=cfg.classifier_names(),
        classifier_cfg=EV.ClassifierConfig(n_iter=cfg.classifier_iters))
    report = EV.synth_to_real_eval(synth, real, ecfg)

    payload = json.loads(report.to_json())
    payload["config"] = cfg.to_dict()
    _dump_json(payload, out / REPORT_FILE)
    (out / REPORT_CSV).write_text(report.csv_header() + "\n" + report.csv_row() + "\n")
    for name in sorted(report.averaged):
        m = report.averaged[name]
        print(f"eval[{name}]: acc={m['accuracy']:.4f} roc={m['roc_auc']:.4f} "
              f"prc={m['prc_auc']:.4f} f1={m['macro_f1']:.4f}")
    return {"report": out / REPORT_FILE, "report_csv": out / REPORT_CSV}


def _write_sample_grid(synth: D.LabeledDataset, path: Path, per_class: int = 8):
    """Binary PGM contact sheet: one row per class, first samples of each."""
    rows_px, cols_px = synth.schema.image_shape
    c = synth.schema.n_classes
    grid = np.zeros((c * rows_px, per_class * cols_px), dtype=np.uint8)
    for k in range(c):
        members = np.flatnonzero(synth.label_indices == k)[:per_class]
        for slot, idx in enumerate(members):
            img = np.rint(synth.features[idx].reshape(rows_px, cols_px) * 255.0)
            grid[k * rows_px:(k + 1) * rows_px,
                 slot * cols_px:(slot + 1) * cols_px] = img.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode())
        fh.write(grid.tobytes())


def cmd_pipeline(cfg: RunConfig, seeds: int = 1) -> dict:
    """embed -> train -> generate -> eval; optional multi-seed fan-out."""
    if seeds < 1:
        raise ValueError("--seeds must be >= 1")
    if seeds == 1:
        return _pipeline_single(cfg)

    base_out = Path(cfg.out_dir)
    base_out.mkdir(parents=True, exist_ok=True)
    reports = []
    for i in range(seeds):
        sub = RunConfig(**{**cfg.to_dict(),
                           "seed": cfg.seed + i,
                           "out_dir": str(base_out / f"seed_{cfg.seed + i}")})
        artifacts = _pipeline_single(sub)
        reports.append(json.loads(Path(artifacts["report"]).read_text()))

    aggregated: dict = {"seeds": [cfg.seed + i for i in range(seeds)],
                        "config": cfg.to_dict(), "runs": reports, "averaged": {}}
    names = sorted(reports[0]["averaged"])
    for name in names:
        aggregated["averaged"][name] = {
            m: float(np.mean([r["averaged"][name][m] for r in reports]))
            for m in EV.METRICS}
    _dump_json(aggregated, base_out / "aggregate_report.json")
    for name in names:
        m = aggregated["averaged"][name]
        print(f"aggregate[{name}] over {seeds} seeds: acc={m['accuracy']:.4f} "
              f"roc={m['roc_auc']:.4f} prc={m['prc_auc']:.4f} f1={m['macro_f1']:.4f}")
    return {"aggregate": base_out / "aggregate_report.json"}


def _pipeline_single(cfg: RunConfig) -> dict:
    artifacts: dict = {}
    artifacts.update(cmd_embed(cfg))
    artifacts.update(cmd_train(cfg))
    artifacts.update(cmd_generate(cfg))
    artifacts.update(cmd_eval(cfg))
    out = Path(cfg.out_dir)
    manifest = {"config": cfg.to_dict(),
                "artifacts": {key: {"path": str(Path(p).name), "sha256": _sha256(Path(p))}
                              for key, p in sorted(artifacts.items())}}
    _dump_json(manifest, out / MANIFEST_FILE)
    artifacts["manifest"] = out / MANIFEST_FILE
    return artifacts


# ---- argument parsing ---------------------------------------------------------

def _add_config_flags(sp: argparse.ArgumentParser):
    sp.add_argument("--config", help="JSON file with RunConfig keys")
    sp.add_argument("--preset", help=f"named preset ({', '.join(preset_names())})")
    sp.add_argument("--dataset", help="path to the raw dataset (csv or image container)")
    sp.add_argument("--data-format", dest="data_format", choices=["csv", "images"])
    sp.add_argument("--schema-spec", dest="schema_spec",
                    help="JSON mapping column -> numeric|categorical|label (csv only)")
    sp.add_argument("--out-dir", dest="out_dir", help="artifact directory")
    sp.add_argument("--architecture", choices=["fc_1l", "fc_2l"])
    sp.add_argument("--ntk-width", dest="ntk_width", help="'800' or '3000_200'")
    sp.add_argument("--activation", choices=["relu", "tanh"])
    sp.add_argument("--c-out", dest="c_out", type=int)
    sp.add_argument("--d-code", dest="d_code", type=int)
    sp.add_argument("--n-iter", dest="n_iter", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epsilon", dest="eps", help="privacy epsilon, or 'none'")
    sp.add_argument("--delta", type=float)
    sp.add_argument("--calibration", choices=["analytic", "classical"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--imbalance-mode", dest="imbalance_mode",
                    action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--privacy-split", dest="privacy_split", type=float)
    sp.add_argument("--train-fraction", dest="train_fraction", type=float)
    sp.add_argument("--stratify", action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--gen-hidden", dest="gen_hidden", help="e.g. '200_200'")
    sp.add_argument("--gen-norm", dest="gen_norm",
                    action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--n-synth", dest="n_synth", type=int)
    sp.add_argument("--eval-seeds", dest="eval_seeds", type=int)
    sp.add_argument("--eval-classifiers", dest="eval_classifiers")
    sp.add_argument("--classifier-iters", dest="classifier_iters", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ntksynth",
        description="Private synthetic data from released feature mean embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("embed", help="build and release the data embedding")
    _add_config_flags(sp)

    sp = sub.add_parser("train", help="train the generator from a released embedding")
    _add_config_flags(sp)
    sp.add_argument("--embedding", help="path to embedding file "
                    f"(default <out-dir>/{EMBEDDING_FILE})")

    sp = sub.add_parser("generate", help="sample a synthetic dataset from a checkpoint")
    _add_config_flags(sp)
    sp.add_argument("--checkpoint", help="path to generator checkpoint")
    sp.add_argument("--embedding", help="path to embedding file")
    sp.add_argument("--n", type=int, help="rows to sample (default n_synth)")

    sp = sub.add_parser("eval", help="synthetic -> real downstream evaluation")
    _add_config_flags(sp)
    sp.add_argument("--synthetic", help="path to synthetic dataset file")
    sp.add_argument("--real-test", dest="real_test", help="path to real test file")

    sp = sub.add_parser("pipeline", help="embed + train + generate + eval")
    _add_config_flags(sp)
    sp.add_argument("--seeds", type=int, default=1,
                    help="fan out this many base seeds and aggregate")

    sub.add_parser("presets", help="list named presets")
    return parser


_CONFIG_KEYS = [f.name for f in fields(RunConfig)]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "presets":
        for name in preset_names():
            print(name)
        return 0
    try:
        overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)}
        cfg = RunConfig.from_sources(args.preset, args.config, overrides)
        if args.command == "embed":
            cmd_embed(cfg)
        elif args.command == "train":
            cmd_train(cfg, embedding_path=args.embedding)
        elif args.command == "generate":
            cmd_generate(cfg, n=args.n, checkpoint_path=args.checkpoint,
                         embedding_path=args.embedding)
        elif args.command == "eval":
            cmd_eval(cfg, synthetic_path=args.synthetic, test_path=args.real_test)
        elif args.command == "pipeline":
            cmd_pipeline(cfg, seeds=args.seeds)
        return 0
    except (ValueError, KeyError, FileNotFoundError, D.SchemaError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
