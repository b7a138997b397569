"""Command-line entry point: ``hpnet <command> [options]``.

Exit codes: 0 success, 1 invalid input or config, 2 numerical failure
(non-finite values, failed gradient check), 3 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from . import fisher, fpm, gradcheck, hpt, pipeline, synthgen, topology, trmm
from .model import Model, ModelConfig, fit_input_norm, init_params
from .numerics import NumericalError, ShapeError
from .train import _map, ensemble, evaluate, read_dump, train

log = logging.getLogger("hpnet")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# Atomic output helpers


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


@contextlib.contextmanager
def staged_dir(out_dir):
    """Yield a temp sibling of ``out_dir``; it replaces ``out_dir`` on success."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out_dir.exists():
        shutil.rmtree(out_dir)
    os.replace(tmp, out_dir)


def _relpath(target: Path, start: Path) -> str:
    return Path(os.path.relpath(Path(target).resolve(), Path(start).resolve())).as_posix()


# --------------------------------------------------------------------------
# Model directories


def save_model(out_dir, model: Model, params, doc: dict, history: list) -> None:
    """``model.json`` plus one ``.hpt`` per parameter, label text and input statistics."""
    with staged_dir(out_dir) as tmp:
        (tmp / "params").mkdir()
        index = {}
        for key in sorted(params):
            rel = f"params/{key}.hpt"
            hpt.save(tmp / rel, params[key])
            index[key] = rel
        meta = {
            "model": model.cfg.to_dict(),
            "input": doc["model"]["input"],
            "train": doc["train"],
            "loss": doc["loss"],
            "skeleton": [list(e) for e in model.graph.edges],
            "joints": model.graph.n,
            "params": index,
            "text": None,
            "norm": None,
            "history": history,
        }
        if model.text is not None:
            hpt.save(tmp / "text.hpt", model.text)
            meta["text"] = "text.hpt"
        if model.norm is not None:
            hpt.save(tmp / "norm_mean.hpt", model.norm[0])
            hpt.save(tmp / "norm_std.hpt", model.norm[1])
            meta["norm"] = {"mean": "norm_mean.hpt", "std": "norm_std.hpt"}
        (tmp / "model.json").write_text(_json_text(meta))


def load_model(model_dir):
    model_dir = Path(model_dir)
    meta = json.loads((model_dir / "model.json").read_text())
    cfg = ModelConfig(**meta["model"])
    graph = topology.SkeletonGraph(meta["joints"], tuple(tuple(e) for e in meta["skeleton"]))
    text = hpt.load(model_dir / meta["text"]) if meta["text"] else None
    norm = None
    if meta["norm"]:
        norm = (hpt.load(model_dir / meta["norm"]["mean"]), hpt.load(model_dir / meta["norm"]["std"]))
    model = Model(cfg, graph, text, norm)
    params = {k: hpt.load(model_dir / rel) for k, rel in meta["params"].items()}
    expected = init_params(cfg, 0)
    if set(params) != set(expected) or any(params[k].shape != v.shape for k, v in expected.items()):
        raise CliError(f"parameters in {model_dir} do not match the stored model config")
    return model, params, meta


# --------------------------------------------------------------------------
# Commands


def _load_doc(args) -> dict:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides += [f"synth.seed={args.seed}", f"train.seed={args.seed}"]
    if getattr(args, "streams", None):
        streams = [s.strip() for s in args.streams.split(",") if s.strip()]
        overrides.append("model.streams=" + json.dumps(streams))
    if getattr(args, "region", None) is not None:
        overrides.append(f"pool.region={args.region}")
    return cfgmod.load(args.config, overrides)


def cmd_synth(args, doc) -> int:
    manifest = synthgen.generate_dataset(cfgmod.synth_config(doc), args.out)
    print(manifest)
    return EXIT_OK


def cmd_pool(args, doc) -> int:
    pool_cfg = cfgmod.pool_config(doc)
    manifest = Path(args.manifest)
    cfg, entries, base = synthgen.load_manifest(manifest)
    if max(pool_cfg.reference_scale_index, pool_cfg.pool_scale_index) >= len(cfg.scales):
        raise CliError(f"pool scale indices exceed the {len(cfg.scales)} scales in the manifest")
    channels = synthgen.joint_channels(cfg)[pool_cfg.reference_scale_index]
    pool_hw = list(cfg.scales[pool_cfg.pool_scale_index][:2])

    def one(entry):
        stacks = synthgen.load_sample_heatmaps(entry, cfg, base)
        return fpm.pool_sequence(stacks, pool_cfg, channels, return_poses=True)

    out = Path(args.out)
    with staged_dir(out) as tmp:
        (tmp / "pooled").mkdir()
        (tmp / "poses").mkdir()
        records = []
        for entry, (feats, poses) in zip(entries, _map(one, entries, args.threads)):
            rec = {"id": entry["id"], "pooled": f"pooled/{entry['id']}.hpt",
                   "poses": f"poses/{entry['id']}.hpt"}
            hpt.save(tmp / rec["pooled"], feats)
            hpt.save(tmp / rec["poses"], poses.astype(np.float32))
            records.append(rec)
        index = {"manifest": _relpath(manifest, out), "pool_grid": pool_hw,
                 "pool": {"region": pool_cfg.region, "reducer": pool_cfg.reducer,
                          "reference_scale_index": pool_cfg.reference_scale_index,
                          "pool_scale_index": pool_cfg.pool_scale_index},
                 "samples": records}
        (tmp / "index.json").write_text(_json_text(index))
    print(out / "index.json")
    return EXIT_OK


def _embeddings(doc) -> Optional[tuple]:
    paths = doc["paths"]
    if paths["label_embeddings"] is None:
        return None
    if paths["label_names"] is None:
        raise CliError("paths.label_embeddings needs paths.label_names")
    return paths["label_embeddings"], paths["label_names"]


def cmd_train(args, doc) -> int:
    data, synth = pipeline.load_pooled(args.pooled, doc["model"]["input"])
    graph = topology.load_skeleton(doc["paths"]["skeleton"])
    mcfg = cfgmod.model_config(doc, data.seqs[0].shape[-1], synth.num_classes, synth.video_dim)
    model = pipeline.make_model(mcfg, graph, _embeddings(doc))
    params, history = train(model, data.select("train"), cfgmod.train_config(doc),
                            cfgmod.loss_weights(doc), threads=args.threads)
    save_model(args.out, model, params, doc, history)
    print(Path(args.out) / "model.json")
    return EXIT_OK


def _write_eval(args, metrics, dump) -> None:
    if args.dump:
        write_text_atomic(args.dump, "".join(json.dumps(r, sort_keys=True) + "\n" for r in dump))
    text = _json_text(metrics)
    if args.metrics:
        write_text_atomic(args.metrics, text)
    sys.stdout.write(text)


def cmd_eval(args, doc) -> int:
    if args.untrained:
        data, synth = pipeline.load_pooled(args.pooled, doc["model"]["input"])
        graph = topology.load_skeleton(doc["paths"]["skeleton"])
        mcfg = cfgmod.model_config(doc, data.seqs[0].shape[-1], synth.num_classes, synth.video_dim)
        model = pipeline.make_model(mcfg, graph, _embeddings(doc))
        if mcfg.input_norm:
            model.set_norm(*fit_input_norm(data.select("train").seqs))
        params = init_params(mcfg, doc["train"]["seed"])
    else:
        if args.model is None:
            raise CliError("eval needs --model or --untrained")
        model, params, meta = load_model(args.model)
        data, _ = pipeline.load_pooled(args.pooled, meta["input"])
    metrics, dump = evaluate(model, params, data.select(args.split), threads=args.threads)
    _write_eval(args, metrics, dump)
    return EXIT_OK


def cmd_ensemble(args, doc) -> int:
    dumps = [read_dump(p) for p in args.dumps]
    metrics, fused = ensemble(dumps, args.weights)
    _write_eval(args, metrics, fused)
    return EXIT_OK


def _fisher_report(features: np.ndarray, labels: np.ndarray) -> dict:
    res = fisher.fisher_score(features, labels)
    return {"dims": int(features.shape[1]), "mean": res.mean,
            "unbounded": int(res.unbounded.sum()), "degenerate": int(res.degenerate.sum())}


def cmd_fisher(args, doc) -> int:
    """Fisher scores of time-averaged pooled features, per heatmap scale, or
    of an ``export-features`` output."""
    if (args.manifest is None) == (args.features is None):
        raise CliError("fisher needs exactly one of --manifest or --features")
    report: Dict[str, dict] = {}
    if args.features is not None:
        feats = hpt.load(Path(args.features) / "features.hpt")
        meta = json.loads((Path(args.features) / "samples.json").read_text())
        report["features"] = _fisher_report(feats, np.array(meta["labels"]))
    else:
        cfg, entries, base = synthgen.load_manifest(args.manifest)
        pool_cfg = cfgmod.pool_config(doc)
        channels = synthgen.joint_channels(cfg)[pool_cfg.reference_scale_index]
        scales = range(len(cfg.scales)) if args.scales is None else args.scales
        labels = np.array([e["label"] for e in entries])
        for s in scales:
            if not 0 <= s < len(cfg.scales):
                raise CliError(f"scale {s} outside [0, {len(cfg.scales)})")
            pc = fpm.PoolConfig(pool_cfg.region, pool_cfg.reducer, pool_cfg.reference_scale_index, s)

            def one(entry):
                stacks = synthgen.load_sample_heatmaps(entry, cfg, base)
                return fpm.pool_sequence(stacks, pc, channels).mean(axis=0).reshape(-1)

            feats = np.stack(_map(one, entries, args.threads))
            report[f"scale{s}"] = dict(_fisher_report(feats, labels), shape=list(cfg.scales[s]))
    text = _json_text(report)
    if args.out:
        write_text_atomic(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args, doc) -> int:
    report = gradcheck.run(args.instances, args.seed or 0)
    sys.stdout.write(_json_text(report.to_dict()))
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def cmd_export_features(args, doc) -> int:
    model, params, meta = load_model(args.model)
    data, _ = pipeline.load_pooled(args.pooled, meta["input"])
    feats = np.stack(_map(lambda s: model.features(params, s), data.seqs, args.threads))
    with staged_dir(args.out) as tmp:
        hpt.save(tmp / "features.hpt", feats)
        (tmp / "samples.json").write_text(_json_text(
            {"ids": data.ids, "labels": [int(l) for l in data.labels], "splits": data.splits}))
    print(Path(args.out) / "features.hpt")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "pool": cmd_pool, "train": cmd_train, "eval": cmd_eval,
    "ensemble": cmd_ensemble, "fisher": cmd_fisher, "gradcheck": cmd_gradcheck,
    "export-features": cmd_export_features,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="sets synth.seed and train.seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads; results do not depend on it")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="hpnet", description="Heatmap-pooling action recognition pipeline on synthetic data.",
        epilog="exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)

    p = sub.add_parser("pool", parents=[common], help="decode poses and pool heatmaps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--region", type=int, help="pooling window size (odd)")

    p = sub.add_parser("train", parents=[common], help="train a fused or single-stream model")
    p.add_argument("--pooled", required=True, help="index.json written by 'pool'")
    p.add_argument("--out", required=True, help="model directory")
    p.add_argument("--streams", help="comma-separated subset of p,s,m")

    p = sub.add_parser("eval", parents=[common], help="evaluate a model on one split")
    p.add_argument("--pooled", required=True)
    p.add_argument("--model")
    p.add_argument("--untrained", action="store_true",
                   help="evaluate a fresh initialisation built from the config")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--metrics", help="write the metrics JSON here")
    p.add_argument("--dump", help="write per-sample scores (JSON lines) here")
    p.add_argument("--streams", help="comma-separated subset of p,s,m (with --untrained)")

    p = sub.add_parser("ensemble", parents=[common], help="late-fuse score dumps")
    p.add_argument("dumps", nargs="+")
    p.add_argument("--weights", type=float, nargs="+")
    p.add_argument("--metrics")
    p.add_argument("--dump")

    p = sub.add_parser("fisher", parents=[common], help="Fisher-score analysis")
    p.add_argument("--manifest", help="analyse pooled features of each heatmap scale")
    p.add_argument("--features", help="analyse an export-features directory")
    p.add_argument("--scales", type=int, nargs="+")
    p.add_argument("--out")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--instances", type=int, default=50)

    p = sub.add_parser("export-features", parents=[common], help="dump F_c for every sample")
    p.add_argument("--model", required=True)
    p.add_argument("--pooled", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise CliError("--threads must be at least 1")
        doc = _load_doc(args)
        # BLAS stays single-threaded so results never depend on --threads.
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args, doc)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except NumericalError as exc:
        code, msg = EXIT_NUMERICAL, f"numerical failure: {exc}"
    except hpt.FormatError as exc:
        code, msg = EXIT_IO, f"bad tensor file: {exc}"
    except OSError as exc:
        code, msg = EXIT_IO, f"I/O error: {exc}"
    except (cfgmod.ConfigError, ShapeError, trmm.LabelError, ValueError, KeyError, IndexError) as exc:
        code, msg = EXIT_INVALID, f"invalid input: {exc}"
    print(f"hpnet: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
