"""Command-line entry point: ``cmpa <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, with_overrides
from .contour import ContourError
from .data import DataError, SyntheticSpec, generate_synthetic, load_dataset, split_dataset, write_dataset
from .evaluation import (
    evaluate_model,
    max_perplexity,
    project_2d,
    write_embeddings,
    write_metrics,
    write_projection,
)
from .model import CheckpointError, ContrastiveRegressor, ShapeError, load_arrays, load_checkpoint, save_checkpoint
from .report import Cell, ExperimentMatrix, ReportError, render_reports
from .trainer import train

log = logging.getLogger("cmpa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_out():
    return os.environ.get("CMPA_OUT", "cmpa_out")


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.set or ())
    overrides = {}
    for key in ("regime", "criterion", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "manifest", None):
        overrides["data.manifest"] = str(args.manifest)
    cfg = with_overrides(cfg, overrides)
    try:
        cfg.encoder_config
    except ShapeError as exc:
        raise ConfigError(f"chunk_len: {exc}") from None
    return cfg


def _manifest(cfg: RunConfig):
    if not cfg.data.manifest:
        raise UsageError("data.manifest: no manifest given (use --manifest or the config key)")
    return load_dataset(cfg.data.manifest)


def _split_ids(cfg, dataset, which):
    if which == "all":
        return dataset.ids
    split = split_dataset(dataset.ids, cfg.seed)
    return list(getattr(split, f"{which}_ids"))


def _perplexity(requested, n):
    if n < 4:
        return None
    return min(requested, 0.9 * max_perplexity(n))


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)
    return path


def cmd_synth(args):
    try:
        spec = SyntheticSpec(n_recordings=args.n, min_len=args.min_len, max_len=args.max_len,
                             noise_std=args.noise_std, seed=args.seed)
    except DataError as exc:
        raise UsageError(str(exc)) from None
    contours, records = generate_synthetic(spec)
    manifest = write_dataset(args.out, contours, records)
    lengths = [len(c) for c in contours]
    print(f"wrote {len(records)} recordings to {manifest}")
    print(f"contour length: min {min(lengths)}, max {max(lengths)}")
    return EXIT_OK


def _train_to(cfg, dataset, out_dir):
    report = train(cfg, dataset)
    out_dir = Path(out_dir)
    best = report.phases[-1]
    save_checkpoint(out_dir / "checkpoint.ckpt", report.model, cfg.to_flat(), best.best_epoch, best.best_val_loss)
    report.write(out_dir / "report.json")
    return report


def cmd_train(args):
    cfg = _config(args)
    dataset = _manifest(cfg)
    report = _train_to(cfg, dataset, args.out)
    r2 = report.test_metrics.get("r2")
    print(f"{cfg.regime} {cfg.criterion} seed={cfg.seed}: best epoch {report.best_epoch}, test R2 "
          + ("n/a" if r2 is None else f"{r2:.4f}"))
    return EXIT_OK


def _load_model(path):
    ckpt = load_checkpoint(path)
    cfg = RunConfig.from_flat(ckpt.config)
    model = load_arrays(ContrastiveRegressor(cfg.encoder_config), ckpt)
    return cfg, model.eval()


def _evaluate(cfg, model, dataset, ids):
    return evaluate_model(model, dataset, ids, cfg.criterion, cfg.loss.C, cfg.chunk_len,
                          cfg.eval.chunk_policy, cfg.eval.n_chunks)


def cmd_evaluate(args):
    cfg, model = _load_model(args.checkpoint)
    if args.manifest:
        cfg = with_overrides(cfg, {"data.manifest": str(args.manifest)})
    dataset = _manifest(cfg)
    bundle = _evaluate(cfg, model, dataset, _split_ids(cfg, dataset, args.split))
    path = write_metrics(Path(args.out) / "metrics.json", bundle)
    db = "n/a" if bundle.davies_bouldin is None else f"{bundle.davies_bouldin:.4f}"
    print(f"R2 {bundle.r2:.4f}")
    print(f"Davies-Bouldin {db}")
    print(f"wrote {path}")
    return EXIT_OK


def _embed(cfg, bundle, out_dir, perplexity=None):
    out_dir = Path(out_dir)
    emb = bundle.embeddings
    paths = {"embeddings": write_embeddings(out_dir / "embeddings.tsv", emb)}
    p = _perplexity(perplexity or cfg.eval.perplexity, len(emb))
    if p is not None:
        points = project_2d(emb, perplexity=p, seed=cfg.seed)
        paths["projection"] = write_projection(out_dir / "projection.tsv", points, emb.bin_labels)
    return paths


def cmd_embed(args):
    cfg, model = _load_model(args.checkpoint)
    if args.manifest:
        cfg = with_overrides(cfg, {"data.manifest": str(args.manifest)})
    dataset = _manifest(cfg)
    bundle = _evaluate(cfg, model, dataset, _split_ids(cfg, dataset, args.split))
    for kind, path in _embed(cfg, bundle, args.out, args.perplexity).items():
        print(f"wrote {kind} to {path}")
    return EXIT_OK


def cmd_report(args):
    matrix = ExperimentMatrix.read(args.matrix)
    written = render_reports(matrix, args.out)
    print(f"wrote {len(written)} files under {args.out}")
    return EXIT_OK


_DATASETS = {}


def run_cell(flat_cfg: dict, out_root: str, rel_dir: str) -> dict:
    """Train, evaluate, and embed one grid cell. Runs in a worker process."""
    cfg = RunConfig.from_flat(flat_cfg)
    manifest = cfg.data.manifest
    if manifest not in _DATASETS:
        _DATASETS[manifest] = load_dataset(manifest)
    dataset = _DATASETS[manifest]
    out_dir = Path(out_root) / rel_dir
    report = _train_to(cfg, dataset, out_dir)
    bundle = _evaluate(cfg, report.model, dataset, list(split_dataset(dataset.ids, cfg.seed).test_ids))
    write_metrics(out_dir / "metrics.json", bundle)
    paths = _embed(cfg, bundle, out_dir)
    cell = Cell(
        cfg.regime, cfg.criterion, cfg.seed, bundle.r2, bundle.davies_bouldin,
        embeddings_path=f"{rel_dir}/embeddings.tsv",
        projection_path=f"{rel_dir}/projection.tsv" if "projection" in paths else None,
        centroid_bins=[int(b) for b in bundle.centroid_bins],
        centroid_distances=bundle.centroid_distances,
    )
    _write_json(out_dir / "cell.json", asdict(cell))
    return asdict(cell)


def cmd_run_matrix(args):
    cfg = _config(args)
    if not cfg.data.manifest:
        raise UsageError("data.manifest: no manifest given (use --manifest or the config key)")
    if not Path(cfg.data.manifest).is_file():
        raise FileNotFoundError(f"manifest not found: {cfg.data.manifest}")
    out = Path(args.out)
    grid = cfg.matrix
    matrix = ExperimentMatrix(list(grid.regimes), list(grid.criteria), list(grid.seeds), root=str(out))
    todo = []
    for regime in grid.regimes:
        for criterion in grid.criteria:
            for seed in grid.seeds:
                rel = f"cells/{regime}/{criterion}/seed{seed}"
                done = out / rel / "cell.json"
                if args.resume and done.is_file():
                    matrix.add(Cell(**json.loads(done.read_text(encoding="utf-8"))))
                    continue
                flat = cfg.replace(regime=regime, criterion=criterion, seed=int(seed)).to_flat()
                todo.append(((regime, criterion, seed), flat, rel))
    print(f"{len(todo)} cells to run, {len(matrix.cells)} already complete")

    def record(key, result):
        matrix.add(Cell(**result))
        print(f"done {key[0]} {key[1]} seed={key[2]}: R2 {result['r2']:.4f}", flush=True)

    if args.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [(key, pool.submit(run_cell, flat, str(out), rel)) for key, flat, rel in todo]
            for key, future in futures:
                try:
                    record(key, future.result())
                except Exception as exc:
                    raise RuntimeError(f"cell regime={key[0]} criterion={key[1]} seed={key[2]} failed: {exc}") from exc
    else:
        for key, flat, rel in todo:
            try:
                record(key, run_cell(flat, str(out), rel))
            except Exception as exc:
                raise RuntimeError(f"cell regime={key[0]} criterion={key[1]} seed={key[2]} failed: {exc}") from exc
    path = matrix.write(out / "matrix.json")
    print(f"wrote {path} ({len(matrix.cells)} cells)")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="cmpa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_args(p, with_run=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--manifest", help="dataset manifest (overrides data.manifest)")
        if with_run:
            p.add_argument("--regime")
            p.add_argument("--criterion")
            p.add_argument("--seed", type=int)
        p.add_argument("--out", default=default_out())

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-len", type=int, default=1500)
    p.add_argument("--max-len", type=int, default=4000)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--out", default=default_out())
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model")
    config_args(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("evaluate", cmd_evaluate, "R2, Davies-Bouldin, centroid distances"),
                              ("embed", cmd_embed, "export latents and a 2-D t-SNE projection")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--manifest")
        p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
        p.add_argument("--out", default=default_out())
        if name == "embed":
            p.add_argument("--perplexity", type=float)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="render figures from an experiment matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", default=str(Path(default_out()) / "reports"))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run-matrix", help="train and evaluate regimes x criteria x seeds")
    config_args(p, with_run=False)
    p.add_argument("--resume", action="store_true", help="skip cells that already completed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_run_matrix)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ShapeError) as exc:
        print(f"cmpa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ContourError, CheckpointError, ReportError, FileNotFoundError) as exc:
        print(f"cmpa: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"cmpa: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
