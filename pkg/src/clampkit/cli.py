"""Command-line entry point: ``clampkit {synth,validate,train,embed,classify,eval}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Only a command's documented payload goes to standard output; logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError, save_embeddings
from .cifparse import CifError, parse_file, to_structure
from .config import ConfigError, RunConfig
from .corpus import ManifestError, SyntheticSpec, ValidationPolicy, load_manifest, synth_corpus, validate
from .crystal import DegenerateCellError, build_graph
from .elements import ElementError
from .numcore import NumericError
from . import clamp, training

log = logging.getLogger("clampkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_lines(path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    spec = SyntheticSpec(args.classes, args.per_class, args.seed, id_prefix=args.id_prefix)
    records = synth_corpus(spec, args.out)
    log.info("wrote %d records to %s", len(records), args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        records = load_manifest(args.manifest)
    except (OSError, ManifestError) as exc:
        log.error("cannot read manifest: %s", exc)
        return EXIT_DATA
    report, _ = validate(records, ValidationPolicy(exclude_partial=args.exclude_partial))
    _write_json(report, args.out)
    return EXIT_OK if report["excluded"] == 0 else EXIT_DATA


def _run_config(args) -> RunConfig:
    data = {}
    base = Path(".")
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        base = Path(args.config).parent
        if data.get("manifest"):
            data["manifest"] = str(base / data["manifest"])
    if args.manifest:
        data["manifest"] = args.manifest
    if args.seed is not None:
        data["seed"] = args.seed
    run = RunConfig.from_dict(data)
    if not run.manifest:
        raise ConfigError("no manifest given (config key 'manifest' or --manifest)")
    return run


def cmd_train(args) -> int:
    run = _run_config(args)
    try:
        result = training.train(run, Path(run.manifest))
    except training.DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    training.write_outputs(result, Path(args.out))
    return EXIT_OK


def _load_records(manifest, model: training.Model, skip_bad: bool):
    records = sorted(load_manifest(manifest), key=lambda r: r.id)
    kept, graphs = [], []
    for r in records:
        try:
            graphs.append(model.graph(r))
        except (OSError, CifError, ElementError, DegenerateCellError, ValueError) as exc:
            if not skip_bad:
                raise training.DataError(f"record {r.id}: {exc}") from None
            log.warning("skipping %s: %s", r.id, exc)
            continue
        kept.append(r)
    if not kept:
        raise training.DataError("no usable records")
    return kept, graphs


def cmd_embed(args) -> int:
    model = training.Model.load(args.ckpt)
    records, graphs = _load_records(args.manifest, model, args.skip_bad)
    if args.modality == "crystal":
        rows = model.embed_graphs(graphs)
    else:
        rows = model.embed_texts([r.text for r in records])
    save_embeddings(args.out, [r.id for r in records], rows, args.modality)
    return EXIT_OK


def cmd_classify(args) -> int:
    prompts = _read_lines(args.prompts)
    if not prompts:
        raise UsageError("prompts file is empty")
    model = training.Model.load(args.ckpt)
    try:
        structure = to_structure(parse_file(args.cif))
    except (OSError, CifError, ElementError, DegenerateCellError, ValueError) as exc:
        raise training.DataError(f"{args.cif}: {exc}") from None
    graph = build_graph(structure, model.run.cutoff, model.run.max_neighbors, model.run.gaussian)
    crystal = model.embed_graphs([graph])[0]
    result = clamp.rank_labels(crystal, model.embed_texts(prompts))
    for rank, (idx, score) in enumerate(result.ranking, start=1):
        sys.stdout.write(f"{rank}\t{score:.6f}\t{prompts[idx]}\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = training.Model.load(args.ckpt)
    records, graphs = _load_records(args.manifest, model, args.skip_bad)
    C = model.embed_graphs(graphs)
    T = model.embed_texts([r.text for r in records])
    report = training.retrieval_metrics(C, T)
    if args.prompts:
        prompts = _read_lines(args.prompts)
        labels = _read_lines(args.labels) if args.labels else None
        if not prompts:
            raise UsageError("prompts file is empty")
        if labels is None or len(labels) != len(prompts):
            raise UsageError("--labels must list one class name per prompt")
        try:
            targets = [labels.index(r.labels[0]) for r in records]
        except (TypeError, ValueError):
            raise training.DataError("every record needs a label listed in --labels") from None
        report["zero_shot_accuracy"] = training.zero_shot_accuracy(C, model.embed_texts(prompts), targets)
        report["zero_shot_classes"] = len(prompts)
    _write_json(report, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = bit-reproducible)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="clampkit", description="Contrastive crystal-text embeddings: data, training and zero-shot tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic crystal-text corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--per-class", type=int, default=64)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--id-prefix", default="syn")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("validate", parents=[common], help="check every CIF referenced by a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", help="report path (default: stdout)")
    s.add_argument("--exclude-partial", action="store_true", help="fail partially occupied structures")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--config")
    s.add_argument("--manifest")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("embed", parents=[common], help="export embeddings for a manifest")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--modality", choices=("crystal", "text"), required=True)
    s.add_argument("--skip-bad", action="store_true")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("classify", parents=[common], help="zero-shot rank prompts for one CIF")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--cif", required=True)
    s.add_argument("--prompts", required=True)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("eval", parents=[common], help="retrieval metrics over a manifest")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", help="report path (default: stdout)")
    s.add_argument("--prompts", help="zero-shot prompts, one per class")
    s.add_argument("--labels", help="class names aligned with --prompts")
    s.add_argument("--skip-bad", action="store_true")
    s.set_defaults(func=cmd_eval)
    return p


def _setup_logging(verbose: bool) -> None:
    """Route package logs to the current stderr (re-bound on every call)."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    for old in list(log.handlers):
        log.removeHandler(old)
    log.addHandler(handler)
    log.setLevel(logging.INFO if verbose else logging.WARNING)
    log.propagate = False


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help (0) or a usage error (1)
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    if args.threads < 1:
        sys.stderr.write("clampkit: error: --threads must be >= 1\n")
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_USAGE
    except (training.DataError, ManifestError, CheckpointError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
