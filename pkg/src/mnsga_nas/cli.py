"""Command-line entry point: ``search``, ``cost``, ``build-supernet``, ``map-weights``, ``export-front``.

Exit codes: 0 success, 1 I/O / configuration / parse errors, 2 infeasible constraints.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .cost_model import backbone_cost, format_cost_table
from .engine import EvaluationError, InfeasibleConstraintsError, MnsgaEngine
from .persistence import (
    OUTPUT_ENV,
    ConfigError,
    RunConfigFile,
    export_front_csv,
    export_front_svg,
    load_snapshot,
    read_archive,
    run_header,
    space_from_overrides,
    state_from_dict,
    write_archive,
    write_metrics,
    write_snapshot,
)
from .search_space import (
    ArchitectureError,
    Genome,
    GenomeStructureError,
    InvalidGenomeError,
    decode,
    default_space,
    parse_architecture,
)
from .weight_mapping import ContainerError, MappingError, SupernetWeights, map_individual

log = logging.getLogger("mnsga_nas")

OWNED = ("archive.json", "metrics.csv", "run.json", "partial.json")


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _fail(msg: str, code: int = 1):
    raise CliError(msg, code)


def _owned_files(out: Path) -> list[Path]:
    return [out / n for n in OWNED if (out / n).exists()] + sorted(out.glob("gen_[0-9][0-9][0-9][0-9].json"))


def cmd_search(args) -> int:
    cfg_path = Path(args.config)
    try:
        cfg = RunConfigFile.load(cfg_path)
    except OSError as exc:
        _fail(f"cannot read config: {exc}")
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, engine=dataclasses.replace(cfg.engine, seed=args.seed))
    out = Path(args.out) if args.out else cfg.resolve_output_dir(cfg_path.parent)
    space = cfg.build_space()
    evaluator = cfg.build_evaluator(space, cfg_path.parent)
    engine = MnsgaEngine(cfg.engine, space, evaluator, algorithm=cfg.algorithm, n_jobs=args.jobs)
    config_hash, space_hash = cfg.config_hash(), space.space_hash()

    state = None
    if args.resume:
        snap = load_snapshot(args.resume)
        if snap["config_hash"] != config_hash:
            _fail(f"snapshot config hash {snap['config_hash']} != current {config_hash}")
        if snap["space_hash"] != space_hash:
            _fail(f"snapshot space hash {snap['space_hash']} != current {space_hash}")
        state = state_from_dict(snap)
        out.mkdir(parents=True, exist_ok=True)
        for stale in out.glob("gen_[0-9][0-9][0-9][0-9].json"):
            if int(stale.stem[4:]) > state.generation:
                stale.unlink()
    else:
        existing = _owned_files(out) if out.exists() else []
        if existing and not args.force:
            _fail(f"{out} already holds run outputs; pass --force to overwrite")
        out.mkdir(parents=True, exist_ok=True)
        for f in existing:
            f.unlink()

    header = run_header(cfg, space, evaluator, engine.scale, engine.reference_point)
    (out / "run.json").write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")
    log.info("run %s seed=%d space=%s -> %s", config_hash, cfg.engine.seed, space_hash, out)

    def snapshot(st):
        write_snapshot(out, st, config_hash, space_hash)

    def failed(st):
        write_snapshot(out, st, config_hash, space_hash, name="partial.json")

    try:
        state = engine.run(state, on_generation=snapshot, on_failure=failed)
    except InfeasibleConstraintsError as exc:
        _fail(str(exc), code=2)
    except EvaluationError as exc:
        _fail(str(exc))
    write_archive(out / "archive.json", state.archive)
    write_metrics(out / "metrics.csv", state.metrics)
    last = state.metrics[-1]
    print(f"generation {last['generation']}: archive {last['archive_size']} entries, "
          f"hypervolume {last['hypervolume']:.6g}, best loss {last['best_loss']:.6g}")
    return 0


def _load_genome_file(path: Path) -> tuple[Genome, dict]:
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        _fail(f"cannot read genome {path}: {exc}")
    return Genome.from_dict(data), data


def cmd_cost(args) -> int:
    if args.genome:
        genome, data = _load_genome_file(Path(args.genome))
        overrides = dict(data.get("space") or {})
        if args.resolution:
            overrides["input_resolution"] = args.resolution
        space = space_from_overrides(overrides)
        arch = decode(space, genome)
    else:
        try:
            text = Path(args.arch).read_text()
        except OSError as exc:
            _fail(f"cannot read architecture: {exc}")
        space = default_space(input_resolution=args.resolution or 320)
        arch = parse_architecture(text, space)
    report = backbone_cost(arch)
    if args.json:
        print(json.dumps(report.to_dict(), indent=1))
    else:
        print(format_cost_table(arch, report))
    return 0


def cmd_build_supernet(args) -> int:
    overrides = {}
    if args.config:
        overrides = RunConfigFile.load(args.config).space_overrides
    space = space_from_overrides(overrides)
    supernet = SupernetWeights.build(space, seed=args.seed, kernel_size=args.kernel_size)
    supernet.save(args.out)
    print(f"supernet {supernet.space_hash} seed={args.seed}: {len(supernet.keys())} tensors -> {args.out}")
    return 0


def cmd_map_weights(args) -> int:
    supernet = SupernetWeights.load(args.supernet)
    genome, data = _load_genome_file(Path(args.genome))
    space = space_from_overrides(data.get("space")) if "space" in data else supernet.space
    genome_hash = data.get("space_hash", space.space_hash())
    if genome_hash != supernet.space_hash or space.space_hash() != supernet.space_hash:
        _fail(f"space hash mismatch: genome {genome_hash} vs supernet {supernet.space_hash}")
    mapped = map_individual(supernet, space, genome)
    sidecar = mapped.save(args.out)
    by_stage: dict[int, list] = {}
    for layer in mapped.layers:
        by_stage.setdefault(layer.stage, []).append(layer.weights.shape)
    for stage, dims in by_stage.items():
        shown = ", ".join("x".join(map(str, d)) for d in dims)
        print(f"stage {stage}: {len(dims)} layer(s) [{shown}]")
    print(f"wrote {args.out} and {sidecar}")
    return 0


def cmd_export_front(args) -> int:
    try:
        rows = read_archive(args.archive)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(f"cannot read archive: {exc}")
    if not rows:
        _fail("archive is empty")
    out = Path(args.out) if args.out else Path(args.archive).with_suffix("." + args.format)
    if args.format == "csv":
        export_front_csv(rows, out)
    else:
        export_front_svg(rows, out)
    print(f"wrote {len(rows)} entries to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mnsga-nas", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser(
        "search",
        help="run MNSGA or the NSGA-II baseline",
        description=(
            "Config JSON keys (unknown keys are rejected): population_size (24), generations (30), "
            "crossover_prob (0.9), mutation_prob (0.1), g1_max_macs (null = unbounded), "
            "g2_max_params (null), stage1_trial_budget (4*population_size), seed (0), "
            "algorithm ('mnsga' | 'nsga2'), output_dir (else $" + OUTPUT_ENV + " or runs/default), "
            "space {max_slots, input_resolution, channels, ops}, "
            "evaluator {name: 'surrogate', stage_coefficients} | {name: 'proxy', supernet: PATH}."
        ),
    )
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", metavar="SNAPSHOT")
    s.add_argument("--out", help="output directory (overrides config)")
    s.add_argument("--force", action="store_true", help="overwrite outputs of a previous run")
    s.add_argument("--jobs", type=int, default=1, help="concurrent evaluations")
    s.set_defaults(func=cmd_search)

    c = sub.add_parser("cost", help="MACs / params of an architecture or genome")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--arch", help="per-layer text file (index op c_in c_out stride)")
    src.add_argument("--genome", help="genome JSON")
    c.add_argument("--resolution", type=int)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_cost)

    b = sub.add_parser("build-supernet", help="write a seeded synthetic supernet container")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--config", help="run config whose space overrides to use")
    b.add_argument("--kernel-size", type=int, default=3)
    b.set_defaults(func=cmd_build_supernet)

    m = sub.add_parser("map-weights", help="extract an individual's weights from a supernet")
    m.add_argument("--supernet", required=True)
    m.add_argument("--genome", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_map_weights)

    e = sub.add_parser("export-front", help="export an archive as CSV or SVG scatter")
    e.add_argument("--archive", required=True)
    e.add_argument("--format", choices=("csv", "svg"), default="csv")
    e.add_argument("--out")
    e.set_defaults(func=cmd_export_front)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InfeasibleConstraintsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ArchitectureError, GenomeStructureError, InvalidGenomeError,
            MappingError, ContainerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
