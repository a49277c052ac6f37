"""Run configuration files, snapshots and result exports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from xml.etree import ElementTree as ET

from . import __version__
from .engine import ArchiveEntry, MnsgaConfig, ParetoArchive, RunState
from .evaluators import ProxyEvaluator, SurrogateEvaluator
from .moea import Individual
from .search_space import Genome, SearchSpaceSpec, default_space
from .weight_mapping import SupernetWeights

OUTPUT_ENV = "MNSGA_NAS_OUTPUT_DIR"
METRIC_COLUMNS = ("generation", "archive_size", "hypervolume", "best_loss", "min_macs")
ENGINE_KEYS = {f.name for f in fields(MnsgaConfig)}
SPACE_KEYS = {"max_slots", "input_resolution", "channels", "ops"}
TOP_KEYS = ENGINE_KEYS | {"space", "evaluator", "output_dir", "algorithm"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfigFile:
    engine: MnsgaConfig
    space_overrides: dict = field(default_factory=dict)
    evaluator: dict = field(default_factory=lambda: {"name": "surrogate"})
    output_dir: str | None = None
    algorithm: str = "mnsga"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfigFile":
        unknown = sorted(set(data) - TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        space = dict(data.get("space") or {})
        unknown = sorted(set(space) - SPACE_KEYS)
        if unknown:
            raise ConfigError(f"unknown space keys: {', '.join(unknown)}")
        evaluator = dict(data.get("evaluator") or {"name": "surrogate"})
        name = evaluator.get("name")
        allowed = {"surrogate": {"name", "stage_coefficients"}, "proxy": {"name", "supernet"}}
        if name not in allowed:
            raise ConfigError(f"evaluator name must be 'surrogate' or 'proxy', got {name!r}")
        unknown = sorted(set(evaluator) - allowed[name])
        if unknown:
            raise ConfigError(f"unknown evaluator keys: {', '.join(unknown)}")
        if name == "proxy" and "supernet" not in evaluator:
            raise ConfigError("proxy evaluator needs a 'supernet' container path")
        algorithm = data.get("algorithm", "mnsga")
        if algorithm not in ("mnsga", "nsga2"):
            raise ConfigError(f"algorithm must be 'mnsga' or 'nsga2', got {algorithm!r}")
        try:
            engine = MnsgaConfig.from_dict({k: data[k] for k in ENGINE_KEYS if k in data})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(engine, space, evaluator, data.get("output_dir"), algorithm)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfigFile":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            **self.engine.to_dict(),
            "space": self.space_overrides,
            "evaluator": self.evaluator,
            "output_dir": self.output_dir,
            "algorithm": self.algorithm,
        }

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def build_space(self) -> SearchSpaceSpec:
        return space_from_overrides(self.space_overrides)

    def build_evaluator(self, space: SearchSpaceSpec, base: Path | None = None):
        ev = self.evaluator
        if ev["name"] == "surrogate":
            return SurrogateEvaluator(space, ev.get("stage_coefficients", (1.0,) * 5))
        path = Path(ev["supernet"])
        if base is not None and not path.is_absolute():
            path = base / path
        supernet = SupernetWeights.load(path)
        if supernet.space_hash != space.space_hash():
            raise ConfigError(
                f"supernet space hash {supernet.space_hash} != run space hash {space.space_hash()}"
            )
        return ProxyEvaluator(space, supernet)

    def resolve_output_dir(self, base: Path | None = None) -> Path:
        out = self.output_dir or os.environ.get(OUTPUT_ENV) or "runs/default"
        out = Path(out)
        if base is not None and not out.is_absolute() and self.output_dir:
            out = base / out
        return out


def space_from_overrides(overrides: dict | None) -> SearchSpaceSpec:
    overrides = overrides or {}
    kwargs = {}
    if "max_slots" in overrides:
        kwargs["max_slots"] = tuple(overrides["max_slots"])
    if "input_resolution" in overrides:
        kwargs["input_resolution"] = int(overrides["input_resolution"])
    if "channels" in overrides:
        kwargs["channels"] = [tuple(c) for c in overrides["channels"]]
    if "ops" in overrides:
        kwargs["ops"] = tuple(overrides["ops"])
    try:
        return default_space(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad space override: {exc}") from exc


def _num(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _unnum(x):
    return float(x) if isinstance(x, str) else x


def individual_to_dict(m: Individual) -> dict:
    return {
        "id": m.id,
        "genome": m.genome.to_dict(),
        "macs": m.macs,
        "params": m.params,
        "loss": m.loss,
        "generation": m.generation,
        "rank": m.rank,
        "crowding": _num(m.crowding),
    }


def individual_from_dict(d: dict) -> Individual:
    return Individual(
        genome=Genome.from_dict(d["genome"]),
        id=d["id"],
        macs=d["macs"],
        params=d["params"],
        loss=d["loss"],
        generation=d["generation"],
        rank=d["rank"],
        crowding=_unnum(d["crowding"]),
    )


def archive_to_list(archive: ParetoArchive) -> list[dict]:
    rows = [
        {
            "genome": e.genome.to_dict(),
            "objectives": {"loss": e.objectives[0], "macs": int(e.objectives[1]),
                           "params": int(e.objectives[2])},
            "generation": e.generation,
        }
        for e in archive
    ]
    rows.sort(key=lambda r: (r["objectives"]["loss"], r["objectives"]["macs"],
                             r["objectives"]["params"], json.dumps(r["genome"])))
    return rows


def archive_from_list(rows: list[dict]) -> ParetoArchive:
    entries = [
        ArchiveEntry(Genome.from_dict(r["genome"]),
                     (r["objectives"]["loss"], r["objectives"]["macs"], r["objectives"]["params"]),
                     r["generation"])
        for r in rows
    ]
    return ParetoArchive(entries)


def write_archive(path: Path, archive: ParetoArchive) -> None:
    path.write_text(json.dumps(archive_to_list(archive), indent=1) + "\n")


def read_archive(path: str | Path) -> list[dict]:
    return json.loads(Path(path).read_text())


def write_metrics(path: Path, metrics: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in metrics:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in METRIC_COLUMNS])


def state_to_dict(state: RunState, config_hash: str, space_hash: str) -> dict:
    return {
        "config_hash": config_hash,
        "space_hash": space_hash,
        "generation": state.generation,
        "next_id": state.next_id,
        "population": [individual_to_dict(m) for m in state.population],
        "archive": [
            {"genome": e.genome.to_dict(), "objectives": list(e.objectives), "generation": e.generation}
            for e in state.archive
        ],
        "metrics": state.metrics,
        "events": state.events,
    }


def state_from_dict(d: dict) -> RunState:
    archive = ParetoArchive(
        [ArchiveEntry(Genome.from_dict(e["genome"]), tuple(e["objectives"]), e["generation"])
         for e in d["archive"]]
    )
    return RunState(
        population=[individual_from_dict(m) for m in d["population"]],
        generation=d["generation"],
        archive=archive,
        next_id=d["next_id"],
        metrics=list(d["metrics"]),
        events=list(d["events"]),
    )


def snapshot_name(generation: int) -> str:
    return f"gen_{generation:04d}.json"


def write_snapshot(out_dir: Path, state: RunState, config_hash: str, space_hash: str,
                   name: str | None = None) -> Path:
    path = out_dir / (name or snapshot_name(state.generation))
    path.write_text(json.dumps(state_to_dict(state, config_hash, space_hash)) + "\n")
    return path


def load_snapshot(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def run_header(cfg: RunConfigFile, space: SearchSpaceSpec, evaluator, scale, ref) -> dict:
    return {
        "artifact_version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": cfg.engine.seed,
        "space_hash": space.space_hash(),
        "algorithm": cfg.algorithm,
        "evaluator": evaluator.descriptor,
        "config": cfg.to_dict(),
        "space": space.to_dict(),
        "hypervolume_scale": list(scale),
        "hypervolume_reference": list(ref),
    }


def export_front_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loss", "macs", "params", "generation"])
        for r in rows:
            o = r["objectives"]
            w.writerow([repr(float(o["loss"])), o["macs"], o["params"], r["generation"]])


def read_front_csv(path: str | Path) -> list[tuple[float, int, int, int]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [(float(r["loss"]), int(r["macs"]), int(r["params"]), int(r["generation"])) for r in reader]


def export_front_svg(rows: list[dict], path: Path, width: int = 640, height: int = 480) -> None:
    """Static scatter of (MACs, loss), one circle per archive entry."""
    pad = 60
    xs = [r["objectives"]["macs"] for r in rows]
    ys = [r["objectives"]["loss"] for r in rows]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    sx = (width - 2 * pad) / ((x1 - x0) or 1)
    sy = (height - 2 * pad) / ((y1 - y0) or 1)
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    ET.SubElement(svg, "line", x1=str(pad), y1=str(height - pad), x2=str(width - pad),
                  y2=str(height - pad), stroke="black")
    ET.SubElement(svg, "line", x1=str(pad), y1=str(pad), x2=str(pad), y2=str(height - pad), stroke="black")
    xl = ET.SubElement(svg, "text", x=str(width // 2), y=str(height - 15), attrib={"text-anchor": "middle"})
    xl.text = f"backbone MACs ({x0:.3g} - {x1:.3g})"
    yl = ET.SubElement(svg, "text", x="15", y=str(height // 2),
                       transform=f"rotate(-90 15 {height // 2})", attrib={"text-anchor": "middle"})
    yl.text = f"loss ({y0:.3g} - {y1:.3g})"
    for x, y in zip(xs, ys):
        cx = pad + (x - x0) * sx
        cy = height - pad - (y - y0) * sy
        ET.SubElement(svg, "circle", cx=f"{cx:.2f}", cy=f"{cy:.2f}", r="3", fill="steelblue",
                      attrib={"class": "marker"})
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
