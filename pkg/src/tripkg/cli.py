"""Command-line pipeline: synth -> ingest -> build-graph -> train -> rank ->
baseline -> evaluate. Every stage writes its artifacts plus a
``<stage>.manifest.json`` recording input/output hashes and the config."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .baselines import (
    cf_ranking,
    epr_ranking,
    jump_size_distribution,
    md_ranking,
    pepr_ranking,
    present_zones,
    random_ranking,
    read_coords,
    visit_matrix,
)
from .config import PipelineConfig, load_config
from .embedding import EmbeddingModel, train
from .errors import ConfigError, DataError, MissingStageError, TripKGError
from .evaluation import evaluate, write_H, write_iprime, write_U
from .ranking import combined_ranking, hotness_ranking, rank_all, read_rankings, write_rankings
from .synth import generate
from .tkg import TripKnowledgeGraph, build_graph, graph_stats, read_poi_table
from .trip_data import (
    IndividualProfile,
    build_profiles,
    filter_low_predictability,
    mean_rates,
    parse_trips,
    split_periods,
    write_trips,
)

log = logging.getLogger("tripkg")

BASELINE_METHODS = ("random", "hotness", "md_uv", "md_qr", "md_svd", "cf_user", "cf_item", "epr", "pepr")
RANK_KINDS = ("embedding", "hotness", "combined")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingStageError(stage, path)
    return path


def write_manifest(out: Path, stage: str, inputs: dict[str, Path], outputs: dict[str, Path], config: dict,
                   extra: dict | None = None) -> Path:
    body = {
        "stage": stage,
        "inputs": {k: {"path": str(p), "sha256": sha256_file(p)} for k, p in sorted(inputs.items())},
        "outputs": {k: {"path": str(p), "sha256": sha256_file(p)} for k, p in sorted(outputs.items())},
        "config": config,
        "versions": {"tripkg": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    if extra:
        body.update(extra)
    path = out / f"{stage}.manifest.json"
    _write(path, json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")
    return path


class Workspace:
    """Artifact locations inside the output directory."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.paths.output)

    def __getattr__(self, name):
        names = {
            "observed": "observed.csv", "future": "future.csv", "profiles": "profiles.csv",
            "targets": "targets.txt", "zones": "zones.csv", "graph": "graph.tkg", "model": "model.npz",
            "train_log": "train_log.jsonl",
        }
        if name in names:
            return self.out / names[name]
        raise AttributeError(name)

    def rankings(self, method: str) -> Path:
        return self.out / f"rankings_{method}.csv"

    def eval_dir(self, method: str) -> Path:
        return self.out / "eval" / method


# -- artifact readers ---------------------------------------------------------


def _read_zone_universe(cfg: PipelineConfig) -> list[int]:
    p = cfg.paths
    if p.zones:
        path = Path(p.zones)
        if not path.exists():
            raise ConfigError(f"zones file {path} does not exist")
        rows = list(csv.reader(open(path, encoding="utf-8")))
        if not rows or rows[0][0].strip().lower() != "zone_id":
            raise DataError("zones file header must be zone_id")
        return sorted(int(r[0]) for r in rows[1:] if r)
    if p.coords and Path(p.coords).exists():
        return sorted(read_coords(open(p.coords, encoding="utf-8")))
    raise ConfigError("a zone universe is required: set paths.zones or paths.coords")


def write_profiles(profiles: dict[str, IndividualProfile], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["vehicle_id", "trip_count", "entropy", "observed", "future"])
    for vid, p in profiles.items():
        obs = " ".join(f"{z}:{c}" for z, c in sorted(p.destination_counts.items()))
        fut = " ".join(str(z) for z in sorted(p.future_destinations))
        w.writerow([vid, p.trip_count, repr(p.entropy), obs, fut])


def read_profiles(path: Path) -> dict[str, IndividualProfile]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            counts = {}
            for item in row["observed"].split():
                z, _, c = item.partition(":")
                counts[int(z)] = int(c)
            fut = frozenset(int(z) for z in row["future"].split())
            out[row["vehicle_id"]] = IndividualProfile(row["vehicle_id"], int(row["trip_count"]), counts, fut)
    return out


def _read_trips_file(path: Path, zones=None):
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_trips(fh, zones)


def _load_graph(ws: Workspace) -> TripKnowledgeGraph:
    return TripKnowledgeGraph.loads(_require(ws.graph, "build-graph").read_text(encoding="utf-8"))


def _targets(ws: Workspace) -> list[str]:
    return _require(ws.targets, "ingest").read_text(encoding="utf-8").split()


# -- stages ---------------------------------------------------------------------


def cmd_synth(cfg: PipelineConfig, args) -> int:
    data = generate(cfg.synth)
    p = cfg.paths
    files = {"trips": Path(p.trips), "poi": Path(p.poi), "coords": Path(p.coords),
             "zones": Path(p.zones) if p.zones else Path(p.trips).with_name("zones.csv")}
    _write(files["trips"], data.trips_csv())
    _write(files["poi"], data.poi_csv())
    _write(files["coords"], data.coords_csv())
    _write(files["zones"], data.zones_csv())
    truth = io.StringIO()
    w = csv.writer(truth, lineterminator="\n")
    w.writerow(["vehicle_id", "group", "known_zones"])
    for vid, g in data.groups.items():
        w.writerow([vid, g, " ".join(map(str, data.known[vid]))])
    files["groups"] = Path(p.trips).with_name("groups.csv")
    _write(files["groups"], truth.getvalue())
    write_manifest(files["trips"].parent, "synth", {}, files, {"synth": cfg.echo()["synth"]})
    print(f"synth: {len(data.observed)} observation + {len(data.future)} future trips, "
          f"{cfg.synth.num_individuals} travelers -> {files['trips']}")
    return 0


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    zones = _read_zone_universe(cfg)
    trips_path = Path(cfg.paths.trips)
    if not trips_path.exists():
        raise ConfigError(f"trips file {trips_path} does not exist")
    records = _read_trips_file(trips_path, zones)
    split = split_periods(records, cfg.split.split())
    profiles = build_profiles(split.observed, split.future)
    selection = filter_low_predictability(profiles, cfg.filter)
    targets = set(selection.selected)

    buf = io.StringIO()
    write_trips(split.observed, buf)
    _write(ws.observed, buf.getvalue())
    buf = io.StringIO()
    write_trips(split.future, buf)
    _write(ws.future, buf.getvalue())
    buf = io.StringIO()
    write_profiles(selection.selected, buf)
    _write(ws.profiles, buf.getvalue())
    _write(ws.targets, "".join(f"{v}\n" for v in sorted(targets)))
    _write(ws.zones, "zone_id\n" + "".join(f"{z}\n" for z in zones))
    qa, qp = mean_rates(selection.selected.values())
    stats = {"partition": split.counts, "profiles": len(profiles), "targets": len(targets),
             "rejections": selection.rejections, "mean_accidental_pct": qa, "mean_potential_pct": qp}
    inputs = {"trips": trips_path}
    if cfg.paths.zones:
        inputs["zones_in"] = Path(cfg.paths.zones)
    write_manifest(ws.out, "ingest", inputs,
                   {"observed": ws.observed, "future": ws.future, "profiles": ws.profiles,
                    "targets": ws.targets, "zones": ws.zones},
                   {k: cfg.echo()[k] for k in ("split", "filter", "paths")}, {"stats": stats})
    print(f"ingest: {split.counts}; {len(targets)} of {len(profiles)} travelers selected")
    return 0


def cmd_build_graph(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    observed = _read_trips_file(_require(ws.observed, "ingest"))
    targets = _targets(ws)
    zones = _read_zone_universe(_with_zones(cfg, ws))
    poi_path = Path(cfg.paths.poi) if cfg.paths.poi else None
    poi = read_poi_table(open(poi_path, encoding="utf-8")) if poi_path and poi_path.exists() else []
    graph = build_graph(observed, poi, cfg.temporal.temporal(), zones=zones, targets=targets,
                        options=cfg.graph.options())
    _write(ws.graph, graph.dumps())
    inputs = {"observed": ws.observed, "targets": ws.targets}
    if poi_path and poi_path.exists():
        inputs["poi"] = poi_path
    stats = graph_stats(graph)
    write_manifest(ws.out, "build-graph", inputs, {"graph": ws.graph},
                   {k: cfg.echo()[k] for k in ("temporal", "graph")}, {"stats": stats, "graph_digest": graph.digest()})
    print(f"build-graph: {stats['entities']} entities, {stats['relations']} relations, {stats['triples']} triples")
    return 0


def _with_zones(cfg: PipelineConfig, ws: Workspace) -> PipelineConfig:
    if ws.zones.exists():
        return dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, zones=str(ws.zones)))
    return cfg


def cmd_train(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    graph = _load_graph(ws)
    model, reports = train(graph, cfg.train)
    model.save(ws.model)
    _write(ws.train_log, "".join(r.to_json() + "\n" for r in reports))
    last = reports[-1] if reports else None
    write_manifest(ws.out, "train", {"graph": ws.graph}, {"model": ws.model},
                   {"train": cfg.echo()["train"], "threads": cfg.threads},
                   {"epochs_run": len(reports), "final_mean_loss": last.mean_loss if last else None})
    if last:
        print(f"train: {len(reports)} epochs, mean loss {last.mean_loss:.4g}, "
              f"{last.within_margin:.1%} triples within margin")
    else:
        print("train: zero epochs, model saved at initialization")
    return 0


def cmd_rank(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    graph = _load_graph(ws)
    model = EmbeddingModel.load(_require(ws.model, "train"), graph)
    targets = [v for v in _targets(ws) if v in set(graph.vehicle_ids)]
    tables = rank_all(model, graph, targets, cfg.train.distance_norm)
    observed = _read_trips_file(ws.observed)
    hot = hotness_ranking(observed, graph.zone_ids, targets)
    outputs = {}
    for kind in RANK_KINDS:
        if kind == "embedding":
            out = tables.values()
        elif kind == "hotness":
            out = [hot.restricted(v, tables[v].entries) for v in targets]
        else:
            out = [combined_ranking(tables[v], hot) for v in targets]
        buf = io.StringIO()
        write_rankings(out, buf)
        _write(ws.rankings(kind), buf.getvalue())
        outputs[kind] = ws.rankings(kind)
    write_manifest(ws.out, "rank", {"graph": ws.graph, "model": ws.model, "observed": ws.observed}, outputs,
                   {"distance_norm": cfg.train.distance_norm})
    print(f"rank: {len(targets)} travelers ranked ({', '.join(RANK_KINDS)})")
    return 0


def cmd_baseline(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    method = args.method
    if method not in BASELINE_METHODS:
        raise ConfigError(f"unknown baseline {method!r}; choose from {', '.join(BASELINE_METHODS)}")
    observed = _read_trips_file(_require(ws.observed, "ingest"))
    targets = _targets(ws)
    zones = _read_zone_universe(_with_zones(cfg, ws))
    b = cfg.baseline
    inputs = {"observed": ws.observed, "targets": ws.targets}
    mat = visit_matrix(observed, targets, zones)
    if method == "random":
        tables = [random_ranking(v, mat.unobserved(i), cfg.seed) for i, v in enumerate(mat.vehicles)]
    elif method == "hotness":
        hot = hotness_ranking(observed, zones, targets)
        tables = [hot.restricted(v, mat.unobserved(i)) for i, v in enumerate(mat.vehicles)]
    elif method.startswith("md_"):
        tables = list(md_ranking(mat, method[3:].upper(), b.md_rank, cfg.seed).values())
    elif method.startswith("cf_"):
        tables = list(cf_ranking(mat, method[3:], b.cf_neighbors).values())
    else:
        coords_path = Path(cfg.paths.coords)
        if not coords_path.exists():
            raise ConfigError(f"coordinates file {coords_path} is required for {method}")
        coords = read_coords(open(coords_path, encoding="utf-8"))
        inputs["coords"] = coords_path
        future = _read_trips_file(ws.future) if b.present == "first_new_trip" else []
        present = present_zones(observed, future, b.present)
        J = jump_size_distribution(observed, coords, b.jump_bin_width)
        hot = hotness_ranking(observed, zones, targets)
        tables = []
        for i, v in enumerate(mat.vehicles):
            t = epr_ranking(v, present[v], mat.unobserved(i), J, coords)
            tables.append(pepr_ranking(t, hot) if method == "pepr" else t)
    buf = io.StringIO()
    write_rankings(tables, buf)
    _write(ws.rankings(method), buf.getvalue())
    write_manifest(ws.out, f"baseline-{method}", inputs, {"rankings": ws.rankings(method)},
                   {"baseline": cfg.echo()["baseline"], "seed": cfg.seed})
    print(f"baseline {method}: {len(tables)} travelers ranked")
    return 0


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    method = args.method
    rank_path = ws.rankings(method)
    stage = "rank" if method in RANK_KINDS else f"baseline --method {method}"
    tables = read_rankings(open(_require(rank_path, stage), encoding="utf-8"))
    profiles = read_profiles(_require(ws.profiles, "ingest"))
    profiles = {v: p for v, p in profiles.items() if v in tables}
    zones = _read_zone_universe(_with_zones(cfg, ws))
    ev = cfg.evaluate
    report, U, H = evaluate(tables, profiles, len(zones), ev.k_list(), ev.rho_support, ev.bin_width, method,
                            {"evaluate": cfg.echo()["evaluate"], "split": cfg.echo()["split"]})
    d = ws.eval_dir(method)
    _write(d / "report.json", report.to_json())
    for name, writer, obj in (("U.csv", write_U, U), ("H.csv", write_H, H), ("iprime.csv", write_iprime, U)):
        buf = io.StringIO()
        writer(obj, buf)
        _write(d / name, buf.getvalue())
    inputs = {"rankings": rank_path, "profiles": ws.profiles}
    if method in RANK_KINDS and ws.model.exists():
        inputs["model"] = ws.model
    write_manifest(d, "evaluate", inputs,
                   {"report": d / "report.json", "U": d / "U.csv", "H": d / "H.csv", "iprime": d / "iprime.csv"},
                   {"evaluate": cfg.echo()["evaluate"]})
    rho = "n/a" if report.spearman_rho is None else f"{report.spearman_rho:.4f}"
    print(f"evaluate {method}: rho={rho} D_f={report.confusion_degree} "
          f"D_c={ {k: round(v, 4) for k, v in report.concentration.items()} }")
    return 0


def cmd_pipeline(cfg: PipelineConfig, args) -> int:
    """Run every stage in order on the configured inputs."""
    if args.synth:
        cmd_synth(cfg, args)
    cmd_ingest(cfg, args)
    cmd_build_graph(cfg, args)
    cmd_train(cfg, args)
    cmd_rank(cfg, args)
    methods = list(RANK_KINDS)
    for m in args.baselines:
        cmd_baseline(cfg, argparse.Namespace(method=m))
        methods.append(m)
    for m in methods:
        cmd_evaluate(cfg, argparse.Namespace(method=m))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "rank": cmd_rank,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file with per-stage sections")
    common.add_argument("--seed", type=int, help="global seed (training, synthesis, random baseline)")
    common.add_argument("--threads", type=int, help="BLAS/OpenMP thread count (fixes float reduction order)")
    common.add_argument("--output", help="artifact directory (paths.output)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tripkg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic trip population")
    sub.add_parser("ingest", parents=[common], help="parse, split and select travelers")
    sub.add_parser("build-graph", parents=[common], help="build the trip knowledge graph")
    p = sub.add_parser("train", parents=[common], help="train the graph embedding")
    p.add_argument("--epochs", type=int)
    p.add_argument("--dim", type=int)
    sub.add_parser("rank", parents=[common], help="rank unobserved zones per traveler")
    p = sub.add_parser("baseline", parents=[common], help="rank with a reference method")
    p.add_argument("--method", required=True, choices=BASELINE_METHODS)
    p = sub.add_parser("evaluate", parents=[common], help="score a ranking file against future trips")
    p.add_argument("--method", default="embedding", choices=RANK_KINDS + BASELINE_METHODS)
    p = sub.add_parser("pipeline", parents=[common], help="run all stages")
    p.add_argument("--synth", action="store_true", help="generate synthetic inputs first")
    p.add_argument("--baselines", nargs="*", default=[], choices=BASELINE_METHODS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dim", type=int)
    return parser


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        ov[key.strip()] = value
    if args.seed is not None:
        ov["run.seed"] = args.seed
    if args.threads is not None:
        ov["run.threads"] = args.threads
    if args.output is not None:
        ov["paths.output"] = args.output
    for name in ("epochs", "dim"):
        if getattr(args, name, None) is not None:
            ov[f"train.{name}"] = getattr(args, name)
    return ov


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        with threadpool_limits(limits=cfg.threads):
            return COMMANDS[args.command](cfg, args)
    except TripKGError as exc:
        print(f"tripkg {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"tripkg {args.command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
