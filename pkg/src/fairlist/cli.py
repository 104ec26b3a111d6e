"""``fairlist`` command line: ingest, cluster, train, plan, simulate, report.

Each stage reads and writes plain files under the configured output
directory, so any stage can be rerun on its own.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from . import __version__
from .calllog import (
    TrafficProfile,
    assemble_sessions,
    estimate_traffic_profile,
    label_sessions,
    parse_call_logs,
    write_events,
)
from .config import DEFAULTS, ConfigError, RunConfig, load_config, write_config
from .exposure import build_plan
from .metrics import ReportFormat, build_report, emit_report
from .ranker import read_lists, write_lists
from .recommender import (
    EmptyPoolError,
    OracleModel,
    item_features,
    items_from_events,
    label_item_for_cluster,
    read_catalog,
    read_pool,
    recommended_pool,
    save_model,
    train,
    write_catalog,
    write_pool,
)
from .simulator import (
    SimulationConfig,
    SyntheticWorkloadSpec,
    generate_synthetic,
    read_outcomes,
    run_comparison,
    variant_policy,
    write_manifest,
    write_outcomes,
)
from .users import (
    EmptyStageError,
    PreferenceVector,
    build_preference_vector,
    elbow_select_k,
    filter_engaged_users,
    k_prototypes,
    user_activity,
)

log = logging.getLogger("fairlist")

EXIT_OK, EXIT_INGEST, EXIT_CLUSTER, EXIT_SIMULATE, EXIT_REPORT = 0, 2, 3, 4, 5


class StageError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- file helpers ------------------------------------------------------------------


def _require(path: Path, code: int, what: str) -> Path:
    if not path.exists():
        raise StageError(code, f"missing {what}: {path} (run the upstream command first)")
    return path


def _dump_json(data, path: Path) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _vector_to_json(v: PreferenceVector) -> dict:
    return {f"{s}|{t}": [v.scores[(s, t)], bool(v.heard.get((s, t), False))] for s, t in sorted(v.scores)}


def _vector_from_json(d: dict) -> PreferenceVector:
    scores, heard = {}, {}
    for key, (score, h) in d.items():
        pair = tuple(key.split("|", 1))
        scores[pair], heard[pair] = float(score), bool(h)
    return PreferenceVector(scores, heard)


def _load_events(cfg: RunConfig, code: int):
    path = _require(cfg.output_dir / "events.csv", code, "event store")
    with open(path, newline="") as fh:
        return parse_call_logs(fh).events


def _load_clusters(cfg: RunConfig, code: int) -> dict[str, int]:
    path = _require(cfg.output_dir / "clusters.csv", code, "cluster assignment")
    with open(path, newline="") as fh:
        return {r["caller_id"]: int(r["cluster"]) for r in csv.DictReader(fh)}


def _load_catalog(cfg: RunConfig, code: int):
    with open(_require(cfg.output_dir / "items.csv", code, "item catalog"), newline="") as fh:
        return read_catalog(fh)


def _topic(cfg: RunConfig, catalog, code: int) -> str:
    topics = sorted({it.topic for it in catalog.values()})
    if cfg.topic:
        if cfg.topic not in topics:
            raise StageError(code, f"topic {cfg.topic!r} not in the catalog (have {topics})")
        return cfg.topic
    if len(topics) != 1:
        raise StageError(code, f"several topics {topics}; set simulation.topic")
    return topics[0]


def _cluster_sessions(cfg: RunConfig, code: int, topic: str):
    clusters = _load_clusters(cfg, code)
    events = [e for e in _load_events(cfg, code) if e.topic == topic]
    by_cluster = defaultdict(list)
    for s in assemble_sessions(events):
        if s.caller_id in clusters:
            by_cluster[clusters[s.caller_id]].append(s)
    return clusters, dict(by_cluster), events


# -- stages ----------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> None:
    if cfg.logs is None:
        raise StageError(EXIT_INGEST, "paths.logs is not set")
    try:
        with open(cfg.logs, newline="") as fh:
            result = parse_call_logs(fh, cfg.columns, cfg.delimiter)
    except OSError as err:
        raise StageError(EXIT_INGEST, f"cannot read logs {cfg.logs}: {err}") from None
    except ValueError as err:
        raise StageError(EXIT_INGEST, f"{cfg.logs}: {err}") from None
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "diagnostics.txt", "w") as fh:
        for d in result.diagnostics:
            fh.write(f"{d}\n")
    if result.diagnostics:
        log.warning("rejected %d row(s); see %s", len(result.diagnostics), out / "diagnostics.txt")
    if not result.events:
        raise StageError(EXIT_INGEST, f"no valid rows in {cfg.logs}")
    events = sorted(result.events, key=lambda e: (e.timestamp, e.call_id, e.rank_position or 0, e.item_id))
    with open(out / "events.csv", "w", newline="") as fh:
        write_events(events, fh)
    if cfg.items is not None:
        try:
            with open(cfg.items, newline="") as fh:
                catalog = read_catalog(fh)
        except (OSError, KeyError, ValueError) as err:
            raise StageError(EXIT_INGEST, f"cannot read item catalog {cfg.items}: {err}") from None
        for item_id, item in items_from_events(events).items():
            catalog.setdefault(item_id, item)
    else:
        catalog = items_from_events(events)
    with open(out / "items.csv", "w", newline="") as fh:
        write_catalog(catalog.values(), fh)
    sessions = assemble_sessions(events)
    traffic = estimate_traffic_profile(sessions, cfg.schedule.list_length)
    _dump_json(traffic.to_dict(), out / "traffic.json")
    log.info("ingested %d events in %d sessions, %d items", len(events), len(sessions), len(catalog))


def cmd_cluster(cfg: RunConfig) -> None:
    events = _load_events(cfg, EXIT_CLUSTER)
    sessions = assemble_sessions(events)
    labeled = label_sessions(sessions, cfg.heard_threshold)
    by_user = defaultdict(list)
    for e, lab in labeled:
        by_user[e.caller_id].append((e, lab))
    activity = user_activity(sessions, by_user)
    global_vector = build_preference_vector(labeled)
    try:
        survivors = filter_engaged_users(activity, cfg.thresholds, global_vector)
    except EmptyStageError as err:
        raise StageError(EXIT_CLUSTER, str(err)) from None
    vectors = {u: activity[u].vector for u in survivors}
    out = cfg.output_dir
    if cfg.k is None:
        ks = [k for k in cfg.k_range if k <= len(survivors)]
        if not ks:
            raise StageError(EXIT_CLUSTER, f"only {len(survivors)} engaged user(s); too few for k in {list(cfg.k_range)}")
        elbow = elbow_select_k(vectors, ks, seed=cfg.cluster_seed, gamma=cfg.gamma)
        result = elbow.fits[elbow.k]
        curve = list(zip(elbow.ks, elbow.costs))
    else:
        if cfg.k > len(survivors):
            raise StageError(EXIT_CLUSTER, f"k={cfg.k} exceeds the {len(survivors)} engaged user(s)")
        result = k_prototypes(vectors, cfg.k, gamma=cfg.gamma, seed=cfg.cluster_seed)
        curve = []
    with open(out / "clusters.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["caller_id", "cluster"])
        for u in sorted(result.assignment):
            w.writerow([u, result.assignment[u]])
    _dump_json(
        {"k": result.k, "gamma": result.gamma, "seed": result.seed, "cost": result.cost,
         "centroids": [_vector_to_json(c) for c in result.centroids]},
        out / "centroids.json",
    )
    _dump_json({u: _vector_to_json(activity[u].vector) for u in sorted(activity)}, out / "vectors.json")
    with open(out / "cost_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "cost"])
        for k, c in curve:
            w.writerow([k, repr(c)])
    log.info("kept %d of %d users; k=%d", len(survivors), len(activity), result.k)


def cmd_train(cfg: RunConfig) -> None:
    code = EXIT_SIMULATE
    out = cfg.output_dir
    catalog = _load_catalog(cfg, code)
    topic = _topic(cfg, catalog, code)
    clusters, _, events = _cluster_sessions(cfg, code, topic)
    cents = json.loads(_require(out / "centroids.json", code, "cluster centroids").read_text())
    centroids = [_vector_from_json(c) for c in cents["centroids"]]
    contributor_vectors = {
        u: _vector_from_json(v) for u, v in json.loads(_require(out / "vectors.json", code, "user vectors").read_text()).items()
    }
    items = [it for it in catalog.values() if it.topic == topic]
    aspects = sorted(set().union(*(it.aspects for it in items)))
    labeled = label_sessions(assemble_sessions(events), cfg.heard_threshold)
    by_item_cluster = defaultdict(list)
    for e, lab in labeled:
        if e.caller_id in clusters:
            by_item_cluster[(clusters[e.caller_id], e.item_id)].append((e, lab))

    for k, centroid in enumerate(centroids):
        labels = {}
        for it in items:
            lab = label_item_for_cluster(it, by_item_cluster.get((k, it.item_id), []))
            if lab is not None:
                labels[it.item_id] = lab
        if cfg.classifier_mode == "oracle":
            model = OracleModel(labels, len(aspects) + 2)
        else:
            heard = [it for it in items if it.item_id in labels]
            feats = [item_features(it, aspects, centroid, contributor_vectors) for it in heard]
            try:
                model = train(feats, [labels[it.item_id].label for it in heard], cfg.ensemble, cfg.classifier_seed)
            except ValueError as err:
                raise StageError(code, f"cluster {k}: cannot train classifier: {err}") from None
            log.info("cluster %d: validation accuracy %s (majority baseline %s)", k,
                     model.validation_accuracy, model.baseline_accuracy)
        with open(out / f"model.c{k}.json", "w") as fh:
            save_model(model, fh)
        try:
            pool = recommended_pool(model, items, centroid, contributor_vectors, cluster=k, topic_aspects=aspects)
        except EmptyPoolError as err:
            raise StageError(code, str(err)) from None
        with open(out / f"pool.c{k}.csv", "w", newline="") as fh, open(out / f"beta.c{k}.csv", "w", newline="") as bh:
            write_pool(pool, items, fh, bh)


def _clusters_with_pools(cfg: RunConfig, code: int) -> list[int]:
    cents = json.loads(_require(cfg.output_dir / "centroids.json", code, "cluster centroids").read_text())
    ks = list(range(int(cents["k"])))
    for k in ks:
        _require(cfg.output_dir / f"pool.c{k}.csv", code, f"recommended pool for cluster {k}")
    return ks


def _read_pool(cfg: RunConfig, k: int, topic: str):
    with open(cfg.output_dir / f"pool.c{k}.csv", newline="") as fh:
        return read_pool(fh, topic, k)


def cmd_plan(cfg: RunConfig) -> None:
    code = EXIT_SIMULATE
    out = cfg.output_dir
    catalog = _load_catalog(cfg, code)
    topic = _topic(cfg, catalog, code)
    _, by_cluster, _ = _cluster_sessions(cfg, code, topic)
    for k in _clusters_with_pools(cfg, code):
        sessions = by_cluster.get(k, [])
        if not sessions:
            raise StageError(code, f"cluster {k} has no sessions on topic {topic!r}")
        traffic = estimate_traffic_profile(sessions, cfg.schedule.list_length)
        _dump_json(traffic.to_dict(), out / f"traffic.c{k}.json")
        pool = _read_pool(cfg, k, topic)
        ratings = {i: catalog[i].rating for i in pool.item_ids()}
        for v in cfg.variants:
            if not v.is_policy:
                continue
            try:
                plan = build_plan(variant_policy(v, cfg.min_share), pool, traffic, cfg.schedule, ratings)
            except ValueError as err:
                raise StageError(code, f"cluster {k}, {v.value}: {err}") from None
            with open(out / f"plan.c{k}.{v.value}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["item_id", "desired_exposure"])
                for i in sorted(plan.targets):
                    w.writerow([i, repr(plan.targets[i])])
            _dump_json({"inventory": plan.inventory, "aspect_shares": plan.aspect_shares},
                       out / f"plan.c{k}.{v.value}.json")


def cmd_simulate(cfg: RunConfig) -> None:
    code = EXIT_SIMULATE
    out = cfg.output_dir
    catalog = _load_catalog(cfg, code)
    topic = _topic(cfg, catalog, code)
    _, by_cluster, events = _cluster_sessions(cfg, code, topic)
    ks = _clusters_with_pools(cfg, code)
    pools, traffic = {}, {}
    for k in ks:
        pools[k] = _read_pool(cfg, k, topic)
        path = _require(out / f"traffic.c{k}.json", code, f"traffic profile for cluster {k}")
        traffic[k] = TrafficProfile.from_dict(json.loads(path.read_text()))
        for v in cfg.variants:
            if v.is_policy:
                _require(out / f"plan.c{k}.{v.value}.csv", code, f"exposure plan for cluster {k}, {v.value}")
    origin = cfg.origin or min(e.timestamp for e in events).date()
    sim = SimulationConfig(cfg.schedule, cfg.depth_mode, cfg.min_share, origin)
    topic_items = {i: it for i, it in catalog.items() if it.topic == topic}
    try:
        outcomes = run_comparison(by_cluster, pools, cfg.variants, sim, cfg.seed, traffic=traffic, catalog=topic_items)
    except ValueError as err:
        raise StageError(code, str(err)) from None
    aspect_map = {i: it.aspects for i, it in catalog.items()}
    for (k, v), o in sorted(outcomes.items(), key=lambda t: (t[0][0], t[0][1].value)):
        with open(out / f"outcome.c{k}.{v.value}.csv", "w", newline="") as fh:
            write_outcomes([o], fh)
        with open(out / f"lists.c{k}.{v.value}.csv", "w", newline="") as fh:
            write_lists(o.lists_generated, aspect_map, fh)
    with open(out / "manifest.json", "w") as fh:
        write_manifest(fh, seed=cfg.seed, config_hash=cfg.config_hash(), variants=cfg.variants, clusters=ks,
                       outcomes=outcomes)


def cmd_report(cfg: RunConfig) -> None:
    out = cfg.output_dir
    files = sorted(out.glob("outcome.c*.csv")) if out.exists() else []
    if not files:
        raise StageError(EXIT_REPORT, f"no simulation outcomes under {out}")
    try:
        catalog = _load_catalog(cfg, EXIT_REPORT)
        outcomes = {}
        for path in files:
            with open(path, newline="") as fh:
                got = read_outcomes(fh, cfg.seed)
            lists_path = path.with_name(path.name.replace("outcome.", "lists.", 1))
            for key, o in got.items():
                if lists_path.exists():
                    with open(lists_path, newline="") as fh:
                        o.lists_generated = read_lists(fh)
                outcomes[key] = o
        aspect_map = {i: it.aspects for i, it in catalog.items()}
        ratings = {i: it.rating for i, it in catalog.items()}
        report = build_report(outcomes, ratings, aspect_map, cfg.per_item_gini)
        for notice in report.notices:
            log.warning("%s", notice)
        emit_report(report, out / "report", ReportFormat(cfg.report_format), cfg.run_id)
    except (OSError, ValueError, KeyError) as err:
        raise StageError(EXIT_REPORT, f"report failed: {err}") from None


STAGES = {
    "ingest": (cmd_ingest,),
    "cluster": (cmd_cluster,),
    "train": (cmd_train,),
    "plan": (cmd_plan,),
    "simulate": (cmd_simulate,),
    "report": (cmd_report,),
    "all": (cmd_ingest, cmd_cluster, cmd_train, cmd_plan, cmd_simulate, cmd_report),
}


# -- synthetic data ------------------------------------------------------------------


def cmd_synth(args) -> None:
    """Write a synthetic call log, its item catalog and a matching config."""
    spec = SyntheticWorkloadSpec(
        num_users=args.users,
        hours=args.hours,
        initial_items=args.items,
        callers_per_hour=args.callers_per_hour,
        num_clusters=args.clusters,
    )
    w = generate_synthetic(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "logs.csv", "w", newline="") as fh:
        write_events([e for s in w.sessions for e in s.events], fh)
    with open(out / "items.csv", "w", newline="") as fh:
        write_catalog(w.items.values(), fh)
    raw = {s: dict(v) for s, v in DEFAULTS.items()}
    raw["paths"].update(logs="logs.csv", items="items.csv", output_dir="out")
    raw["clustering"].update(k=str(args.clusters))
    raw["schedule"].update(
        start_hour=str(spec.slot_start_hour),
        end_hour=str(spec.slot_start_hour + spec.slot_hours_per_day),
        days=str(math.ceil(spec.hours / spec.slot_hours_per_day)),
        horizon_hours=str(spec.hours),
        list_length=str(len(spec.rank_reach_prob)),
        origin=spec.origin.isoformat(),
    )
    raw["simulation"].update(depth_mode="sample", seed=str(args.seed), topic=spec.topic)
    write_config(raw, out / "config.ini")
    log.info("wrote %d sessions and %d items to %s", len(w.sessions), len(w.items), out)


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairlist", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fairlist {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage in order")
        p.add_argument("-c", "--config", help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")
    s = sub.add_parser("synth", help="write a synthetic workload and config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--users", type=int, default=200)
    s.add_argument("--hours", type=int, default=500)
    s.add_argument("--items", type=int, default=150)
    s.add_argument("--callers-per-hour", type=float, default=20.0)
    s.add_argument("--clusters", type=int, default=2)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "synth":
        cmd_synth(args)
        return EXIT_OK
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as err:
        log.error("config: %s", err)
        return STAGE_CODES[args.command]
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        for stage in STAGES[args.command]:
            stage(cfg)
    except StageError as err:
        log.error("%s", err)
        return err.code
    return EXIT_OK


STAGE_CODES = {
    "ingest": EXIT_INGEST,
    "cluster": EXIT_CLUSTER,
    "train": EXIT_SIMULATE,
    "plan": EXIT_SIMULATE,
    "simulate": EXIT_SIMULATE,
    "report": EXIT_REPORT,
    "all": EXIT_INGEST,
}


if __name__ == "__main__":
    sys.exit(main())
