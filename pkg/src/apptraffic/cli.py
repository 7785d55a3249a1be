"""Command-line pipeline: one subcommand per stage plus ``all``.

Stages hand off through files under the run directory (``--out``)::

    ingest/       rollup.csv, stations.csv, kept_apps.csv, summary.json
    tessellate/   cells.geojson, weights.csv, summary.json
    interpolate/  zone_hourly.csv, mass_check.csv, summary.json
    features/     tws.csv, tws_degenerate.csv, rca.csv, scu.csv,
                  median_hourly.csv, cumulative.csv, summary.json
    analyze/      classes.csv, class_tws.csv, class_rca.csv, class_scu.csv,
                  correlation.csv, *.svg
    train/        model_<target>_<selector>.json, predictions_*.csv, scores_*.csv
    explain/      shap_summary_*.csv, shap_points_*.csv, shap_check_*.csv, *.svg
    report/       table2.csv, table3.csv, scores.csv, *.svg

Every file written to the run directory starts with a metadata record
(``# {...}`` for CSV, a ``metadata`` key for JSON, an XML comment for SVG)
carrying the config hash, seed and stage.

Exit codes: 0 success, 2 config error, 3 missing stage input, 4 data error.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from graphlib import TopologicalSorter
from pathlib import Path

import numpy as np
import pandas as pd

from . import analysis, features, geometry, ingest, interpolate, io, plots
from .config import PipelineConfig
from .errors import AppTrafficError, ConfigError, IngestError, ModelError, StageError
from .model import (GradientBoostedTreesRegressor, evaluate, make_estimator, summarize_attributions,
                    tree_shapley)

log = logging.getLogger("apptraffic")

# stage -> stages whose outputs it reads
STAGE_DEPS = {
    "gen": (),
    "ingest": (),
    "tessellate": ("ingest",),
    "interpolate": ("ingest", "tessellate"),
    "features": ("interpolate",),
    "analyze": ("features",),
    "train": ("features",),
    "explain": ("train",),
    "report": ("train",),
}

# default model settings for the pipeline: shallow, strongly shrunk and row
# subsampled trees, so a target without signal scores near zero
PIPELINE_GBDT = {"n_estimators": 100, "max_depth": 3, "learning_rate": 0.02,
                 "min_samples_leaf": 10, "subsample": 0.5}
WEIGHT_FORMAT = "%.17g"


def stage_order(stages=None):
    """Topological order of ``stages`` (default: all) under STAGE_DEPS."""
    order = list(TopologicalSorter(STAGE_DEPS).static_order())
    return order if stages is None else [s for s in order if s in stages]


class Run:
    """Paths and shared helpers for one invocation."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.out = cfg.out_dir
        threads = cfg.threads or os.cpu_count() or 1
        self.executor = ThreadPoolExecutor(threads) if threads > 1 else None

    def close(self):
        if self.executor is not None:
            self.executor.shutdown()

    def dir(self, stage):
        return self.out / stage

    def need(self, stage, name):
        path = self.dir(stage) / name
        if not path.exists():
            raise StageError(stage, str(path))
        return path

    def check_predecessors(self, stage):
        # before touching any input file, so a skipped stage is reported as such
        for dep in STAGE_DEPS[stage]:
            if not self.dir(dep).is_dir():
                raise StageError(dep, str(self.dir(dep)))

    def meta(self, stage):
        return self.cfg.meta(stage)

    def table(self, stage, name, df):
        io.write_table(self.dir(stage) / name, df, self.meta(stage))

    def json(self, stage, name, obj):
        io.write_json(self.dir(stage) / name, obj, self.meta(stage))


def _task_name(target, selector):
    return f"{target}_{selector}"


# -- stages ------------------------------------------------------------------------


def run_gen(run):
    from .synthgen import generate

    cfg = run.cfg
    if cfg.scenario_spec is None:
        raise ConfigError("config has no scenario section", "scenario")
    scen = generate(cfg.scenario_spec, cfg.path(cfg["scenario"]["dir"]))
    log.info("scenario written to %s", scen.out_dir)


def _window(cfg):
    w = cfg["window"]
    start = ingest.parse_timestamp(w["start"]) if w.get("start") else None
    end = ingest.parse_timestamp(w["end"]) if w.get("end") else None
    if start and end and end <= start:
        raise ConfigError("window end must be after start", "window.end")
    return start, end


def run_ingest(run):
    cfg = run.cfg
    icfg = cfg["ingest"]
    start, end = _window(cfg)
    schema = ingest.TrafficSchema(window_start=start, window_end=end,
                                  max_malformed_fraction=icfg["max_malformed_fraction"])
    catmap = ingest.read_category_map(cfg.input_path("category_map"))
    res = ingest.ingest_files(cfg.input_path("traffic"), catmap, schema=schema,
                              percentile=icfg["percentile"],
                              percentile_filter=icfg["percentile_filter"],
                              epsilon_m=icfg["epsilon_m"], row_budget=icfg["row_budget"],
                              spill_dir=None)
    if res.rollup.empty:
        raise IngestError("no traffic left after filtering")
    hours = res.rollup["hour_utc"]
    h0 = ingest.hour_index(start) if start else int(hours.min())
    h1 = -(-int((end - ingest.EPOCH).total_seconds()) // 3600) if end else int(hours.max()) + 1
    run.table("ingest", "rollup.csv", ingest.rollup_to_csv_frame(res.rollup))
    run.table("ingest", "stations.csv", pd.DataFrame(
        [(s.id, s.lat, s.lon, s.antennas) for s in res.stations],
        columns=["site_id", "lat", "lon", "antennas"]))
    run.table("ingest", "kept_apps.csv", pd.DataFrame({"app_id": res.kept_apps}))
    run.json("ingest", "summary.json", {
        "stats": res.stats,
        "window": {"start": ingest.format_hour(h0), "end": ingest.format_hour(h1)},
        "percentile": icfg["percentile"] if icfg["percentile_filter"] else None,
    })


def _load_stations(run):
    df = io.read_table(run.need("ingest", "stations.csv"))
    return [ingest.Station(int(r.site_id), float(r.lat), float(r.lon), int(r.antennas))
            for r in df.itertuples()]


def _load_geography(run, stations):
    cfg = run.cfg
    region = io.read_region(cfg.input_path("region"))
    zones = io.read_zones(cfg.input_path("zones"))
    return geometry.project_scenario(region, zones, stations)


def run_tessellate(run):
    stations = _load_stations(run)
    region, zones, sites = _load_geography(run, stations)
    tess = geometry.build_tessellation(sites, region)
    weights = geometry.areal_weights(tess, zones)
    feats = [({"site_id": c.site_id, "area_m2": round(c.area, 3)}, c.shape)
             for c in tess.cells if c.area > 0]
    io.write_geojson(run.dir("tessellate") / "cells.geojson", feats, run.meta("tessellate"), ndigits=3)
    io.write_table(run.dir("tessellate") / "weights.csv",
                   pd.DataFrame(list(weights.to_records()), columns=["site_id", "zone_id", "weight"]),
                   run.meta("tessellate"), float_format=WEIGHT_FORMAT)
    total = float(sum(c.area for c in tess.cells))
    run.json("tessellate", "summary.json", {
        "cells": len(tess.cells), "zones": len(zones), "weights": len(weights),
        "cell_area_m2": round(total, 3), "region_area_m2": round(region.area, 3),
        "relative_area_gap": float(abs(total - region.area) / region.area),
    })


def _load_weights(run):
    df = io.read_table(run.need("tessellate", "weights.csv"), dtype={"zone_id": str})
    stations = _load_stations(run)
    zones = sorted(z.id for z in io.read_zones(run.cfg.input_path("zones")))
    site_ids = [s.id for s in stations]
    spos = {s: i for i, s in enumerate(site_ids)}
    zpos = {z: i for i, z in enumerate(zones)}
    return geometry.AreaWeightMatrix(
        site_ids=site_ids, zone_ids=zones,
        rows=np.array([spos[s] for s in df["site_id"]], dtype=np.int64),
        cols=np.array([zpos[z] for z in df["zone_id"]], dtype=np.int64),
        weights=df["weight"].to_numpy(dtype=float))


def _load_rollup(run):
    df = io.read_table(run.need("ingest", "rollup.csv"), dtype={"category": str})
    return ingest.rollup_from_csv_frame(df)


def run_interpolate(run):
    rollup = _load_rollup(run)
    weights = _load_weights(run)
    zone = interpolate.interpolate_traffic(rollup, weights)
    a = interpolate.station_totals(rollup).astype(float)
    b = interpolate.zone_totals(zone).reindex(a.index).fillna(0.0)
    resid = ((a - b).abs() / a.where(a > 0, 1.0)).rename("relative_residual").reset_index()
    resid["hour_utc"] = ingest.format_hours(resid["hour_utc"])
    out = ingest.rollup_to_csv_frame(zone)
    run.table("interpolate", "zone_hourly.csv", out)
    run.table("interpolate", "mass_check.csv", resid)
    run.json("interpolate", "summary.json", {
        "rows": len(zone), "zones": int(zone["zone_id"].nunique()) if len(zone) else 0,
        "max_relative_residual": float(resid["relative_residual"].max()) if len(resid) else 0.0,
    })


def _indicators(run):
    return analysis.read_indicators(run.cfg.input_path("indicators"))


def run_features(run):
    cfg = run.cfg
    summary = io.read_json(run.need("ingest", "summary.json"))
    h0 = ingest.parse_hour(summary["window"]["start"])
    h1 = ingest.parse_hour(summary["window"]["end"])
    zone = io.read_table(run.need("interpolate", "zone_hourly.csv"),
                         dtype={"zone_id": str, "category": str})
    zone = ingest.rollup_from_csv_frame(zone)
    population = None
    if cfg["features"]["per_capita"]:
        ind = _indicators(run)
        if "total_pop" not in ind:
            raise ConfigError("per-capita RCA needs a total_pop indicator", "features.per_capita")
        population = ind["total_pop"].dropna().to_dict()
    fs = features.compute_features(zone, h0, h1, cfg["tz_offset_hours"], population=population)

    def frame(df):
        return df.reset_index()

    run.table("features", "tws.csv", frame(fs.tws))
    run.table("features", "tws_degenerate.csv", frame(fs.tws_degenerate.astype(int)))
    run.table("features", "rca.csv", frame(fs.rca.values))
    run.table("features", "scu.csv", frame(fs.scu.values))
    run.table("features", "median_hourly.csv", frame(fs.median_hourly))
    run.table("features", "cumulative.csv", frame(fs.cumulative))
    run.json("features", "summary.json", {
        "zones": len(fs.zones), "categories": fs.categories,
        "window": summary["window"], "tz_offset_hours": cfg["tz_offset_hours"],
        "degenerate_signatures": int(fs.tws_degenerate.to_numpy().sum()),
        "rca_dropped": fs.rca.dropped, "scu_degenerate": fs.scu.degenerate,
        "per_capita": bool(cfg["features"]["per_capita"]),
    })


def _read_feature(run, name):
    df = io.read_table(run.need("features", name), dtype={"zone_id": str})
    return df.set_index("zone_id")


def load_feature_frame(run, selector):
    """Feature matrix for a selector, read back from the features stage."""
    if selector == "Census":
        return None
    tws = _read_feature(run, "tws.csv") if selector in ("TWS", "All") else None
    rca_df = _read_feature(run, "rca.csv")
    scu_df = _read_feature(run, "scu.csv")
    if tws is None:
        tws = pd.DataFrame(index=rca_df.index)
    return features.assemble(selector, tws, features.RcaMatrix(rca_df, None, None, None, 0.0),
                             features.ScuMatrix(scu_df, None))


def census_frame(run, indicators, target):
    """Population columns of the indicator table, for zones with traffic features."""
    cols = [c for c in analysis.CENSUS_COLUMNS if c in indicators.columns and c != target]
    if not cols:
        raise ConfigError("indicator table has no population columns", "tasks.selectors")
    zones = _read_feature(run, "scu.csv").index
    X = indicators.reindex(zones)[cols].rename(columns=lambda c: f"CENSUS:{c}")
    X.index.name = "zone_id"
    return X.dropna()


def run_analyze(run):
    cfg = run.cfg
    acfg = cfg["analysis"]
    ind = _indicators(run)
    target = acfg["target"]
    if target not in ind:
        raise ConfigError(f"indicator {target!r} not in the indicator table", "analysis.target")
    tws = _read_feature(run, "tws.csv")
    rca_df = _read_feature(run, "rca.csv")
    scu_df = _read_feature(run, "scu.csv")
    labels = analysis.quantile_classes(ind[target].reindex(tws.index), acfg["classes"])
    meta = run.meta("analyze")
    run.table("analyze", "classes.csv",
              labels.rename("class").rename_axis("zone_id").reset_index().dropna())

    blocks = []
    for cat in acfg["categories"]:
        cols = [features.tws_column(cat, h) for h in range(1, 169)]
        if cols[0] not in tws.columns:
            log.warning("analysis category %s has no traffic; skipped", cat)
            continue
        sig = analysis.class_mean_signature(labels, tws[cols])
        sig.insert(0, "category", cat)
        blocks.append(sig)
        plots.class_signature_chart(sig, cat, run.dir("analyze") / f"class_tws_{cat}.svg", meta)
    if blocks:
        run.table("analyze", "class_tws.csv", pd.concat(blocks, ignore_index=True))
    for name, frame in (("rca", rca_df), ("scu", scu_df)):
        means = analysis.class_mean_index(labels, frame)
        run.table("analyze", f"class_{name}.csv", means)
        plots.class_index_chart(means, f"{name.upper()} by {target} class",
                                run.dir("analyze") / f"class_{name}.svg", meta)

    cols = [c for c in analysis.INDICATORS if c in ind.columns]
    masked = analysis.masked_correlation(ind[cols], acfg["correlation_threshold"])
    run.table("analyze", "correlation.csv", analysis.correlation_long(masked))
    plots.correlation_chart(masked, run.dir("analyze") / "correlation.svg", meta)


def _tasks(cfg):
    return [(t, s) for t in cfg["tasks"]["targets"] for s in cfg["tasks"]["selectors"]]


def _estimator(cfg):
    mcfg = cfg["model"]
    params = dict(mcfg["params"])
    if mcfg["kind"] == "gbdt":
        params = {**PIPELINE_GBDT, **params}
    try:
        return make_estimator(mcfg["kind"], params, seed=cfg.seed)
    except TypeError as exc:
        raise ConfigError(str(exc), "model.params") from None


def run_train(run):
    cfg = run.cfg
    ind = _indicators(run)
    est = _estimator(cfg)
    mcfg = cfg["model"]
    frames = {}
    for target, selector in _tasks(cfg):
        if target not in ind:
            raise ConfigError(f"indicator {target!r} not in the indicator table", "tasks.targets")
        if selector == "Census":
            X = census_frame(run, ind, target)
        else:
            if selector not in frames:
                frames[selector] = load_feature_frame(run, selector)
            X = frames[selector]
        y = ind[target].reindex(X.index)
        report, model, train, test = evaluate(
            est, X.to_numpy(dtype=float), y.to_numpy(dtype=float), target=target,
            selector=selector, model=mcfg["kind"], seed=cfg.seed, ratio=mcfg["split_ratio"],
            k=mcfg["folds"], executor=run.executor)
        name = _task_name(target, selector)
        doc = model.to_dict(list(X.columns))
        doc["task"] = {"target": target, "selector": selector, "seed": cfg.seed}
        run.json("train", f"model_{name}.json", doc)
        zones = X.index.to_numpy()
        pred = model.predict(X.to_numpy(dtype=float))
        split = np.full(len(zones), "", dtype=object)
        split[train] = "train"
        split[test] = "test"
        keep = split != ""
        run.table("train", f"predictions_{name}.csv", pd.DataFrame({
            "zone_id": zones[keep], "split": split[keep],
            "y_true": y.to_numpy()[keep], "y_pred": pred[keep]}))
        run.table("train", f"scores_{name}.csv", pd.DataFrame(report.score_rows()))
        log.info("%s: test R2 %.3f, CV mean %.3f", name, report.test_r2, report.cv_mean)


def run_explain(run):
    cfg = run.cfg
    top = cfg["explain"]["top"]
    meta = run.meta("explain")
    for target in cfg["tasks"]["targets"]:
        for selector in cfg["explain"]["selectors"]:
            name = _task_name(target, selector)
            doc = io.read_json(run.need("train", f"model_{name}.json"))
            if doc["kind"] != "gbdt":
                raise ModelError(f"explain needs a gbdt model, {name} is {doc['kind']}")
            model = GradientBoostedTreesRegressor.from_dict(doc)
            preds = io.read_table(run.need("train", f"predictions_{name}.csv"), dtype={"zone_id": str})
            X = load_feature_frame(run, selector).loc[preds["zone_id"]]
            Xv = X.to_numpy(dtype=float)
            phi, base = tree_shapley(model, Xv)
            ranking, points = summarize_attributions(phi, Xv, doc["feature_names"], top,
                                                     row_ids=preds["zone_id"].to_numpy())
            points = points.rename(columns={"row": "zone_id"})
            run.table("explain", f"shap_summary_{name}.csv", ranking)
            run.table("explain", f"shap_points_{name}.csv", points)
            pred = model.predict(Xv)
            run.table("explain", f"shap_check_{name}.csv", pd.DataFrame({
                "zone_id": preds["zone_id"], "split": preds["split"], "base": base,
                "shap_sum": phi.sum(axis=1), "prediction": pred,
                "abs_error": np.abs(base + phi.sum(axis=1) - pred)}))
            plots.shap_summary_chart(points, run.dir("explain") / f"shap_{name}.svg",
                                     f"{target} ({selector})", meta)


def _read_scores(run):
    blocks = [io.read_table(run.need("train", f"scores_{_task_name(t, s)}.csv"))
              for t, s in _tasks(run.cfg)]
    return pd.concat(blocks, ignore_index=True)


def run_report(run):
    scores = _read_scores(run)
    meta = run.meta("report")
    run.table("report", "scores.csv", scores)
    test = scores[scores["split"] == "test"].pivot(index="target", columns="selector", values="r2")
    targets = list(dict.fromkeys(run.cfg["tasks"]["targets"]))
    test = test.reindex(targets)
    for cols, name in ((["Cumulative", "RCA", "TWS", "All"], "table2"), (["Census", "All"], "table3")):
        present = [c for c in cols if c in test.columns]
        if not present:
            continue
        table = test[present].rename(columns=str.lower).rename_axis(None, axis=1).reset_index()
        run.table("report", f"{name}.csv", table)
        plots.score_chart(table, run.dir("report") / f"{name}.svg", "test R$^2$ by feature set", meta)


STAGES = {
    "gen": run_gen, "ingest": run_ingest, "tessellate": run_tessellate,
    "interpolate": run_interpolate, "features": run_features, "analyze": run_analyze,
    "train": run_train, "explain": run_explain, "report": run_report,
}


# -- argument handling -------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--out", help="run directory (overrides config 'out')")
    common.add_argument("--seed", type=int, help="split / model seed")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("--percentile", type=float, help="top-percentile app filter level")
    common.add_argument("--no-percentile-filter", action="store_true",
                        help="keep every app regardless of volume")
    common.add_argument("--tz-offset-hours", type=int, help="local time offset from UTC")
    common.add_argument("--per-capita", action="store_true", help="per-capita RCA")
    common.add_argument("--selector", action="append",
                        help="feature set for train (repeatable): Cumulative, RCA, TWS, All, Census")
    common.add_argument("--target", action="append", help="indicator to predict (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="apptraffic", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("gen", parents=[common], help="write a synthetic scenario")
    gen.add_argument("--preset", choices=["planted", "null", "noiseless"],
                     help="without --config: scenario preset written to --out with a config.json")
    gen.add_argument("--scenario-seed", type=int, help="without --config: scenario seed")
    for name in list(STAGES)[1:] + ["all"]:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage" if name != "all"
                       else "run every stage in dependency order")
    return parser


def _config_from_args(args):
    if not args.config:
        raise ConfigError("--config is required", "--config")
    cfg = PipelineConfig.load(args.config)
    return cfg.override(
        out=args.out, seed=args.seed, threads=args.threads, percentile=args.percentile,
        percentile_filter=False if args.no_percentile_filter else None,
        tz_offset_hours=args.tz_offset_hours, per_capita=True if args.per_capita else None,
        targets=args.target, selectors=args.selector)


def _standalone_gen(args):
    """``gen --out DIR`` without a config: scenario in DIR/data plus DIR/config.json."""
    from .synthgen import generate

    if not args.out:
        raise ConfigError("gen needs --config or --out", "--out")
    out = Path(args.out)
    scenario = {"preset": args.preset or "planted", "dir": "data"}
    if args.scenario_seed is not None:
        scenario["seed"] = args.scenario_seed
    doc = {"scenario": scenario, "out": "run", "seed": args.seed or 0}
    cfg = PipelineConfig(doc, out)
    generate(cfg.scenario_spec, out / "data")
    io.write_json(out / "config.json", doc)
    print(out / "config.json")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        if args.command == "gen" and not args.config:
            _standalone_gen(args)
            return 0
        cfg = _config_from_args(args)
        run = Run(cfg)
        if args.command == "all":
            names = stage_order()
            if cfg.scenario_spec is None:
                names.remove("gen")
        else:
            names = [args.command]
            run.check_predecessors(args.command)
        for name in names:
            t0 = datetime.now(timezone.utc)
            STAGES[name](run)
            log.info("stage %s done in %.1f s", name,
                     (datetime.now(timezone.utc) - t0).total_seconds())
        return 0
    except AppTrafficError as exc:
        print(f"apptraffic: error: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        if run is not None:
            run.close()


if __name__ == "__main__":
    sys.exit(main())
