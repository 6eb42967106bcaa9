"""Command-line interface: nowcast backtests, factor extraction, simulation.

One YAML config file per run; every command is deterministic given the config
and seed. Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
failure under --strict.
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd
import yaml

from .basis import LagLeadSpec, LegendreBasis, aggregate
from .errors import ConfigError, DataError, MfnError
from .factors import CompletionConfig, extract_panel_factors
from .harness import (
    HarnessConfig,
    Horizon,
    Subsample,
    default_horizons,
    run_expanding,
    subsample_report,
)
from .models import CvPlan, ModelConfig, ModelKind, PanelRole, build_panels
from .panel import (
    FREQUENCY_M,
    VintageStore,
    load_metadata_csv,
    load_panel_csv,
    load_target_csv,
)
from .synthetic import DgpConfig, RegimeShift, SyntheticPanelSpec, synthetic_dgp

log = logging.getLogger("mfnowcast")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p) as fh:
            cfg = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {p}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return cfg


def _build_store(cfg: dict, base: Path) -> VintageStore:
    data = cfg.get("data")
    if not isinstance(data, dict):
        raise ConfigError("config needs a 'data' section with CSV paths")
    paths = {}
    for key in ("panel_csv", "metadata_csv", "target_csv"):
        if key not in data:
            raise ConfigError(f"data section missing '{key}'")
        p = Path(data[key])
        if not p.is_absolute():
            p = base / p
        if not p.exists():
            raise DataError(f"data file not found: {p}")
        paths[key] = p
    return VintageStore(
        load_panel_csv(paths["panel_csv"]),
        load_target_csv(paths["target_csv"]),
        load_metadata_csv(paths["metadata_csv"]),
        release_lag=int(data.get("release_lag", 1)),
    )


def _parse_model(block: dict, panel_freq: dict) -> ModelConfig:
    if "kind" not in block:
        raise ConfigError("each model block needs a 'kind'")
    try:
        kind = ModelKind(block["kind"])
    except ValueError as exc:
        raise ConfigError(f"unknown model kind '{block['kind']}'") from exc
    lag_specs = {}
    panel_roles = {}
    for panel_id, pblock in (block.get("panels") or {}).items():
        pblock = pblock or {}
        if panel_id.startswith("external:"):
            sid = panel_id.split(":", 1)[1]
            m = FREQUENCY_M[panel_freq.get(sid, "monthly")]
        else:
            if panel_id not in panel_freq:
                raise ConfigError(f"model references unknown panel '{panel_id}'")
            m = FREQUENCY_M[panel_freq[panel_id]]
        lag_specs[panel_id] = LagLeadSpec(m=m, q=int(pblock.get("q", 1)),
                                          leads=int(pblock.get("leads", 0)))
        panel_roles[panel_id] = PanelRole(
            panel_id=panel_id,
            include_sparse=bool(pblock.get("include_sparse", True)),
            include_dense=bool(pblock.get("include_dense", False)),
            include_dense_factors=bool(pblock.get("include_dense_factors", False)),
            rank=pblock.get("rank"),
            rank_method=pblock.get("rank_method", "growth_ratio"),
            kmax=pblock.get("kmax"),
        )
    return ModelConfig(
        kind=kind,
        name=block.get("name", ""),
        ar_lags=int(block.get("ar_lags", 4)),
        degree=int(block.get("degree", 3)),
        lag_specs=lag_specs,
        panel_roles=panel_roles,
        alpha=float(block.get("alpha", 0.5)),
        mu_grid=block.get("mu_grid"),
        mu_grid_size=int(block.get("mu_grid_size", 50)),
        mu_grid_min_ratio=float(block.get("mu_grid_min_ratio", 1e-4)),
        mu2_grid=block.get("mu2_grid"),
        mu2_grid_size=int(block.get("mu2_grid_size", 8)),
        cv=CvPlan(folds=int(block.get("cv_folds", 5))),
        external_factors=tuple(block.get("external_factors", ())),
    )


def _parse_harness(cfg: dict) -> HarnessConfig:
    block = cfg.get("harness")
    if not isinstance(block, dict):
        raise ConfigError("config needs a 'harness' section")
    for key in ("first_origin", "last_origin"):
        if key not in block:
            raise ConfigError(f"harness section missing '{key}'")
    horizons = default_horizons()
    if "horizons" in block:
        horizons = [Horizon(h["label"], int(h["months_into_quarter"]),
                            dict(h.get("leads", {})))
                    for h in block["horizons"]]
    subsamples = None
    if "subsamples" in block:
        subsamples = [Subsample(s["label"],
                                pd.Period(s["start"], freq="Q") if s.get("start") else None,
                                pd.Period(s["end"], freq="Q") if s.get("end") else None)
                      for s in block["subsamples"]]
    kwargs = dict(
        first_origin=block["first_origin"],
        last_origin=block["last_origin"],
        in_sample_end=block.get("in_sample_end"),
        horizons=horizons,
        benchmark=block.get("benchmark", "AR"),
        retune_every=int(block.get("retune_every", 1)),
        balance=block.get("balance", "complete"),
    )
    if subsamples is not None:
        kwargs["subsamples"] = subsamples
    return HarnessConfig(**kwargs)


def _out_path(out_dir: Path, name: str, force: bool) -> Path:
    path = out_dir / name
    if path.exists() and not force:
        raise ConfigError(f"output file exists (use --force to overwrite): {path}")
    return path


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(), help="YAML run configuration")(fn)
    fn = click.option("--out", "out_dir", default=None, type=click.Path(),
                      help="output directory (overrides config)")(fn)
    fn = click.option("--seed", default=None, type=int, help="override config seed")(fn)
    fn = click.option("--strict", is_flag=True,
                      help="treat solver non-convergence as a failure")(fn)
    fn = click.option("--jobs", default=1, type=int, help="parallelism cap")(fn)
    fn = click.option("--force", is_flag=True, help="overwrite existing output files")(fn)
    fn = click.option("--log-level", default="INFO", help="logging level")(fn)
    return fn


def _setup(config_path, out_dir, log_level):
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _load_config(config_path)
    base = Path(config_path).resolve().parent
    out = Path(out_dir) if out_dir else base / cfg.get("output", "out")
    out.mkdir(parents=True, exist_ok=True)
    return cfg, base, out


@click.group()
def main():
    """Mixed-frequency penalized-regression nowcasting toolkit."""


@main.command()
@_common_options
def nowcast(config_path, out_dir, seed, strict, jobs, force, log_level):
    """Run the expanding-window nowcast backtest and emit reports."""
    try:
        cfg, base, out = _setup(config_path, out_dir, log_level)
        harness_cfg = _parse_harness(cfg)
        store = _build_store(cfg, base)
        panel_freq = {m.panel_id: m.frequency for m in store.metadata.values()}
        panel_freq.update({m.series_id: m.frequency for m in store.metadata.values()})
        model_blocks = cfg.get("models")
        if not model_blocks:
            raise ConfigError("config needs a non-empty 'models' list")
        models = [_parse_model(b, panel_freq) for b in model_blocks]
        report_path = _out_path(out, "report.csv", force)
        json_path = _out_path(out, "report.json", force)
        cumsum_path = _out_path(out, "cumsum.csv", force)
        records_path = _out_path(out, "records.csv", force)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    try:
        if jobs > 1:
            log.info("jobs=%d requested; execution is single-process", jobs)
        records = run_expanding(harness_cfg, models, store)
        report = subsample_report(records, harness_cfg)
        report.to_long_csv(report_path)
        report.to_json(json_path)
        report.cumsum_to_csv(cumsum_path)
        report.records.to_csv(records_path, index=False, float_format="%.12g")
        failures = [r for r in records if r.failed]
        for r in failures:
            log.warning("failed %s %s %s: %s", r.model, r.horizon, r.origin, r.failed)
        if strict and any("Convergence" in r.failed or "converge" in r.failed
                          for r in failures):
            click.echo("strict mode: solver non-convergence", err=True)
            sys.exit(EXIT_NUMERICAL)
        click.echo(f"wrote {report_path}")
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except MfnError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DATA)


@main.command()
@_common_options
@click.option("--rank", default=None, type=int, help="fixed factor rank override")
def factors(config_path, out_dir, seed, strict, jobs, force, log_level, rank):
    """Complete, standardize, and decompose each panel; emit factor CSVs."""
    try:
        cfg, base, out = _setup(config_path, out_dir, log_level)
        store = _build_store(cfg, base)
        fblock = cfg.get("factors", {}) or {}
        degree = int(fblock.get("degree", 3))
        q = int(fblock.get("q", 1))
        method = fblock.get("rank_method", "growth_ratio")
        scores_path = _out_path(out, "factor_scores.csv", force)
        eig_path = _out_path(out, "eigenvalues.csv", force)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    try:
        as_of = store.panel_records["date"].max()
        target, series_list = store.vintage_slice(as_of)
        panel_of = {m.series_id: m.panel_id for m in store.metadata.values()}
        calendar = pd.period_range(
            pd.Period(min(s.observations.index.min() for s in series_list), freq="Q"),
            pd.Period(as_of, freq="Q"), freq="Q")
        panels = build_panels(series_list, panel_of, calendar)
        basis = LegendreBasis(degree)
        score_rows, eig_rows = [], []
        for panel_id, panel in sorted(panels.items()):
            spec = LagLeadSpec(m=panel.frequency.m, q=q, leads=0)
            tensor = aggregate(panel, spec, basis)
            pf = extract_panel_factors(tensor, rank=rank, method=method, panel_id=panel_id)
            r_n, c_n, t_n = pf.tensor_values.shape
            for r in range(r_n):
                for d in range(c_n):
                    for i, t in enumerate(pf.period_index):
                        score_rows.append({
                            "panel_id": panel_id, "factor_index": r, "d": d,
                            "period": str(calendar[t]),
                            "value": pf.tensor_values[r, d, i]})
            for i, mu in enumerate(pf.fit.eigenvalues):
                eig_rows.append({"panel_id": panel_id, "index": i, "eigenvalue": mu})
            log.info("panel %s: selected rank %d (%s)", panel_id,
                     pf.selection.selected, pf.selection.method)
        pd.DataFrame(score_rows).to_csv(scores_path, index=False, float_format="%.12g")
        pd.DataFrame(eig_rows).to_csv(eig_path, index=False, float_format="%.12g")
        click.echo(f"wrote {scores_path}")
    except MfnError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)


def _parse_dgp(cfg: dict, seed_override) -> DgpConfig:
    block = cfg.get("simulate")
    if not isinstance(block, dict):
        raise ConfigError("config needs a 'simulate' section")
    panels = [SyntheticPanelSpec(
        panel_id=p["panel_id"], n_series=int(p["n_series"]), m=int(p.get("m", 3)),
        n_factors=int(p.get("n_factors", 1)), idio_sd=float(p.get("idio_sd", 1.0)),
        factor_ar=float(p.get("factor_ar", 0.7)),
        missing_frac=float(p.get("missing_frac", 0.0)))
        for p in block.get("panels", [])] or None
    shift = None
    if block.get("shift"):
        shift = RegimeShift(start_quarter=int(block["shift"]["start_quarter"]),
                            amplify=float(block["shift"].get("amplify", 5.0)))
    kwargs = dict(
        seed=int(seed_override if seed_override is not None else cfg.get("seed", 0)),
        n_quarters=int(block.get("n_quarters", 160)),
        sparsity=int(block.get("sparsity", 5)),
        sparse_scale=float(block.get("sparse_scale", 1.0)),
        dense_scale=float(block.get("dense_scale", 0.5)),
        noise_sd=float(block.get("noise_sd", 0.5)),
        shift=shift,
        start_period=str(block.get("start_period", "1980Q1")),
    )
    if panels is not None:
        kwargs["panels"] = panels
    return DgpConfig(**kwargs)


@main.command()
@_common_options
def simulate(config_path, out_dir, seed, strict, jobs, force, log_level):
    """Generate synthetic data in the ingestion schema plus a ground-truth file."""
    try:
        cfg, base, out = _setup(config_path, out_dir, log_level)
        dgp = _parse_dgp(cfg, seed)
        panel_path = _out_path(out, "panel.csv", force)
        meta_path = _out_path(out, "metadata.csv", force)
        target_path = _out_path(out, "target.csv", force)
        truth_path = _out_path(out, "truth.json", force)
    except (ConfigError, MfnError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    store, truth = synthetic_dgp(dgp)
    store.panel_records.to_csv(panel_path, index=False, float_format="%.12g",
                               columns=["series_id", "date", "value"])
    pd.DataFrame([{"series_id": m.series_id, "panel_id": m.panel_id,
                   "frequency": m.frequency, "tcode": m.tcode}
                  for m in store.metadata.values()]).to_csv(meta_path, index=False)
    store.target_records.to_csv(target_path, index=False, float_format="%.12g",
                                columns=["date", "value"])
    import json
    with open(truth_path, "w") as fh:
        json.dump({
            "seed": dgp.seed,
            "active_series": truth.active_series,
            "sparse_coefs": truth.sparse_coefs,
            "dense_scale": dgp.dense_scale,
            "shift": ({"start_quarter": dgp.shift.start_quarter,
                       "amplify": dgp.shift.amplify} if dgp.shift else None),
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"wrote {panel_path}")


if __name__ == "__main__":
    main()
