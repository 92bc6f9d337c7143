"""Command-line entry point: train, forecast, evaluate, ablate, synth, simulate.

Every subcommand writes ``resolved_config.json`` next to its outputs. Errors
are reported as one JSON record on stderr and a nonzero exit status.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np
import yaml

from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save, load_into
from .config import ConfigError, RunConfig, dump_config, load_config, parse_config, resolve_data_path
from .data import SYNTH_DEFAULTS, NormStats, TimeSeries, WindowSpec, injected_drops, load_csv, load_dataset, synth_generate, write_csv
from .experiment import ablation_table, fit, prepare, run_ablation
from .forecasting import condition_on_history, forecast, quantile_bands
from .metrics import evaluate as score_ensemble
from .model import ModelConfig, StochDiffModel
from .monitor import ModelForecaster, OracleForecaster, alert_records, detect_drops, simulate_stream, summarize
from .plotting import forecast_svg
from .point import pointwise_forecast

log = logging.getLogger("stochdiff")


class MisalignmentError(ValueError):
    pass


# -- helpers ---------------------------------------------------------------


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, records):
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _write_rows(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _config(path, overrides: dict) -> RunConfig:
    return load_config(path, {k: v for k, v in overrides.items() if v is not None})


def _load_series(cfg: RunConfig, path=None) -> list[TimeSeries]:
    d = cfg.data
    kwargs = {"impute": d.impute, "time_column": d.time_column, "columns": d.columns}
    if path is not None:
        return load_dataset(resolve_data_path(str(path)), **kwargs)
    if d.path is not None:
        return load_dataset(resolve_data_path(d.path), **kwargs)
    if d.synth is not None:
        seed = cfg.seed if d.synth.seed is None else d.synth.seed
        return [synth_generate(d.synth.kind, d.synth.params, seed)]
    raise ConfigError("config needs data.path or data.synth")


def _single(series: list[TimeSeries], what: str) -> TimeSeries:
    if len(series) != 1:
        raise ValueError(f"{what} needs a single series, got {len(series)}")
    return series[0]


def _load_checkpoint(path, cfg: RunConfig | None = None) -> tuple[StochDiffModel, NormStats, dict]:
    tensors, meta = checkpoint_load(path)
    if "model" not in meta or "stats" not in meta:
        raise CheckpointError(f"{path}: checkpoint lacks model config or normalization stats")
    mcfg = ModelConfig.from_dict(meta["model"])
    if cfg is not None and "model" in cfg.model_fields_set:
        wanted = cfg.model_config_for(mcfg.data_dim).to_dict()
        diff = sorted(k for k, v in wanted.items() if meta["model"].get(k) != v)
        if diff:
            raise CheckpointError(f"checkpoint/config mismatch on model keys: {', '.join(diff)}")
    model = StochDiffModel(mcfg)
    load_into(model, tensors)
    model.eval()
    return model, NormStats.from_dict(meta["stats"]), meta


def _pick(flag, cfg_section, key: str, fallback):
    """Flag, then a key explicitly set in the config file, then ``fallback``."""
    if flag is not None:
        return flag
    if key in cfg_section.model_fields_set:
        return getattr(cfg_section, key)
    return fallback


common = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="YAML or JSON run config."),
    click.option("--seed", type=int, default=None, help="Overrides the config seed."),
    click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="Output directory."),
]


def with_common(fn):
    for opt in reversed(common):
        fn = opt(fn)
    return fn


# -- commands --------------------------------------------------------------


@click.group()
@click.option("--log-level", default="WARNING", show_default=True, help="Python logging level (logs go to stderr).")
@click.version_option(package_name="artifact")
def cli(log_level):
    """Probabilistic forecasting with a latent-prior diffusion decoder."""
    logging.basicConfig(level=log_level.upper(), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@with_common
@click.option("--variant", default=None, help="Overrides model.variant.")
@click.option("--epochs", type=int, default=None, help="Overrides training.epochs.")
def train(config_path, seed, out_dir, variant, epochs):
    """Fit a model on the configured data and write a checkpoint."""
    cfg = _config(config_path, {"seed": seed, "model.variant": variant, "training.epochs": epochs})
    out = _out_dir(out_dir or "runs/train")
    dump_config(cfg, out / "resolved_config.json")
    series = _load_series(cfg)
    data = prepare(series, cfg.data.window_spec(), cfg.data.split_fraction, cfg.seed, cfg.data.normalize)
    mcfg = cfg.model_config_for(series[0].dim)
    records, timing = [], []

    def on_epoch(rec):
        records.append(rec.as_record())
        timing.append({"epoch": rec.epoch, "seconds": rec.seconds})
        log.info("epoch %d loss %.6g lr %.3g", rec.epoch, rec.total, rec.lr)

    model, report = fit(data, mcfg, cfg.train_config_for(mcfg), cfg.training.max_windows, on_epoch)
    meta = {
        "model": mcfg.to_dict(),
        "stats": data.stats.to_dict(),
        "window": cfg.data.window,
        "horizon": cfg.data.horizon,
        "columns": list(series[0].columns),
        "seed": cfg.seed,
    }
    checkpoint_save(model, out / "checkpoint.ckpt", meta)
    _write_jsonl(out / "train_report.jsonl", records)
    _write_jsonl(out / "timing.jsonl", timing)
    summary = {
        "epochs": len(records),
        "initial_loss": records[0]["total"] if records else None,
        "final_loss": records[-1]["total"] if records else None,
        "checkpoint": str(out / "checkpoint.ckpt"),
    }
    click.echo(json.dumps(summary, sort_keys=True))


@cli.command("forecast")
@with_common
@click.option("--checkpoint", type=click.Path(dir_okay=False), required=True)
@click.option("--series", "series_path", type=click.Path(), default=None, help="CSV to condition on; defaults to the config data.")
@click.option("--t0", type=int, default=None, help="Rows observed before forecasting; defaults to the series length.")
@click.option("--window", type=int, default=None)
@click.option("--horizon", type=int, default=None)
@click.option("--samples", type=int, default=None, help="Overrides forecast.n_samples.")
@click.option("--plot/--no-plot", default=None, help="Also write forecast.svg.")
def forecast_cmd(config_path, seed, out_dir, checkpoint, series_path, t0, window, horizon, samples, plot):
    """Sample an ensemble after the first t0 rows; write ensemble, bands and point forecast."""
    cfg = _config(config_path, {"seed": seed, "forecast.n_samples": samples, "forecast.plot": plot})
    model, stats, meta = _load_checkpoint(checkpoint, cfg)
    W = _pick(window, cfg.data, "window", meta.get("window", cfg.data.window))
    H = _pick(horizon, cfg.data, "horizon", meta.get("horizon", cfg.data.horizon))
    cfg = _config(config_path, {"seed": seed, "forecast.n_samples": samples, "forecast.plot": plot, "data.window": W, "data.horizon": H})
    out = _out_dir(out_dir or "runs/forecast")
    dump_config(cfg, out / "resolved_config.json")
    s = _single(_load_series(cfg, series_path), "forecast")
    if s.dim != model.cfg.data_dim:
        raise CheckpointError(f"series has {s.dim} columns but the checkpoint expects {model.cfg.data_dim}")
    t0 = s.length if t0 is None else t0
    if not W <= t0 <= s.length:
        raise ValueError(f"t0={t0} must lie in [{W}, {s.length}] for window {W}")
    history = s.values[t0 - W : t0]
    S = cfg.forecast.n_samples
    ctx = condition_on_history(stats.apply(history), model, cfg.seed, window_ids=[t0])
    ens = stats.invert(forecast(ctx, H, S, model, cfg.seed, window_id=t0).samples)
    levels = cfg.forecast.levels
    bands = quantile_bands(ens, levels)
    point = pointwise_forecast(ens, seed=cfg.seed)
    d = s.dim
    _write_rows(
        out / "ensemble.csv",
        ["sample_id", "step", "dim", "value"],
        ([i, h, j, _num(ens[i, h, j])] for i in range(S) for h in range(H) for j in range(d)),
    )
    _write_rows(
        out / "bands.csv",
        ["step", "dim", "level", "value", "point"],
        ([h, j, _num(lv), _num(bands[k, h, j]), _num(point[h, j])] for h in range(H) for j in range(d) for k, lv in enumerate(levels)),
    )
    truth = s.values[t0 : t0 + H] if t0 + H <= s.length else None
    if truth is not None:
        write_csv(TimeSeries(truth, list(s.columns)), out / "truth.csv")
    _write_json(
        out / "forecast.json",
        {"t0": t0, "window": W, "horizon": H, "n_samples": S, "seed": cfg.seed, "columns": list(s.columns), "levels": levels, "variant": model.cfg.variant},
    )
    if cfg.forecast.plot:
        lo, hi = np.quantile(ens, [0.05, 0.95], axis=0)
        (out / "forecast.svg").write_text(forecast_svg(history, lo, hi, point, truth, list(s.columns)), encoding="utf-8")
    click.echo(json.dumps({"out_dir": str(out), "horizon": H, "n_samples": S}, sort_keys=True))


def _read_forecast(fdir: Path):
    meta = json.loads((fdir / "forecast.json").read_text(encoding="utf-8"))
    S, H, d = meta["n_samples"], meta["horizon"], len(meta["columns"])
    ens = np.full((S, H, d), np.nan)
    with (fdir / "ensemble.csv").open(encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ens[int(row["sample_id"]), int(row["step"]), int(row["dim"])] = float(row["value"])
    point = np.full((H, d), np.nan)
    with (fdir / "bands.csv").open(encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            point[int(row["step"]), int(row["dim"])] = float(row["point"])
    if np.isnan(ens).any() or np.isnan(point).any():
        raise MisalignmentError(f"{fdir}: ensemble or bands file is incomplete")
    return meta, ens, point


@cli.command()
@with_common
@click.option("--forecast-dir", type=click.Path(file_okay=False, exists=True), required=True)
@click.option("--truth", "truth_path", type=click.Path(dir_okay=False), required=True, help="CSV with one row per forecast step.")
def evaluate(config_path, seed, out_dir, forecast_dir, truth_path):
    """Score a written forecast against the true continuation."""
    cfg = _config(config_path, {"seed": seed})
    fdir = Path(forecast_dir)
    out = _out_dir(out_dir or fdir)
    meta, ens, point = _read_forecast(fdir)
    truth = load_csv(resolve_data_path(truth_path), impute=cfg.data.impute).values
    if truth.shape != ens.shape[1:]:
        raise MisalignmentError(f"truth has shape {truth.shape} but the forecast covers {ens.shape[1:]} (steps, dims)")
    rep = score_ensemble(ens, truth, point=point, seed=meta.get("seed"))
    dump_config(cfg, out / "resolved_config.json")
    _write_json(out / "metrics.json", rep.as_record())
    click.echo(json.dumps(rep.as_record(), sort_keys=True))


@cli.command()
@with_common
@click.option("--seeds", default=None, help="Comma-separated seeds; overrides ablation.seeds.")
@click.option("--variants", default=None, help="Comma-separated variants; overrides ablation.variants.")
def ablate(config_path, seed, out_dir, seeds, variants):
    """Train and score each variant for each seed on the same data."""
    ov = {"seed": seed}
    if seeds:
        ov["ablation.seeds"] = [int(x) for x in seeds.split(",")]
    if variants:
        ov["ablation.variants"] = [v.strip() for v in variants.split(",")]
    cfg = _config(config_path, ov)
    out = _out_dir(out_dir or "runs/ablate")
    dump_config(cfg, out / "resolved_config.json")
    series = _load_series(cfg)
    data = prepare(series, cfg.data.window_spec(), cfg.data.split_fraction, cfg.seed, cfg.data.normalize)
    mcfg = cfg.model_config_for(series[0].dim)
    rows = run_ablation(
        lambda _seed: data,
        mcfg,
        cfg.train_config_for(mcfg),
        cfg.ablation.variants,
        cfg.ablation.seeds,
        n_samples=cfg.forecast.n_samples,
        max_windows=cfg.training.max_windows,
        eval_stride=cfg.data.eval_stride,
    )
    table = ablation_table(rows, cfg.ablation.variants)
    _write_json(out / "ablation.json", {"rows": [asdict(r) for r in rows], "table": table, "seeds": cfg.ablation.seeds})
    _write_rows(
        out / "ablation.csv",
        ["variant", "nrmse_mean", "nrmse_std", "crps_sum_mean", "crps_sum_std", "n_seeds"],
        ([t["variant"], _num(t["nrmse_mean"]), _num(t["nrmse_std"]), _num(t["crps_sum_mean"]), _num(t["crps_sum_std"]), t["n_seeds"]] for t in table),
    )
    click.echo(json.dumps(table, sort_keys=True))


@cli.command()
@with_common
@click.option("--kind", type=click.Choice(sorted(SYNTH_DEFAULTS)), default=None)
@click.option("--param", "params", multiple=True, help="KEY=VALUE generator parameter (value parsed as YAML).")
def synth(config_path, seed, out_dir, kind, params):
    """Generate a synthetic series and write it as CSV."""
    cfg = _config(config_path, {"seed": seed})
    sec = cfg.data.synth.model_dump() if cfg.data.synth else {"kind": "regime_ar", "params": {}, "seed": None}
    if kind is not None and kind != sec["kind"]:
        sec = {"kind": kind, "params": {}, "seed": sec["seed"]}
    for item in params:
        key, sep, value = item.partition("=")
        if not sep:
            raise click.BadParameter(f"expected KEY=VALUE, got {item!r}", param_hint="--param")
        sec["params"][key.strip()] = yaml.safe_load(value)
    if seed is not None:
        sec["seed"] = seed
    raw = cfg.model_dump(mode="json")
    raw["data"]["synth"] = sec
    cfg = parse_config(raw)
    out = _out_dir(out_dir or "runs/synth")
    dump_config(cfg, out / "resolved_config.json")
    gen_seed = cfg.seed if cfg.data.synth.seed is None else cfg.data.synth.seed
    s = synth_generate(cfg.data.synth.kind, cfg.data.synth.params, gen_seed)
    write_csv(s, out / "series.csv")
    info = {"kind": cfg.data.synth.kind, "params": {**SYNTH_DEFAULTS[cfg.data.synth.kind], **cfg.data.synth.params}, "seed": gen_seed, "length": s.length, "dim": s.dim}
    if cfg.data.synth.kind == "drop_signal":
        info["drop_times"] = injected_drops(cfg.data.synth.params, gen_seed)
    _write_json(out / "synth.json", info)
    click.echo(json.dumps({"out_dir": str(out), "length": s.length, "dim": s.dim}, sort_keys=True))


@cli.command()
@with_common
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None)
@click.option("--series", "series_path", type=click.Path(), default=None, help="CSV to replay; defaults to the config data.")
@click.option("--threshold", type=float, default=None, help="Relative drop that triggers an alert (default 0.30).")
@click.option("--oracle", is_flag=True, help="Forecast with the true future instead of a model.")
@click.option("--point-mode", type=click.Choice(["gmm", "median"]), default=None)
@click.option("--window", type=int, default=None)
@click.option("--horizon", type=int, default=None)
@click.option("--samples", type=int, default=None, help="Overrides forecast.n_samples.")
@click.option("--stride", type=int, default=None, help="Overrides monitor.stride.")
def simulate(config_path, seed, out_dir, checkpoint, series_path, threshold, oracle, point_mode, window, horizon, samples, stride):
    """Replay a series through the drop monitor and report alerts and lead times."""
    base = {"seed": seed, "monitor.threshold": threshold, "monitor.point_mode": point_mode, "monitor.stride": stride, "forecast.n_samples": samples}
    cfg = _config(config_path, base)
    meta: dict = {}
    model = stats = None
    if not oracle:
        if checkpoint is None:
            raise click.UsageError("simulate needs --checkpoint unless --oracle is given")
        model, stats, meta = _load_checkpoint(checkpoint, cfg)
    W = _pick(window, cfg.data, "window", meta.get("window", cfg.data.window))
    H = _pick(horizon, cfg.data, "horizon", meta.get("horizon", cfg.data.horizon))
    cfg = _config(config_path, {**base, "data.window": W, "data.horizon": H})
    out = _out_dir(out_dir or "runs/simulate")
    dump_config(cfg, out / "resolved_config.json")
    s = _single(_load_series(cfg, series_path), "simulate")
    mon = cfg.monitor
    if mon.channel >= s.dim:
        raise ValueError(f"monitor.channel {mon.channel} out of range for {s.dim} columns")
    if model is not None and s.dim != model.cfg.data_dim:
        raise CheckpointError(f"series has {s.dim} columns but the checkpoint expects {model.cfg.data_dim}")
    fc = OracleForecaster(s.values) if oracle else ModelForecaster(model, stats, cfg.forecast.n_samples, cfg.seed)
    spec = WindowSpec(W, H, mon.stride)
    res = simulate_stream(fc, s, spec, mon.threshold, mon.point_mode, mon.channel)
    amp = s.values[:, mon.channel]
    events = summarize(res.alerts, amp, mon.threshold, W)
    _write_jsonl(out / "alerts.jsonl", alert_records(res.alerts))
    _write_rows(
        out / "trace.csv",
        ["issue_step", "target_step", "point", "lower", "upper"],
        ([tr.issue_step, tr.observed_stop + j, _num(p), _num(lo), _num(hi)] for tr in res.trace for j, (p, lo, hi) in enumerate(zip(tr.point, tr.lower, tr.upper))),
    )
    truth_flags = [t for t, _ in detect_drops(amp, mon.threshold, W) if t >= W]
    leads = [e.lead_time for e in events if e.detected]
    summary = {
        "mode": "oracle" if oracle else "model",
        "threshold": mon.threshold,
        "point_mode": mon.point_mode,
        "window": W,
        "horizon": H,
        "n_positions": len(res.trace),
        "n_alerts": len(res.alerts),
        "alerted_steps": [a.target_step for a in res.alerts],
        "ground_truth_steps": truth_flags,
        "events": [asdict(e) for e in events],
        "n_events": len(events),
        "n_detected": sum(e.detected for e in events),
        "n_positive_lead": sum(1 for v in leads if v > 0),
        "max_lead_time": max(leads) if leads else None,
        "causality_ok": all(furthest <= issue for issue, furthest in res.reads.items()),
    }
    _write_json(out / "summary.json", summary)
    click.echo(json.dumps({k: summary[k] for k in ("n_alerts", "n_events", "n_detected", "max_lead_time")}, sort_keys=True))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="stochdiff", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        _emit_error("Aborted", "aborted")
        return 1
    except click.ClickException as exc:
        _emit_error(type(exc).__name__, exc.format_message())
        return exc.exit_code or 1
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        log.debug("command failed", exc_info=True)
        _emit_error(type(exc).__name__, str(exc))
        return 1
    return 0


def _emit_error(kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n")


if __name__ == "__main__":
    sys.exit(main())
