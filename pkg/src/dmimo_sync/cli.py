"""Command-line driver: configuration, sweep execution, CSV/JSON/SVG output.

Config files are flat ``key = value`` text with dotted keys; ``#`` starts a
comment and list values are comma separated. A JSON manifest written by a
previous run is also accepted as ``--config`` and reproduces that run.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .montecarlo import ScenarioConfig, SweepResult, SweepRow, run_sweep
from .system_model import GainModel, NoiseModel

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "d_m",
    "rho_r_mw",
    "trials_kept",
    "trials_flagged",
    "rmse_rad",
    "ci95_low",
    "ci95_high",
    "mean_cjt_gain",
)

DEFAULT_DISTANCES_M = [1.0] + [float(d) for d in range(5, 101, 5)]
DEFAULT_POWERS_MW = [1.0, 2.0, 5.0, 10.0]


class ConfigError(ValueError):
    pass


# key -> (parser, default). Powers in mW, distances in m.
def _pos_float(v: str) -> float:
    x = float(v)
    if not x > 0:
        raise ValueError("must be positive")
    return x


def _pos_int(v: str) -> int:
    x = int(v)
    if x < 1:
        raise ValueError("must be >= 1")
    return x


def _nonneg_int(v: str) -> int:
    x = int(v)
    if x < 0:
        raise ValueError("must be >= 0")
    return x


def _float_list(v: str) -> list[float]:
    vals = [_pos_float(p) for p in str(v).split(",") if p.strip()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _choice(*opts):
    def parse(v: str) -> str:
        if v not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return v

    return parse


def _seed(v: str) -> int:
    x = int(v)
    if not 0 <= x < 2**64:
        raise ValueError("must be a 64-bit unsigned integer")
    return x


def _gain_model(v: str) -> str:
    return str(GainModel.parse(v))


def _float(v: str) -> float:
    x = float(v)
    if not math.isfinite(x):
        raise ValueError("must be finite")
    return x


SCHEMA: dict[str, tuple[Any, Any]] = {
    "m_a": (_pos_int, 16),
    "m_b": (_pos_int, 16),
    "ref_index_a": (_nonneg_int, 0),
    "ref_index_b": (_nonneg_int, 0),
    "rho_a_mw": (_pos_float, 100.0),
    "rho_b_mw": (_pos_float, 100.0),
    "rho_r_mw": (_float_list, DEFAULT_POWERS_MW),
    "distance_m": (_float_list, DEFAULT_DISTANCES_M),
    "d_b_m": (_pos_float, None),
    "pilot_length": (_pos_int, 10),
    "gain_model": (_gain_model, "unit"),
    "beamformer": (_choice("genie", "pilot"), "genie"),
    "pilot.symbols": (_pos_int, 10),
    "pilot.power_mw": (_pos_float, None),
    "noise.temperature_k": (_pos_float, 290.0),
    "noise.bandwidth_hz": (_pos_float, 20e6),
    "noise.noise_figure_db": (_float, 9.0),
    "noise.enabled": (_bool, True),
    "c_mode": (_choice("analytic", "empirical"), "analytic"),
    "repeater.gain_mode": (_choice("literal", "fixed", "agc"), "fixed"),
    "repeater.ref_margin_db": (_float, 10.0),
    "trials": (_pos_int, 10_000),
    "seed": (_seed, None),
    "cjt": (_bool, False),
    "cjt.equal_amplitude": (_bool, True),
    "ue.distance_m": (_pos_float, 50.0),
}


@dataclass
class RunManifest:
    config: dict
    distances_m: list
    powers_mw: list
    outputs: dict = field(default_factory=dict)
    tool_version: str = __version__
    started: Optional[str] = None
    finished: Optional[str] = None
    seed: Optional[int] = None
    failed_cells: list = field(default_factory=list)


def _coerce(key: str, raw: Any) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    parser = SCHEMA[key][0]
    if raw is None:
        return None
    if isinstance(raw, list):
        raw = ",".join(repr(float(v)) for v in raw)
    try:
        return parser(str(raw) if not isinstance(raw, bool) else ("true" if raw else "false"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid value for {key!r}: {raw!r} ({exc})") from None


def read_config_file(path: str | os.PathLike) -> dict[str, Any]:
    """Raw key/value pairs from a flat config file or a JSON run manifest."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix == ".json":
        data = json.loads(text)
        return dict(data.get("manifest", data)["config"])
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def parse_config(
    file_values: Optional[dict[str, Any]] = None,
    overrides: Optional[dict[str, Any]] = None,
    env: Optional[dict[str, str]] = None,
) -> tuple[ScenarioConfig, list[float], list[float], dict[str, Any]]:
    """Resolve a scenario from file values, flag overrides and the environment.

    Precedence is flags, then file, then ``DMIMO_SEED`` (seed only), then
    defaults. Returns the base config, the distance grid (m), the power grid
    (mW) and the fully materialised flat key map.
    """
    env = os.environ if env is None else env
    resolved = {k: default for k, (_, default) in SCHEMA.items()}
    for source in (file_values or {}, overrides or {}):
        for k, v in source.items():
            if v is not None:
                resolved[k] = _coerce(k, v)
    if resolved["seed"] is None:
        resolved["seed"] = _coerce("seed", env.get("DMIMO_SEED", 0))

    try:
        cfg = ScenarioConfig(
            M_A=resolved["m_a"],
            M_B=resolved["m_b"],
            ref_index_A=resolved["ref_index_a"],
            ref_index_B=resolved["ref_index_b"],
            rho_A=resolved["rho_a_mw"] * 1e-3,
            rho_B=resolved["rho_b_mw"] * 1e-3,
            rho_R=resolved["rho_r_mw"][0] * 1e-3,
            d=resolved["distance_m"][0],
            d_B=resolved["d_b_m"],
            L=resolved["pilot_length"],
            gain_model=GainModel.parse(resolved["gain_model"]),
            beamformer=resolved["beamformer"],
            pilot_symbols=resolved["pilot.symbols"],
            pilot_power=None if resolved["pilot.power_mw"] is None else resolved["pilot.power_mw"] * 1e-3,
            noise=NoiseModel(
                resolved["noise.temperature_k"], resolved["noise.bandwidth_hz"], resolved["noise.noise_figure_db"]
            ),
            inject_noise=resolved["noise.enabled"],
            C_mode=resolved["c_mode"],
            repeater_gain=resolved["repeater.gain_mode"],
            repeater_ref_margin_db=resolved["repeater.ref_margin_db"],
            trials=resolved["trials"],
            seed=resolved["seed"],
            cjt=resolved["cjt"],
            ue_distance=resolved["ue.distance_m"],
            cjt_equal_amplitude=resolved["cjt.equal_amplitude"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not cfg.ref_index_A < cfg.M_A:
        raise ConfigError("ref_index_a must be smaller than m_a")
    if not cfg.ref_index_B < cfg.M_B:
        raise ConfigError("ref_index_b must be smaller than m_b")
    return cfg, list(resolved["distance_m"]), list(resolved["rho_r_mw"]), resolved


# ---------------------------------------------------------------------------
# output


def _fmt(v: Optional[float]) -> str:
    if v is None:
        return "nan"
    return f"{v:.17e}"


def result_table(result: SweepResult) -> list[dict[str, Any]]:
    """Rows keyed by the CSV column names (powers in mW)."""
    return [
        {
            "d_m": r.d,
            "rho_r_mw": r.rho_R * 1e3,
            "trials_kept": r.trials_kept,
            "trials_flagged": r.trials_flagged,
            "rmse_rad": r.rmse,
            "ci95_low": r.ci95_low,
            "ci95_high": r.ci95_high,
            "mean_cjt_gain": r.mean_cjt_gain,
        }
        for r in result.rows
    ]


def emit_results(
    result: SweepResult,
    fmt: str,
    path: str | os.PathLike,
    manifest: Optional[RunManifest] = None,
) -> Path:
    path = Path(path)
    try:
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_COLUMNS)
                for row in result_table(result):
                    w.writerow(
                        [str(row[c]) if c in ("trials_kept", "trials_flagged") else _fmt(row[c]) for c in CSV_COLUMNS]
                    )
        elif fmt == "json":
            doc = {"rows": result_table(result), "manifest": asdict(manifest) if manifest else None}
            path.write_text(json.dumps(doc, indent=1, allow_nan=True) + "\n")
        else:
            raise ValueError(f"unknown output format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def load_results_json(path: str | os.PathLike) -> tuple[list[dict[str, Any]], Optional[dict]]:
    doc = json.loads(Path(path).read_text())
    return doc["rows"], doc.get("manifest")


def load_results_csv(path: str | os.PathLike) -> list[dict[str, Any]]:
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                if k in ("trials_kept", "trials_flagged"):
                    row[k] = int(v)
                else:
                    x = float(v)
                    row[k] = None if k == "mean_cjt_gain" and math.isnan(x) else x
            rows.append(row)
    return rows


def emit_plot(result: SweepResult, path: str | os.PathLike, width: int = 640, height: int = 440) -> Path:
    """SVG of RMSE against distance on a log axis, one polyline per repeater power."""
    pts = [(r.d, r.rmse, r.rho_R) for r in result.rows if r.rmse > 0 and math.isfinite(r.rmse)]
    if not pts:
        raise ValueError("nothing to plot: no positive RMSE values")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    if x0 == x1:
        x0, x1 = x0 - 1.0, x1 + 1.0
    e0, e1 = math.floor(math.log10(min(ys))), math.ceil(math.log10(max(ys)))
    if e0 == e1:
        e1 += 1
    left, right, top, bottom = 70, 150, 20, 50
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (e1 - math.log10(y)) / (e1 - e0) * ph

    palette = ["#1f77b4", "#d62728", "#000000", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="white" stroke="black"/>',
    ]
    for e in range(e0, e1 + 1):
        y = sy(10.0**e)
        out.append(f'<line class="ytick" x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">1e{e}</text>')
    for k in range(6):
        xv = x0 + k * (x1 - x0) / 5
        out.append(f'<text x="{sx(xv):.2f}" y="{top + ph + 16}" text-anchor="middle">{xv:g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">d (m)</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2})">RMSE (rad)</text>'
    )

    powers = sorted({p[2] for p in pts})
    for i, p in enumerate(powers):
        color = palette[i % len(palette)]
        series = sorted((x, y) for x, y, q in pts if q == p)
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in series)
        if len(series) > 1:
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in series:
            out.append(f'<circle class="marker" cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}"/>')
        out.append(f'<text class="legend" x="{left + pw + 34}" y="{ly + 4}">{p * 1e3:g} mW</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dmimo-sync",
        description="Monte Carlo RMSE of repeater-aided inter-AP phase synchronisation.",
    )
    p.add_argument("--config", help="flat key=value config file or a JSON run manifest")
    p.add_argument("--distance-m", help="comma-separated AP-repeater distances in meters")
    p.add_argument("--rho-r-mw", help="comma-separated repeater powers in mW")
    p.add_argument("--trials", help="trials per cell")
    p.add_argument("--seed", help="64-bit seed (falls back to $DMIMO_SEED)")
    p.add_argument("--beamformer", choices=["genie", "pilot"])
    p.add_argument("--c-mode", choices=["analytic", "empirical"])
    p.add_argument("--repeater-gain", choices=["literal", "fixed", "agc"])
    p.add_argument("--cjt", action="store_true", default=None, help="also report the UE combining gain")
    p.add_argument("--out", help="results path")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--plot", help="SVG plot path")
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")

    overrides = {
        "distance_m": args.distance_m,
        "rho_r_mw": args.rho_r_mw,
        "trials": args.trials,
        "seed": args.seed,
        "beamformer": args.beamformer,
        "c_mode": args.c_mode,
        "repeater.gain_mode": args.repeater_gain,
        "cjt": args.cjt,
    }
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg, distances, powers_mw, resolved = parse_config(file_values, overrides)
    except ConfigError as exc:
        print(f"dmimo-sync: {exc}", file=sys.stderr)
        return 2

    fmt = args.format or (Path(args.out).suffix.lstrip(".") if args.out else "csv")
    if fmt not in ("csv", "json"):
        fmt = "csv"
    manifest = RunManifest(
        config=resolved,
        distances_m=distances,
        powers_mw=powers_mw,
        outputs={"results": args.out, "format": fmt, "plot": args.plot},
        seed=cfg.seed,
        started=_dt.datetime.now(_dt.timezone.utc).isoformat(),
    )
    log.info("running %d cells x %d trials", len(distances) * len(powers_mw), cfg.trials)
    result = run_sweep(cfg, distances, [p * 1e-3 for p in powers_mw], workers=args.workers)
    manifest.finished = _dt.datetime.now(_dt.timezone.utc).isoformat()
    manifest.failed_cells = [list(f) for f in result.failed]

    if args.out:
        emit_results(result, fmt, args.out, manifest)
        mpath = args.manifest or f"{args.out}.manifest.json"
        Path(mpath).write_text(json.dumps(asdict(manifest), indent=1) + "\n")
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in result_table(result):
            w.writerow([row[c] for c in CSV_COLUMNS])
        if args.manifest:
            Path(args.manifest).write_text(json.dumps(asdict(manifest), indent=1) + "\n")
    if args.plot and result.rows:
        emit_plot(result, args.plot)

    if result.failed:
        for d, p, msg in result.failed:
            print(f"dmimo-sync: cell d={d:g} m, rho_R={p * 1e3:g} mW failed: {msg}", file=sys.stderr)
        return 1
    return 0
