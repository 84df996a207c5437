"""
Command-line front end.

    invivo-mimo rates [--bandwidth 20|40] [--gi 800|400]
    invivo-mimo run CONFIG [--frames N] [--seed S] [--mcs M] [--out CSV]
    invivo-mimo sweep CONFIG --axis mcs|distance --range SPEC [--out CSV] [--force]
    invivo-mimo touchstone PATH

CONFIG is a YAML file whose keys mirror SimConfig (see data/*.yaml), a run
manifest written by this tool, or ``bundled:<name>`` for a packaged config.
Values from the file override built-in defaults; command-line flags override
the file. Exit codes: 0 ok, 1 usage/config error, 2 I/O error, 3 refused.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import asdict, fields
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .channel import (LinkBudget, SyntheticParams, TouchstoneError, dbm_to_w, load_touchstone,
                      to_channel_response)
from .harness import (CSV_FIELDS, ChannelSource, ConfigError, SimConfig, SimResult, run_link,
                      sweep_distance, sweep_mcs)
from .phy_params import rate_table

OUTDIR_ENV = "INVIVO_MIMO_OUTDIR"

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_REFUSED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------

_TOP_KEYS = {"mcs", "bandwidth", "guard_interval", "psdu_bytes", "frames", "seed", "detector",
             "decoding", "power_mode", "regeneration", "carrier_freq", "bypass_fec", "budget", "channel"}


def _resolve(path: str | None, base: Path) -> str | None:
    if path is None:
        return None
    p = Path(path).expanduser()
    return str(p if p.is_absolute() else (base / p).resolve())


def read_config_file(path: str) -> tuple[dict, Path, dict | None]:
    """Return (raw config dict, directory for relative paths, manifest entry if any)."""
    if path.startswith("bundled:"):
        name = path.split(":", 1)[1]
        ref = resources.files("invivo_mimo") / "data" / name
        if not ref.is_file():
            raise FileNotFoundError(f"no bundled config named {name!r}")
        with resources.as_file(ref) as real:
            return read_config_file(str(real))
    p = Path(path)
    text = p.read_text()
    data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    if "entries" in data and "tool" in data:
        entry = data["entries"][-1]
        return entry["config"], p.parent, entry
    return data, p.parent, None


def config_from_dict(raw: dict, base_dir: Path = Path(".")) -> SimConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    budget_raw = dict(raw.get("budget") or {})
    if "tx_power_w" in budget_raw:
        tx_w = float(budget_raw["tx_power_w"])
    elif "tx_power_dbm" in budget_raw:
        tx_w = dbm_to_w(float(budget_raw["tx_power_dbm"]))
    else:
        tx_w = float(budget_raw.get("tx_power_mw", 0.412)) * 1e-3
    if "noise_power_w" in budget_raw:
        noise_w = float(budget_raw["noise_power_w"] or 0.0)
    else:
        noise_dbm = budget_raw.get("noise_dbm", -101.0)
        noise_w = 0.0 if noise_dbm is None else dbm_to_w(float(noise_dbm))
    budget = LinkBudget(tx_w, noise_w, int(raw.get("bandwidth", 20)))

    ch = dict(raw.get("channel") or {"kind": "identity"})
    kind = ch.get("kind", "identity")
    synthetic = None
    if kind == "synthetic":
        allowed = {f.name for f in fields(SyntheticParams)}
        extra = set(ch.get("synthetic") or {}) - allowed
        if extra:
            raise ConfigError(f"unknown synthetic channel keys: {', '.join(sorted(extra))}")
        synthetic = SyntheticParams(**(ch.get("synthetic") or {}))
    port_map = ch.get("port_map")
    if port_map is not None:
        port_map = {"tx": tuple(port_map["tx"]), "rx": tuple(port_map["rx"])}
    files = ch.get("distance_files")
    if files is not None:
        files = {float(k): _resolve(v, base_dir) for k, v in files.items()}
    source = ChannelSource(
        kind=kind,
        gain_db=float(ch.get("gain_db", 0.0)),
        path=_resolve(ch.get("path"), base_dir),
        port_map=port_map,
        synthetic=synthetic,
        distance_files=files,
        distance_mm=ch.get("distance_mm"),
    )
    return SimConfig(
        mcs=int(raw.get("mcs", 0)),
        bandwidth=int(raw.get("bandwidth", 20)),
        guard_interval=int(raw.get("guard_interval", 800)),
        psdu_bytes=int(raw.get("psdu_bytes", 1000)),
        n_frames=int(raw.get("frames", 10000)),
        seed=int(raw.get("seed", 0)),
        detector=str(raw.get("detector", "MMSE")).upper(),
        channel=source,
        budget=budget,
        regeneration=raw.get("regeneration"),
        decoding=raw.get("decoding", "soft"),
        bypass_fec=bool(raw.get("bypass_fec", False)),
        power_mode=raw.get("power_mode", "total"),
        carrier_freq=float(raw.get("carrier_freq", 2.4e9)),
    )


def config_to_raw(config: SimConfig) -> dict:
    """Inverse of :func:`config_from_dict` with every value spelled out."""
    src = config.channel
    ch: dict = {"kind": src.kind, "gain_db": src.gain_db}
    if src.path:
        ch["path"] = src.path
    if src.port_map:
        ch["port_map"] = {"tx": list(src.port_map["tx"]), "rx": list(src.port_map["rx"])}
    if src.distance_files:
        ch["distance_files"] = {str(k): v for k, v in src.distance_files.items()}
    if src.distance_mm is not None:
        ch["distance_mm"] = src.distance_mm
    if src.synthetic is not None:
        ch["synthetic"] = asdict(src.synthetic)
    return {
        "mcs": config.mcs,
        "bandwidth": config.bandwidth,
        "guard_interval": config.guard_interval,
        "psdu_bytes": config.psdu_bytes,
        "frames": config.n_frames,
        "seed": config.seed,
        "detector": config.detector,
        "decoding": config.decoding,
        "power_mode": config.power_mode,
        "regeneration": config.regeneration,
        "carrier_freq": config.carrier_freq,
        "bypass_fec": config.bypass_fec,
        "budget": {"tx_power_w": config.budget.tx_power_w, "noise_power_w": config.budget.noise_power_w},
        "channel": ch,
    }


def load_config(path: str, overrides: dict | None = None) -> tuple[SimConfig, dict | None]:
    raw, base, entry = read_config_file(path)
    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return config_from_dict(raw, base), entry


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(results: list[SimResult], header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(CSV_FIELDS)
    for r in results:
        row = r.row()
        writer.writerow([_fmt(row[name]) for name in CSV_FIELDS])
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def append_csv(path: Path, results: list[SimResult]) -> None:
    existing = path.read_text() if path.exists() else ""
    _atomic_write(path, existing + csv_text(results, header=not existing))


def manifest_path(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.name + ".manifest.json")


def write_manifest(csv_path: Path, entry: dict, append: bool) -> Path:
    mpath = manifest_path(csv_path)
    doc = {"tool": "invivo-mimo", "version": __version__, "outputs": [str(csv_path)], "entries": []}
    if append and mpath.exists():
        doc = json.loads(mpath.read_text())
    doc["entries"].append(entry)
    _atomic_write(mpath, json.dumps(doc, indent=2) + "\n")
    return mpath


def _report_targets(results: list[SimResult]) -> None:
    for r in results:
        notes = ", ".join(f"{t:g} {word}" for t, word in r.annotations().items())
        where = f" @ {r.distance_mm:g} mm" if r.distance_mm is not None else ""
        print(f"{r.mode} MCS {r.mcs}{where}: BER {r.ber:.3g} [{notes}]", file=sys.stderr)


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUTDIR_ENV, ".")) / name


def _entry(command: str, config: SimConfig, workers: int, **extra) -> dict:
    return {
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
        "seed": config.seed,
        "workers": workers,
        "config": config_to_raw(config),
        **extra,
    }


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_rates(args) -> int:
    rows = rate_table(args.bandwidth, args.gi)
    if args.csv:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["mcs", "streams", "modulation", "code_rate", "rate_mbps"])
        for r in rows:
            writer.writerow([r["mcs"], r["streams"], r["modulation"], r["code_rate"], r["rate_mbps"]])
        return EXIT_OK
    print(f"HT rates at {args.bandwidth} MHz, {args.gi} ns GI")
    print(f"{'MCS':>3}  {'streams':>7}  {'modulation':<10}  {'rate':>5}  {'Mbit/s':>7}")
    for r in rows:
        print(f"{r['mcs']:>3}  {r['streams']:>7}  {r['modulation']:<10}  {r['code_rate']:>5}  {r['rate_mbps']:>7.1f}")
    return EXIT_OK


def _overrides(args) -> dict:
    return {"frames": args.frames, "seed": args.seed, "mcs": getattr(args, "mcs", None),
            "detector": args.detector, "psdu_bytes": args.psdu_bytes}


def cmd_run(args) -> int:
    config, _ = load_config(args.config, _overrides(args))
    out = Path(args.out) if args.out else _default_out("results.csv")
    result = run_link(config, args.workers)
    append_csv(out, [result])
    mpath = write_manifest(out, _entry("run", config, args.workers), append=True)
    print(csv_text([result]), end="")
    _report_targets([result])
    print(f"wrote {out} (manifest {mpath})", file=sys.stderr)
    return EXIT_OK


def parse_range(spec: str, integer: bool = False) -> list:
    """``a..b`` (step 1), ``a..b:step`` or a comma list."""
    spec = spec.strip()
    try:
        if ".." in spec:
            lo, _, rest = spec.partition("..")
            hi, _, step = rest.partition(":")
            lo_v, hi_v = float(lo), float(hi)
            step_v = float(step) if step else 1.0
            if step_v <= 0 or hi_v < lo_v:
                raise ValueError
            count = int(np.floor((hi_v - lo_v) / step_v + 1e-9)) + 1
            values = [lo_v + i * step_v for i in range(count)]
        else:
            values = [float(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad range specification {spec!r}") from None
    if integer:
        if any(v != int(v) for v in values):
            raise UsageError(f"range {spec!r} must contain integers")
        return [int(v) for v in values]
    return values


def cmd_sweep(args) -> int:
    config, entry = load_config(args.config, _overrides(args))
    sweep_meta = (entry or {}).get("sweep", {})
    axis = args.axis or sweep_meta.get("axis")
    range_spec = args.range or sweep_meta.get("range")
    if axis is None or range_spec is None:
        raise UsageError("sweep needs --axis and --range")
    out = Path(args.out) if args.out else _default_out(f"sweep_{axis}.csv")
    if out.exists() and not args.force:
        print(f"refusing to overwrite {out} (use --force)", file=sys.stderr)
        return EXIT_REFUSED
    mcs_spec = args.mcs_list or sweep_meta.get("mcs_list")
    mode = args.mode or sweep_meta.get("mode")
    if axis == "mcs":
        mcs_values = parse_range(range_spec, integer=True)
        if mode is None:
            mode = "SISO" if all(m < 8 for m in mcs_values) else "MIMO"
        results = sweep_mcs(config, mcs_values, mode, args.workers)
    else:
        distances = parse_range(range_spec)
        mcs_values = parse_range(mcs_spec, integer=True) if mcs_spec else [config.mcs]
        results = sweep_distance(config, distances, mcs_values, args.workers)
    _atomic_write(out, csv_text(results))
    meta = {"axis": axis, "range": range_spec, "mcs_list": mcs_spec, "mode": mode}
    mpath = write_manifest(out, _entry("sweep", config, args.workers, sweep=meta), append=False)
    print(csv_text(results), end="")
    _report_targets(results)
    print(f"wrote {out} (manifest {mpath})", file=sys.stderr)
    return EXIT_OK


def cmd_touchstone(args) -> int:
    net = load_touchstone(args.path, args.ports)
    f0 = args.freq * 1e9
    lo, hi = net.freqs[0], net.freqs[-1]
    h_mode = "MIMO 2x2" if net.n_ports == 4 else ("SISO" if net.n_ports == 2 else f"{net.n_ports}-port")
    print(f"{args.path}: {net.n_ports} ports, {lo / 1e9:.3f}–{hi / 1e9:.3f} GHz, "
          f"{net.freqs.size} points, R {net.z0:g} ohm")
    print(f"H-mode: {h_mode}")
    if lo <= f0 <= hi:
        resp = to_channel_response(net, {"tx": tuple(range(1, net.n_ports + 1)),
                                         "rx": tuple(range(1, net.n_ports + 1))}, [f0])
        mag = np.abs(resp.H[0])
        print(f"|S| at {args.freq:g} GHz (dB):")
        for i in range(net.n_ports):
            cells = " ".join(f"{20 * np.log10(v) if v > 0 else -np.inf:8.2f}" for v in mag[i])
            print(f"  to port {i + 1}: {cells}")
    else:
        print(f"{args.freq:g} GHz is outside the file band")
    print(f"touchstone,{args.path},{net.n_ports},{float(lo)!r},{float(hi)!r},{net.freqs.size},{h_mode}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="invivo-mimo", description="802.11n MIMO-OFDM in-vivo link simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rates", help="print the HT MCS rate table")
    p.add_argument("--bandwidth", type=int, choices=(20, 40), default=20)
    p.add_argument("--gi", type=int, choices=(800, 400), default=800)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_rates)

    def common(p):
        p.add_argument("config")
        p.add_argument("--frames", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--detector", choices=("ZF", "MMSE"))
        p.add_argument("--psdu-bytes", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out")

    p = sub.add_parser("run", help="simulate one configuration and append a CSV row")
    common(p)
    p.add_argument("--mcs", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep MCS or distance and write a CSV table")
    common(p)
    p.add_argument("--axis", choices=("mcs", "distance"))
    p.add_argument("--range", help="a..b, a..b:step or a,b,c")
    p.add_argument("--mcs-list", help="MCS values for a distance sweep (same syntax as --range)")
    p.add_argument("--mode", choices=("SISO", "MIMO"))
    p.add_argument("--force", action="store_true", help="overwrite an existing output file")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("touchstone", help="summarise a Touchstone file")
    p.add_argument("path")
    p.add_argument("--ports", type=int)
    p.add_argument("--freq", type=float, default=2.4, help="GHz")
    p.set_defaults(func=cmd_touchstone)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"invivo-mimo: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TouchstoneError) as exc:
        print(f"invivo-mimo: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        print(f"invivo-mimo: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
