"""Command-line front end: generate -> attack -> compare.

Subcommands::

    scawb generate   --channel {power|impedance} --key HEX --traces M --out FILE
    scawb attack     FILE --out DIR
    scawb compare    POWER_FILE IMPEDANCE_FILE --out DIR
    scawb noise-demo --key HEX --out DIR

Simulator settings come from the channel defaults, then an optional
``--config`` file of ``key = value`` lines, then ``--set key=value`` pairs,
then the explicit flags. ``generate`` writes a ``.manifest`` sidecar in the
same format, so ``generate --config X.manifest --out Y`` reproduces a file.

Exit codes: 0 success (attack: full recovery or no true key), 1 partial
recovery, 2 usage, format or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .aes_target import BLOCK_SIZE, parse_key_hex
from .cpa_engine import correlate_position
from .leakage_sim import ConfigError, LeakageConfig, default_config, generate_plaintexts, synth_traces
from .metrics import (
    DEFAULT_STRIDE,
    DEFAULT_TOP_N,
    ComparisonError,
    SubkeyReport,
    build_report,
    channel_report,
)
from .trace_store import (
    TraceFormatError,
    TraceSet,
    atomic_write,
    export_csv,
    format_float,
    read_trace_file,
    write_csv_rows,
    write_trace_file,
)

SEED_ENV = "SCAWB_SEED"
EXIT_OK, EXIT_PARTIAL, EXIT_ERROR = 0, 1, 2

# config-file key -> LeakageConfig field
_FLOAT_KEYS = {
    "a": "a", "b": "b", "sigma": "noise_sigma", "noise_sigma": "noise_sigma",
    "axis_start": "axis_start", "axis_step": "axis_step", "lfsr_coupling": "lfsr_coupling",
    "resonance_amplitude": "resonance_amplitude", "resonance_center": "resonance_center",
    "resonance_width": "resonance_width",
}
_INT_KEYS = {"reps": "repetitions", "repetitions": "repetitions",
             "samples": "sample_count", "sample_count": "sample_count"}
_RUN_KEYS = {"channel", "key", "traces", "seed"}


class UsageError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise UsageError(f"expected on/off, got {text!r}")


def _parse_positions(text: str) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(i) for i in group.split(",") if i.strip()) for group in text.split(";"))


def _format_positions(groups) -> str:
    return ";".join(",".join(str(i) for i in g) for g in groups)


def resolve_run(settings: dict[str, str]) -> tuple[LeakageConfig, np.ndarray, int]:
    """Turn merged ``key = value`` settings into (config, key, trace count)."""
    unknown = set(settings) - set(_FLOAT_KEYS) - set(_INT_KEYS) - _RUN_KEYS - {
        "lfsr", "lfsr_seeds", "leak_positions"}
    if unknown:
        raise UsageError(f"unknown setting(s): {', '.join(sorted(unknown))}")
    for required in ("channel", "key", "traces"):
        if required not in settings:
            raise UsageError(f"missing required setting --{required}")
    channel = settings["channel"]
    key = parse_key_hex(settings["key"])
    try:
        traces = int(settings["traces"])
        seed = int(settings.get("seed", "0"), 0)
        overrides: dict = {"rng_seed": seed}
        for name, field in _FLOAT_KEYS.items():
            if name in settings:
                overrides[field] = float(settings[name])
        for name, field in _INT_KEYS.items():
            if name in settings:
                overrides[field] = int(settings[name])
    except ValueError as exc:
        raise UsageError(f"bad numeric setting: {exc}") from exc
    if traces < 2:
        raise UsageError(f"--traces must be >= 2 (correlation needs two measurements), got {traces}")
    if "lfsr" in settings:
        overrides["lfsr_enabled"] = _parse_bool(settings["lfsr"])
    if "lfsr_seeds" in settings:
        overrides["lfsr_seeds"] = tuple(int(s, 0) for s in settings["lfsr_seeds"].split(",") if s.strip())
    if "leak_positions" in settings:
        overrides["leak_positions"] = _parse_positions(settings["leak_positions"])
    config = default_config(channel, **overrides)
    return config, key, traces


def manifest_text(config: LeakageConfig, key: np.ndarray, traces: int) -> str:
    lines = [
        f"# scawb {__version__} generate manifest",
        f"channel = {config.channel}",
        f"key = {bytes(key).hex().upper()}",
        f"traces = {traces}",
        f"seed = {config.rng_seed}",
        f"a = {config.a!r}",
        f"b = {config.b!r}",
        f"sigma = {config.noise_sigma!r}",
        f"reps = {config.repetitions}",
        f"samples = {config.sample_count}",
        f"axis_start = {config.axis_start!r}",
        f"axis_step = {config.axis_step!r}",
        f"lfsr = {'on' if config.lfsr_enabled else 'off'}",
        f"lfsr_seeds = {','.join(str(s) for s in config.lfsr_seeds)}",
        f"lfsr_coupling = {config.lfsr_coupling!r}",
        f"resonance_amplitude = {config.resonance_amplitude!r}",
        f"resonance_center = {config.resonance_center!r}",
        f"resonance_width = {config.resonance_width!r}",
        f"leak_positions = {_format_positions(config.leak_positions)}",
    ]
    return "\n".join(lines) + "\n"


def generate_to(config: LeakageConfig, key: np.ndarray, traces: int, out: Path) -> TraceSet:
    plaintexts = generate_plaintexts(traces, config.rng_seed)
    trace_set = synth_traces(config, plaintexts, key)
    write_trace_file(trace_set, out)
    atomic_write(Path(str(out) + ".manifest"), manifest_text(config, key, traces))
    return trace_set


def _default_seed() -> str:
    return os.environ.get(SEED_ENV, "0")


def _merged_settings(args) -> dict[str, str]:
    settings: dict[str, str] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        settings.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        settings[k.strip()] = v.strip()
    flag_map = {"channel": "channel", "key": "key", "traces": "traces", "seed": "seed",
                "sigma": "sigma", "reps": "reps", "lfsr": "lfsr", "samples": "samples"}
    for attr, name in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            settings[name] = str(value)
    if "seed" not in settings:
        settings["seed"] = _default_seed()
    return settings


def cmd_generate(args) -> int:
    config, key, traces = resolve_run(_merged_settings(args))
    out = Path(args.out)
    generate_to(config, key, traces, out)
    print(f"wrote {traces} {config.channel} traces x {config.sample_count} samples to {out} (seed {config.rng_seed})")
    return EXIT_OK


def _print_reports(reports: list[SubkeyReport]) -> None:
    print("position  recovered  max|rho|   CR      MTD   IQR")
    for r in reports:
        known = r.true_byte is not None
        cr = f"{r.cr:7.3f}" if known else "      -"
        mtd = (str(r.mtd) if r.mtd is not None else "-") if known else "-"
        print(f"{r.position:8d}  0x{r.recovered:02X}       {r.max_rho:7.4f}  {cr}  {mtd:>5}  {r.iqr_label}")


def cmd_attack(args) -> int:
    traces = read_trace_file(args.trace_file)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = channel_report(traces, traces.true_key, args.stride, args.top_n)
    export_csv(reports, out / "report.csv")
    for r in reports:
        write_csv_rows(_guess_rows([r], with_channel=False), out / f"guess_peaks_p{r.position:02d}.csv")
        if args.full_surfaces:
            export_csv(correlate_position(traces, r.position), out / f"surface_p{r.position:02d}.csv")
    recovered = bytes(r.recovered for r in reports)
    _print_reports(reports)
    print("recovered key:", " ".join(f"{b:02X}" for b in recovered))
    if traces.true_key is None:
        print("no true key in file; success not assessed")
        return EXIT_OK
    ok = sum(r.success for r in reports)
    print(f"{ok}/{BLOCK_SIZE} subkeys recovered")
    return EXIT_OK if ok == BLOCK_SIZE else EXIT_PARTIAL


def _guess_rows(reports: list[SubkeyReport], with_channel: bool = True):
    head = ["channel", "position"] if with_channel else []
    yield head + ["guess", "rho_at_peak", "abs_peak", "peak_sample"]
    for r in reports:
        prefix = [r.channel, str(r.position)] if with_channel else []
        for g, rho, idx in r.guess_peaks:
            yield prefix + [str(g), format_float(rho), format_float(abs(rho)), str(idx)]


def _hex_or_blank(v: int | None) -> str:
    return "" if v is None else f"0x{v:02X}"


def cmd_compare(args) -> int:
    power = read_trace_file(args.power_file)
    imp = read_trace_file(args.impedance_file)
    if power.channel != "power" or imp.channel != "impedance":
        raise ComparisonError(
            f"expected a power file then an impedance file, got {power.channel} and {imp.channel}")
    if power.n_traces != imp.n_traces:
        raise ComparisonError(f"trace counts differ: {power.n_traces} vs {imp.n_traces}")
    if not np.array_equal(power.plaintexts, imp.plaintexts):
        raise ComparisonError("the two files were acquired with different plaintext sequences")
    if power.true_key is not None and imp.true_key is not None and not np.array_equal(power.true_key, imp.true_key):
        raise ComparisonError("the two files carry different true keys")
    key = power.true_key if power.true_key is not None else imp.true_key
    report = build_report(power, imp, key, args.stride, args.top_n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    export_csv(report.rows(), out / "report.csv")
    pairs = list(zip(report.power, report.impedance))
    write_csv_rows(
        [["position", "true_byte", "power_max_rho", "impedance_max_rho", "power_rho_correct", "impedance_rho_correct"]]
        + [[str(p.position), _hex_or_blank(p.true_byte), format_float(p.max_rho), format_float(i.max_rho),
            format_float(p.max_rho_correct), format_float(i.max_rho_correct)] for p, i in pairs],
        out / "max_correlation.csv",
    )
    write_csv_rows(
        [["position", "true_byte", "power_cr", "impedance_cr"]]
        + [[str(p.position), _hex_or_blank(p.true_byte), format_float(p.cr), format_float(i.cr)] for p, i in pairs],
        out / "correlation_ratio.csv",
    )
    write_csv_rows(
        [["channel", "position", "traces", "rank"]]
        + [[r.channel, str(r.position), str(n), str(rank)] for r in report.rows() for n, rank in r.trajectory],
        out / "mtd_trajectories.csv",
    )
    write_csv_rows(
        [["position", "true_byte", "power", "impedance"]]
        + [[str(p.position), _hex_or_blank(p.true_byte), p.iqr_label, i.iqr_label] for p, i in pairs],
        out / "iqr_table.csv",
    )
    write_csv_rows(_guess_rows(report.rows()), out / "guess_correlations.csv")

    print("position  subkey  max|rho| power/imp    CR power/imp      MTD power/imp  IQR power/imp")
    for p, i in pairs:
        print(f"{p.position:8d}  {_hex_or_blank(p.true_byte) or '-':>6}  {p.max_rho:6.3f} {i.max_rho:6.3f}"
              f"     {p.cr:6.3f} {i.cr:6.3f}    {str(p.mtd or '-'):>6} {str(i.mtd or '-'):>6}"
              f"    {p.iqr_label:>3} {i.iqr_label:>3}")
    if key is not None:
        for ch in ("power", "impedance"):
            print(f"{ch}: {report.success_count(ch)}/{BLOCK_SIZE} subkeys recovered, "
                  f"{report.failure_count(ch)} IQR failures")
    print(f"wrote comparison bundle to {out}")
    return EXIT_OK


def cmd_noise_demo(args) -> int:
    settings = _merged_settings(args)
    settings.setdefault("traces", "1000")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for channel in ("power", "impedance"):
        for lfsr in (False, True):
            run = dict(settings, channel=channel, lfsr="on" if lfsr else "off")
            config, key, traces = resolve_run(run)
            path = out / f"{channel}_{'lfsr' if lfsr else 'clean'}.sctr"
            generate_to(config, key, traces, path)
            print(f"wrote {path}")
    return EXIT_OK


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scawb", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def sim_flags(p: argparse.ArgumentParser, with_channel: bool) -> None:
        if with_channel:
            p.add_argument("--channel", choices=("power", "impedance"))
        p.add_argument("--key", help="128-bit key as 32 hex characters")
        p.add_argument("--traces", type=int, help="number of measurements M (>= 2)")
        p.add_argument("--seed", help=f"u64 RNG seed (default ${SEED_ENV} or 0)")
        p.add_argument("--sigma", type=float, help="per-capture Gaussian noise std")
        p.add_argument("--reps", type=int, help="captures averaged per trace")
        p.add_argument("--samples", type=int, help="samples per trace")
        if with_channel:
            p.add_argument("--lfsr", choices=("on", "off"), help="LFSR background activity")
        p.add_argument("--config", help="key = value settings file (e.g. a .manifest)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="extra setting override")

    g = sub.add_parser("generate", help="simulate a trace file")
    sim_flags(g, with_channel=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("attack", help="recover the key from a trace file")
    a.add_argument("trace_file")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--stride", type=_positive_int, default=DEFAULT_STRIDE, help="MTD trace-count step")
    a.add_argument("--top-n", dest="top_n", type=int, default=DEFAULT_TOP_N, help="peaks fed to the IQR rule")
    a.add_argument("--full-surfaces", action="store_true", help="also write 256 x S surface CSVs")
    a.set_defaults(func=cmd_attack)

    c = sub.add_parser("compare", help="compare a power and an impedance trace file")
    c.add_argument("power_file")
    c.add_argument("impedance_file")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--stride", type=_positive_int, default=DEFAULT_STRIDE)
    c.add_argument("--top-n", dest="top_n", type=int, default=DEFAULT_TOP_N)
    c.set_defaults(func=cmd_compare)

    n = sub.add_parser("noise-demo", help="clean and LFSR-noisy trace files for both channels")
    sim_flags(n, with_channel=False)
    n.add_argument("--out", required=True, help="output directory")
    n.set_defaults(func=cmd_noise_demo)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, TraceFormatError, ComparisonError, ValueError, OSError) as exc:
        print(f"scawb {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
