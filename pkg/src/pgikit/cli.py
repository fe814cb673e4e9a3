"""``pgikit`` command line: fit, decode, metrics, preview, embed, fit-set.

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embedder import CheckpointError, embed_cloud, load_params, save_params
from .fitter import DivergenceError, FitConfig, FitReport, fit_off_io, fit_on_io
from .geometry import CloudFormatError, normalize, read_cloud, write_xyz
from .geometry.metrics import compare
from .pgi import PgiFormatError, decode, load_pgi, preview_png, save_pgi

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
CLOUD_SUFFIXES = (".xyz", ".ply")

# FitConfig field -> extra spellings accepted for the same flag
_ALIASES = {"iterations": ["--iters"], "m": ["-m"]}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _optional_float(text: str) -> Optional[float]:
    return None if text.lower() == "none" else float(text)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("fit configuration")
    for f in fields(FitConfig):
        flag = "--" + f.name.replace("_", "-")
        names = _ALIASES.get(f.name, []) + ([] if f.name == "m" else [flag])
        kind = {int: int, float: float}.get(type(f.default), _optional_float)
        group.add_argument(*names, dest=f.name, type=kind, default=f.default,
                           metavar=f.name.upper(), help=f"default: {f.default}")


def _config(args: argparse.Namespace) -> FitConfig:
    try:
        return FitConfig(**{f.name: getattr(args, f.name) for f in fields(FitConfig)})
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None


def _read_cloud(path: Path):
    try:
        return read_cloud(path)
    except (OSError, CloudFormatError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot read cloud {path}: {exc}") from None


def _read_pgi(path: Path):
    try:
        return load_pgi(path)
    except (OSError, PgiFormatError) as exc:
        raise CliError(EXIT_IO, f"cannot read PGI {path}: {exc}") from None


def _write(path: Path, action) -> None:
    try:
        action(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from None


def _write_fit(prefix: Path, pgi, params, report: FitReport) -> None:
    _write(prefix.with_name(prefix.name + ".pgi"), lambda p: save_pgi(pgi, p))
    _write(prefix.with_name(prefix.name + ".pnw"), lambda p: save_params(params, p))
    _write(prefix.with_name(prefix.name + ".report"), lambda p: p.write_text(report.to_text()))


# -- subcommands ----------------------------------------------------------------

def cmd_fit(args: argparse.Namespace) -> int:
    config = _config(args)
    cloud = _read_cloud(args.input)
    out = args.out if args.out is not None else args.input.with_suffix("")
    try:
        pgi, params, report = fit_on_io(cloud, config)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None
    _write_fit(out, pgi, params, report)
    print(report.final_line())
    return EXIT_OK


def cmd_fit_set(args: argparse.Namespace) -> int:
    config = _config(args)
    try:
        paths = sorted(p for p in args.input.iterdir() if p.suffix.lower() in CLOUD_SUFFIXES)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot list {args.input}: {exc}") from None
    if not paths:
        raise CliError(EXIT_IO, f"no .xyz or .ply files in {args.input}")
    clouds = [_read_cloud(p) for p in paths]
    try:
        params, reports, pgis = fit_off_io(clouds, config)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None
    out = args.out if args.out is not None else args.input / "pgi-out"
    _write(out, lambda p: p.mkdir(parents=True, exist_ok=True))
    _write(out / "model.pnw", lambda p: save_params(params, p))
    for path, pgi, report in zip(paths, pgis, reports):
        _write(out / f"{path.stem}.pgi", lambda p: save_pgi(pgi, p))
        _write(out / f"{path.stem}.report", lambda p: p.write_text(report.to_text()))
        print(f"{path.name} {report.final_line()}")
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    pgi = _read_pgi(args.input)
    if args.dedupe and pgi.index_map is None:
        raise CliError(EXIT_USAGE, f"{args.input} has no index map; --dedupe needs a hard-resampled PGI")
    cloud = decode(pgi, dedupe=args.dedupe)
    out = args.out if args.out is not None else args.input.with_suffix(".xyz")
    _write(out, lambda p: write_xyz(cloud, p))
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    a, b = _read_cloud(args.a), _read_cloud(args.b)
    print(compare(a, b).line())
    return EXIT_OK


def cmd_preview(args: argparse.Namespace) -> int:
    pgi = _read_pgi(args.input)
    out = args.out if args.out is not None else args.input.with_suffix(".png")
    _write(out, lambda p: preview_png(pgi, p))
    return EXIT_OK


def cmd_embed(args: argparse.Namespace) -> int:
    cloud = _read_cloud(args.input)
    try:
        params = load_params(args.params)
    except (OSError, CheckpointError) as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint {args.params}: {exc}") from None
    uv = embed_cloud(normalize(cloud).points, params).uv
    out = args.out if args.out is not None else args.input.with_suffix(".uv")
    _write(out, lambda p: np.savetxt(p, uv, fmt="%.17g"))
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgikit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log progress (-v) or debug detail (-vv)")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit one cloud and write .pgi/.pnw/.report")
    fit.add_argument("input", type=Path)
    fit.add_argument("-o", "--out", type=Path, help="output prefix")
    _add_config_flags(fit)
    fit.set_defaults(func=cmd_fit)

    fit_set = sub.add_parser("fit-set", help="train one embedder over a directory of clouds")
    fit_set.add_argument("input", type=Path)
    fit_set.add_argument("-o", "--out", type=Path, help="output directory")
    _add_config_flags(fit_set)
    fit_set.set_defaults(func=cmd_fit_set)

    dec = sub.add_parser("decode", help="PGI to XYZ")
    dec.add_argument("input", type=Path)
    dec.add_argument("-o", "--out", type=Path)
    dec.add_argument("--dedupe", action="store_true", help="one point per covered source index")
    dec.set_defaults(func=cmd_decode)

    met = sub.add_parser("metrics", help="Chamfer and Hausdorff distance of two clouds")
    met.add_argument("a", type=Path)
    met.add_argument("b", type=Path)
    met.set_defaults(func=cmd_metrics)

    pre = sub.add_parser("preview", help="PGI to an m x m RGB PNG")
    pre.add_argument("input", type=Path)
    pre.add_argument("-o", "--out", type=Path)
    pre.set_defaults(func=cmd_preview)

    emb = sub.add_parser("embed", help="dump the 2D embedding as two-column text")
    emb.add_argument("input", type=Path)
    emb.add_argument("--params", type=Path, required=True, help=".pnw checkpoint")
    emb.add_argument("-o", "--out", type=Path)
    emb.set_defaults(func=cmd_embed)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"pgikit: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"pgikit: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
