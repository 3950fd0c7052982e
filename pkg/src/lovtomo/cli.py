"""``lovtomo`` command-line interface: simulate, reconstruct, analyze, render.

Every failure prints one line ``lovtomo-error: <category>: <reason>`` to
stderr and exits nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, formats, imaging
from .lattice import (
    CountFrame,
    canonical_settings,
    evaluate_field,
    expected_counts,
    simulate_frame,
    theoretical_intensity,
)
from .qstate import BELL_LABELS
from .tomography import (
    BACKEND,
    STATUS_NAMES,
    MeasurementSet,
    available_backends,
    pixelwise_tomography,
)

log = logging.getLogger("lovtomo")

TOMO_FILENAME = "tomography.tomo"
CONFIG_COPY = "config.txt"
FIDELITY_FILES = {label: f"fidelity_{label.replace('+', '_plus').replace('-', '_minus')}.csv"
                  for label in BELL_LABELS}
MAX_FIDELITY_FILE = "fidelity_max.csv"
ARGMAX_FILE = "bell_argmax.csv"
HISTOGRAM_FILE = "histogram.csv"
SUMMARY_FILE = "summary.txt"


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int = 1):
        super().__init__(message)
        self.category = category
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, 2)


# -- simulate ----------------------------------------------------------------

def simulate_frames(cfg: formats.SimulationConfig) -> list[CountFrame]:
    fld = evaluate_field(cfg.lattice(), cfg.grid(), cfg.envelope())
    frames = []
    for sig, idl in canonical_settings():
        if cfg.noise == "poisson":
            frames.append(simulate_frame(fld, sig, idl, cfg.mean_total_counts,
                                         cfg.background_rate, cfg.seed, cfg.exposures))
        else:
            lam = expected_counts(fld, sig, idl, cfg.mean_total_counts, cfg.background_rate)
            counts = np.floor(lam + 0.5).astype(np.int64)
            frames.append(CountFrame(sig, idl, fld.grid, counts, cfg.exposures, cfg.seed))
    return frames


def cmd_simulate(args) -> int:
    cfg = formats.read_config(args.config)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fld = evaluate_field(cfg.lattice(), cfg.grid(), cfg.envelope())
    for frame in simulate_frames(cfg):
        formats.write_frame(out / formats.frame_filename(*frame.setting), frame)
        formats.write_csv(out / formats.intensity_filename(*frame.setting),
                          theoretical_intensity(fld, frame.signal_setting, frame.idler_setting),
                          fld.grid, f"intensity_{frame.setting}")
    formats._write_text(out / CONFIG_COPY, formats.format_config(cfg))
    log.info("wrote 16 frames and 16 intensity maps (%dx%d) to %s", cfg.width, cfg.height, out)
    return 0


# -- reconstruct -------------------------------------------------------------

def cmd_reconstruct(args) -> int:
    frames = formats.read_frame_directory(args.frames)
    mset = MeasurementSet.from_frames(frames)
    tmap = pixelwise_tomography(mset, backend=args.backend, num_threads=args.threads)
    out = Path(args.output) if args.output else Path(args.frames) / TOMO_FILENAME
    formats.write_tomo(out, tmap)
    counts = tmap.status_counts()
    log.info("reconstructed %d pixels with the %s backend: %s", tmap.grid.n_pixels,
             args.backend or BACKEND, ", ".join(f"{k} {v}" for k, v in counts.items()))
    log.info("wrote %s", out)
    return 0


# -- analyze -----------------------------------------------------------------

def analyze(tmap, n_bins: int, threshold: float, intensity=None) -> tuple[dict, dict]:
    """Fidelity products of a tomography map; returns (csv tables, summary fields)."""
    fids = analysis.bell_fidelities(tmap)
    best = analysis.max_bell_fidelity(tmap)
    witness = analysis.entangled_fraction(best, threshold)
    hist = analysis.fidelity_histogram(best, n_bins)
    tables = {FIDELITY_FILES[label]: (fids[..., b], f"fidelity_{label}")
              for b, label in enumerate(BELL_LABELS)}
    tables[MAX_FIDELITY_FILE] = (best.values, "fidelity_max")
    tables[ARGMAX_FILE] = (best.argmax.astype(np.int64), "bell_argmax")
    summary = {
        "pixels": witness.total_pixels,
        "threshold": witness.threshold,
        "entangled_fraction": witness.entangled_fraction,
        "entangled_pixels": witness.entangled_pixels,
    }
    for label, n in zip(BELL_LABELS, witness.per_bell):
        summary[f"entangled_closest_{label}"] = n
    summary["median_max_fidelity"] = float(np.median(best.values))
    for code, name in enumerate(STATUS_NAMES):
        summary[f"status_{name}"] = int(np.count_nonzero(tmap.status == code))
    summary["histogram_bins"] = n_bins
    if intensity is not None:
        values, grid, _ = intensity
        est = analysis.estimate_lattice_spacing(values, grid.pixel_pitch)
        summary["spacing_m"] = est.spacing
        summary["spacing_uncertainty_m"] = est.uncertainty
        summary["spacing_method"] = est.method
    return tables, {"summary": summary, "histogram": hist}


def format_histogram(hist: analysis.FidelityHistogram) -> str:
    lines = ["bin_low,bin_high,count"]
    for lo, hi, n in zip(hist.edges[:-1].tolist(), hist.edges[1:].tolist(), hist.counts.tolist()):
        lines.append(f"{lo!r},{hi!r},{n}")
    return "\n".join(lines) + "\n"


def format_summary(summary: dict) -> str:
    return "".join(f"{k} {v!r}\n" if isinstance(v, float) else f"{k} {v}\n"
                   for k, v in summary.items())


def cmd_analyze(args) -> int:
    tmap = formats.read_tomo(args.tomo)
    intensity = formats.read_csv(args.intensity) if args.intensity else None
    tables, extra = analyze(tmap, args.bins, args.threshold, intensity)
    out = Path(args.out) if args.out else Path(args.tomo).parent
    out.mkdir(parents=True, exist_ok=True)
    for name, (values, quantity) in tables.items():
        formats.write_csv(out / name, values, tmap.grid, quantity)
    formats._write_text(out / HISTOGRAM_FILE, format_histogram(extra["histogram"]))
    text = format_summary(extra["summary"])
    formats._write_text(out / SUMMARY_FILE, text)
    sys.stdout.write(text)
    return 0


# -- render ------------------------------------------------------------------

def load_image(path) -> imaging.RealImage:
    """A CSV map or a FRAME file as a ``RealImage``."""
    p = Path(path)
    with open(p, encoding="ascii") as fh:
        first = fh.readline().strip()
    if first == formats.FRAME_MAGIC:
        frame = formats.read_frame(p)
        return imaging.RealImage(frame.grid, frame.counts.astype(float))
    values, grid, _ = formats.read_csv(p)
    return imaging.RealImage(grid, values)


def cmd_render(args) -> int:
    img = load_image(args.input)
    cfg = imaging.FilterConfig(sigma=args.sigma,
                               background="none" if args.no_background else "corner-median",
                               colormap=args.colormap)
    data = imaging.render(imaging.process(img, cfg), cfg.colormap, binary=not args.ascii)
    out = Path(args.output) if args.output else Path(args.input).with_suffix(
        imaging.image_extension(cfg.colormap))
    out.write_bytes(data)
    log.info("wrote %s", out)
    return 0


def cmd_default_config(args) -> int:
    text = formats.format_config(formats.default_config())
    if args.output:
        formats._write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lovtomo", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write 16 count frames and analytic intensity maps")
    p.add_argument("config", help="key = value config file")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="pixel-wise maximum-likelihood tomography")
    p.add_argument("frames", help="directory holding frame_<sig><idl>.txt files")
    p.add_argument("-o", "--output", help=f"TOMO file (default <frames>/{TOMO_FILENAME})")
    p.add_argument("--backend", choices=available_backends(), default=None,
                   help=f"likelihood minimizer (default {BACKEND})")
    p.add_argument("--threads", type=int, default=0,
                   help="worker threads for the compiled backend (0 = all cores)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("analyze", help="Bell-fidelity maps, histogram and witness summary")
    p.add_argument("tomo", help="TOMO file")
    p.add_argument("--out", help="output directory (default: next to the TOMO file)")
    p.add_argument("--intensity", help="intensity CSV for the lattice-spacing estimate")
    p.add_argument("--bins", type=int, default=analysis.DEFAULT_BINS)
    p.add_argument("--threshold", type=float, default=analysis.WITNESS_THRESHOLD)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("render", help="filter a CSV map or FRAME file and write PGM/PPM")
    p.add_argument("input", help="CSV map or FRAME file")
    p.add_argument("-o", "--output", help="image path (default: input with .pgm/.ppm)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sigma", type=float, help="fixed Gaussian width in pixels")
    g.add_argument("--adaptive", action="store_true",
                   help="pick the width from count statistics (default)")
    p.add_argument("--colormap", choices=imaging.COLORMAPS, default="gray")
    p.add_argument("--no-background", action="store_true", help="skip background subtraction")
    p.add_argument("--ascii", action="store_true", help="write P2/P3 instead of P5/P6")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("default-config", help="print the default simulation config")
    p.add_argument("-o", "--output", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_default_config)
    return parser


def _category(exc: Exception) -> str:
    if isinstance(exc, formats.ConfigError):
        return "config"
    if isinstance(exc, formats.FormatError):
        return "format"
    if isinstance(exc, imaging.DegenerateImageError):
        return "degenerate-image"
    if isinstance(exc, analysis.SpacingEstimationError):
        return "spacing"
    if isinstance(exc, OSError):
        return "io"
    return "input"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "render" and args.sigma is not None and not args.sigma > 0:
            raise CliError("usage", "--sigma must be positive", 2)
        if args.command == "analyze" and args.bins < 1:
            raise CliError("usage", "--bins must be at least 1", 2)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="lovtomo: %(message)s", stream=sys.stderr, force=True)
        return args.func(args)
    except CliError as exc:
        code, category, msg = exc.code, exc.category, str(exc)
    except (ValueError, OSError, UnicodeDecodeError) as exc:
        code, category, msg = 1, _category(exc), str(exc)
    sys.stderr.write(f"lovtomo-error: {category}: {' '.join(msg.split())}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
