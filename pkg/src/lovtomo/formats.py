"""On-disk formats: simulation config, FRAME count files, TOMO results and CSV images.

All writers are deterministic: floats are written with ``repr`` (shortest
round-trip form), so re-reading reproduces every value bit for bit.

Config
    Flat ``key = value`` lines; ``#`` starts a comment. Unknown or duplicate
    keys are rejected. Omitted geometry keys default to the 140x140
    acquisition with origin and beam centred on the grid.

FRAME (``frame_<sig><idl>.txt``)::

    FRAME 1
    width <W>
    height <H>
    signal <label>
    idler <label>
    exposures <n>
    seed <n>
    pixel_pitch <m>          (optional, default 13e-6)
    magnification <x>        (optional, default 1)
    data
    <H rows of W integers>

TOMO::

    TOMO 1
    width <W>
    height <H>
    pixel_pitch <m>
    magnification <x>
    columns r00 r11 r22 r33 re01 im01 re02 im02 re03 im03 re12 im12 re13 im13 re23 im23 status
    data
    <W*H rows, row-major pixels>

CSV::

    # width=<W>,height=<H>,pixel_pitch=<m>,quantity=<name>
    <H rows of W comma-separated values>
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .lattice import (
    DEFAULT_EXPOSURES,
    DEFAULT_PIXEL_PITCH,
    DEFAULT_WAVELENGTH,
    TOMOGRAPHY_LABELS,
    BeamEnvelope,
    CountFrame,
    GridGeometry,
    LatticeParams,
    default_geometry,
    lattice_spacing,
)
from .tomography import STATUS_NAMES, TomographyMap

FRAME_MAGIC = "FRAME 1"
TOMO_MAGIC = "TOMO 1"
TOMO_COLUMNS = ("r00 r11 r22 r33 re01 im01 re02 im02 re03 im03 "
                "re12 im12 re13 im13 re23 im23 status")
_UPPER = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

NOISE_MODELS = ("poisson", "none")


class FormatError(ValueError):
    """Malformed or inconsistent file contents."""


class ConfigError(ValueError):
    def __init__(self, key: str | None, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


def _r(x: float) -> str:
    return repr(float(x))


def frame_filename(signal: str, idler: str) -> str:
    return f"frame_{signal}{idler}.txt"


def intensity_filename(signal: str, idler: str) -> str:
    return f"intensity_{signal}{idler}.csv"


# -- config ------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    width: int
    height: int
    pixel_pitch: float
    magnification: float
    wavelength: float
    delta_n: float
    incline_theta: float
    origin_x0: float
    origin_y0: float
    n_passes: int
    waist: float
    center_x: float
    center_y: float
    mean_total_counts: float
    background_rate: float
    exposures: int
    seed: int
    noise: str
    output_dir: str

    def __post_init__(self):
        # Component invariants surface as ConfigError naming the key.
        if self.mean_total_counts < 0 or not math.isfinite(self.mean_total_counts):
            raise ConfigError("mean_total_counts", "must be finite and nonnegative")
        if self.background_rate < 0 or not math.isfinite(self.background_rate):
            raise ConfigError("background_rate", "must be finite and nonnegative")
        if self.seed < 0:
            raise ConfigError("seed", "must be nonnegative")
        if self.exposures < 1:
            raise ConfigError("exposures", "must be positive")
        if self.noise not in NOISE_MODELS:
            raise ConfigError("noise", f"must be one of {', '.join(NOISE_MODELS)}")
        for key, build in (("width", self.grid), ("wavelength", self.lattice),
                           ("waist", self.envelope)):
            try:
                build()
            except ValueError as exc:
                raise ConfigError(_guess_key(str(exc), key), str(exc)) from None

    def grid(self) -> GridGeometry:
        return GridGeometry(self.width, self.height, self.pixel_pitch, self.magnification)

    def lattice(self) -> LatticeParams:
        return LatticeParams(self.wavelength, self.delta_n, self.incline_theta,
                             self.origin_x0, self.origin_y0, self.n_passes)

    def envelope(self) -> BeamEnvelope:
        return BeamEnvelope(self.waist, self.center_x, self.center_y)


_FIELD_TYPES = {f.name: f.type for f in fields(SimulationConfig)}
CONFIG_KEYS = tuple(_FIELD_TYPES)


def _guess_key(message: str, fallback: str) -> str:
    for key in CONFIG_KEYS:
        if message.startswith(key) or f" {key}" in message or f"({key}" in message:
            return key
    return fallback


def default_config(**overrides) -> SimulationConfig:
    """Config for the 140x140, 13 um acquisition; overrides are applied first
    to the grid and optics, so derived defaults follow them."""
    unknown = set(overrides) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    g = {k: overrides[k] for k in ("width", "height", "pixel_pitch", "magnification")
         if k in overrides}
    for key in ("width", "height"):
        if key in g and g[key] < 1:
            raise ConfigError(key, "must be at least 1")
    for key in ("pixel_pitch", "magnification"):
        if key in g and not g[key] > 0:
            raise ConfigError(key, "must be positive")
    params, grid, env = default_geometry(
        width=g.get("width", 140), height=g.get("height"),
        pixel_pitch=g.get("pixel_pitch", DEFAULT_PIXEL_PITCH),
        **({"magnification": g["magnification"]} if "magnification" in g else {}))
    base = dict(
        width=grid.width, height=grid.height, pixel_pitch=grid.pixel_pitch,
        magnification=grid.magnification, wavelength=params.wavelength,
        delta_n=params.delta_n, incline_theta=params.incline_theta,
        origin_x0=params.origin_x0, origin_y0=params.origin_y0, n_passes=params.n_passes,
        waist=env.waist, center_x=env.center_x, center_y=env.center_y,
        mean_total_counts=1e6 * grid.n_pixels, background_rate=0.0,
        exposures=DEFAULT_EXPOSURES, seed=0, noise="poisson", output_dir="lovtomo_out")
    if ("wavelength" in overrides or "delta_n" in overrides) and "incline_theta" not in overrides:
        # keep the default detector-plane spacing for the new optics
        wl = overrides.get("wavelength", DEFAULT_WAVELENGTH)
        dn = overrides.get("delta_n", params.delta_n)
        if wl > 0 and dn > 0:
            base["incline_theta"] = LatticeParams.for_spacing(
                lattice_spacing(params), wavelength=wl, delta_n=dn).incline_theta
    base.update(overrides)
    return SimulationConfig(**base)


def _parse_value(key: str, text: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
            return v
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind}") from None
    return text


def parse_config(text: str) -> SimulationConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(None, f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in _FIELD_TYPES:
            raise ConfigError(key, f"unknown key (line {lineno})")
        if key in values:
            raise ConfigError(key, f"duplicate key (line {lineno})")
        if not value:
            raise ConfigError(key, f"missing value (line {lineno})")
        values[key] = _parse_value(key, value)
    return default_config(**values)


def format_config(cfg: SimulationConfig) -> str:
    lines = []
    for key, value in asdict(cfg).items():
        lines.append(f"{key} = {_r(value) if isinstance(value, float) else value}")
    return "\n".join(lines) + "\n"


def read_config(path) -> SimulationConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# -- FRAME -------------------------------------------------------------------

def format_frame(frame: CountFrame) -> str:
    g = frame.grid
    head = [FRAME_MAGIC, f"width {g.width}", f"height {g.height}",
            f"signal {frame.signal_setting}", f"idler {frame.idler_setting}",
            f"exposures {frame.exposures}", f"seed {frame.seed}",
            f"pixel_pitch {_r(g.pixel_pitch)}", f"magnification {_r(g.magnification)}", "data"]
    rows = (" ".join(map(str, row)) for row in frame.counts.tolist())
    return "\n".join(head) + "\n" + "\n".join(rows) + "\n"


def _read_header(lines: list[str], magic: str, what: str) -> tuple[dict[str, str], int]:
    if not lines or lines[0].strip() != magic:
        raise FormatError(f"{what}: missing '{magic}' header line")
    header: dict[str, str] = {}
    for i, line in enumerate(lines[1:], 1):
        s = line.strip()
        if s == "data":
            return header, i + 1
        key, _, value = s.partition(" ")
        if not key or not value:
            raise FormatError(f"{what}: malformed header line {i + 1}: {s!r}")
        if key in header:
            raise FormatError(f"{what}: duplicate header field {key!r}")
        header[key] = value.strip()
    raise FormatError(f"{what}: header not terminated by 'data'")


def _field(header: dict[str, str], key: str, cast, what: str, default=None):
    if key not in header:
        if default is not None:
            return default
        raise FormatError(f"{what}: missing header field {key!r}")
    try:
        return cast(header[key])
    except ValueError:
        raise FormatError(f"{what}: bad value for {key!r}: {header[key]!r}") from None


def parse_frame(text: str, name: str = "FRAME") -> CountFrame:
    lines = text.splitlines()
    header, start = _read_header(lines, FRAME_MAGIC, name)
    known = {"width", "height", "signal", "idler", "exposures", "seed", "pixel_pitch",
             "magnification"}
    extra = set(header) - known
    if extra:
        raise FormatError(f"{name}: unknown header field {sorted(extra)[0]!r}")
    w = _field(header, "width", int, name)
    h = _field(header, "height", int, name)
    sig = _field(header, "signal", str, name)
    idl = _field(header, "idler", str, name)
    for lab in (sig, idl):
        if lab not in TOMOGRAPHY_LABELS:
            raise FormatError(f"{name}: setting label {lab!r} not in {TOMOGRAPHY_LABELS}")
    exposures = _field(header, "exposures", int, name)
    seed = _field(header, "seed", int, name)
    pitch = _field(header, "pixel_pitch", float, name, DEFAULT_PIXEL_PITCH)
    mag = _field(header, "magnification", float, name, 1.0)
    try:
        counts = np.array(" ".join(lines[start:]).split(), dtype=np.int64)
    except ValueError:
        raise FormatError(f"{name}: counts must be integers") from None
    if counts.size != w * h:
        raise FormatError(f"{name}: expected {w * h} counts for {w}x{h}, found {counts.size}")
    try:
        return CountFrame(sig, idl, GridGeometry(w, h, pitch, mag), counts.reshape(h, w),
                          exposures, seed)
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from None


def write_frame(path, frame: CountFrame) -> None:
    _write_text(path, format_frame(frame))


def read_frame(path) -> CountFrame:
    return parse_frame(Path(path).read_text(encoding="ascii"), str(path))


def read_frame_directory(directory) -> list[CountFrame]:
    """Every ``frame_*.txt`` file in ``directory``, sorted by name."""
    paths = sorted(Path(directory).glob("frame_*.txt"))
    if not paths:
        raise FormatError(f"{directory}: no frame_*.txt files found")
    return [read_frame(p) for p in paths]


# -- TOMO --------------------------------------------------------------------

def format_tomo(tmap: TomographyMap) -> str:
    g = tmap.grid
    head = [TOMO_MAGIC, f"width {g.width}", f"height {g.height}",
            f"pixel_pitch {_r(g.pixel_pitch)}", f"magnification {_r(g.magnification)}",
            f"columns {TOMO_COLUMNS}", "data"]
    rho = tmap.rho.reshape(-1, 4, 4)
    status = tmap.status.ravel()
    cols = [rho[:, d, d].real for d in range(4)]
    for i, j in _UPPER:
        cols += [rho[:, i, j].real, rho[:, i, j].imag]
    table = np.stack(cols, axis=1).tolist()
    rows = (" ".join(map(repr, vals)) + f" {st}" for vals, st in zip(table, status.tolist()))
    return "\n".join(head) + "\n" + "\n".join(rows) + "\n"


def parse_tomo(text: str, name: str = "TOMO") -> TomographyMap:
    lines = text.splitlines()
    header, start = _read_header(lines, TOMO_MAGIC, name)
    w = _field(header, "width", int, name)
    h = _field(header, "height", int, name)
    pitch = _field(header, "pixel_pitch", float, name)
    mag = _field(header, "magnification", float, name)
    if header.get("columns") != TOMO_COLUMNS:
        raise FormatError(f"{name}: unexpected column layout")
    body = [ln for ln in lines[start:] if ln.strip()]
    if len(body) != w * h:
        raise FormatError(f"{name}: expected {w * h} pixel records, found {len(body)}")
    try:
        table = np.array([ln.split() for ln in body], dtype=float)
    except ValueError:
        raise FormatError(f"{name}: pixel records must hold 17 numbers each") from None
    if table.ndim != 2 or table.shape[1] != 17:
        raise FormatError(f"{name}: pixel records must hold 17 numbers each")
    if not np.all(np.isfinite(table)):
        raise FormatError(f"{name}: non-finite values in pixel records")
    status = table[:, 16]
    if np.any(status != np.round(status)) or np.any((status < 0) | (status >= len(STATUS_NAMES))):
        raise FormatError(f"{name}: invalid status code")
    n = w * h
    rho = np.zeros((n, 4, 4), dtype=complex)
    for d in range(4):
        rho[:, d, d] = table[:, d]
    for k, (i, j) in enumerate(_UPPER):
        z = table[:, 4 + 2 * k] + 1j * table[:, 5 + 2 * k]
        rho[:, i, j] = z
        rho[:, j, i] = z.conj()
    try:
        grid = GridGeometry(w, h, pitch, mag)
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from None
    return TomographyMap(grid, rho.reshape(h, w, 4, 4), np.full((h, w), np.nan),
                         np.zeros((h, w), dtype=np.int32), np.full((h, w), np.nan),
                         status.astype(np.int8).reshape(h, w))


def write_tomo(path, tmap: TomographyMap) -> None:
    _write_text(path, format_tomo(tmap))


def read_tomo(path) -> TomographyMap:
    return parse_tomo(Path(path).read_text(encoding="ascii"), str(path))


# -- CSV ---------------------------------------------------------------------

def format_csv(values: np.ndarray, grid: GridGeometry, quantity: str) -> str:
    v = np.asarray(values)
    if v.shape != grid.shape:
        raise ValueError(f"values shape {v.shape} does not match grid {grid.shape}")
    if any(c in quantity for c in ",\n="):
        raise ValueError(f"quantity name {quantity!r} may not contain ',', '=' or newlines")
    fmt = str if np.issubdtype(v.dtype, np.integer) else repr
    head = (f"# width={grid.width},height={grid.height},"
            f"pixel_pitch={_r(grid.pixel_pitch)},quantity={quantity}")
    rows = (",".join(map(fmt, row)) for row in v.tolist())
    return head + "\n" + "\n".join(rows) + "\n"


def parse_csv(text: str, name: str = "CSV") -> tuple[np.ndarray, GridGeometry, str]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise FormatError(f"{name}: missing '# width=...' header")
    meta = {}
    for item in lines[0][2:].split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise FormatError(f"{name}: malformed header item {item!r}")
        meta[key.strip()] = value.strip()
    w = _field(meta, "width", int, name)
    h = _field(meta, "height", int, name)
    pitch = _field(meta, "pixel_pitch", float, name)
    quantity = meta.get("quantity", "")
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != h:
        raise FormatError(f"{name}: expected {h} rows, found {len(rows)}")
    try:
        values = np.array([[float(x) for x in r.split(",")] for r in rows])
    except ValueError:
        raise FormatError(f"{name}: non-numeric value") from None
    if values.shape != (h, w):
        raise FormatError(f"{name}: expected {w} values per row")
    try:
        grid = GridGeometry(w, h, pitch)
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from None
    return values, grid, quantity


def write_csv(path, values: np.ndarray, grid: GridGeometry, quantity: str) -> None:
    _write_text(path, format_csv(values, grid, quantity))


def read_csv(path) -> tuple[np.ndarray, GridGeometry, str]:
    return parse_csv(Path(path).read_text(encoding="ascii"), str(path))


def _write_text(path, text: str) -> None:
    # newline="\n" keeps output byte-identical across platforms
    with open(os.fspath(path), "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
