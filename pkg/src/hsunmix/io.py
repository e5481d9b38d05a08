"""Persistence formats, run configuration and the seed policy.

Cube files carry a one-line JSON header followed by raw
band-interleaved-by-pixel little-endian float32 payload; endmembers
travel as plain CSV; trained network weights as a versioned header
plus layer-major float64 records.  Run configuration is a JSON file
with fixed sections and strict key checking.
"""

from __future__ import annotations

import csv
import json
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AbundanceMatrix, EndmemberMatrix, HyperCube
from .pnp import DenoiserSpec
from .unroll import UnrollLayer, UnrollParams

CUBE_MAGIC = "UMXC"
PARAMS_MAGIC = "UMXP"
FORMAT_VERSION = 1


class CubeFormatError(ValueError):
    """Malformed cube file; ``byte_offset`` locates the problem."""

    def __init__(self, message: str, byte_offset: int = 0):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Cube format
# ---------------------------------------------------------------------------

def write_cube(cube: HyperCube, path) -> None:
    """Write header + float32 BIP payload; row-major pixel order."""
    header = {
        "magic": CUBE_MAGIC,
        "version": FORMAT_VERSION,
        "height": cube.height,
        "width": cube.width,
        "bands": cube.band_count,
        "dtype": "f32le",
        "layout": "bip",
    }
    if cube.wavelengths is not None:
        header["wavelengths"] = [float(w) for w in cube.wavelengths]
    payload = cube.data.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(payload)


def read_cube(path) -> HyperCube:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CubeFormatError("missing header terminator", len(raw))
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CubeFormatError(f"unparseable header: {e}", 0) from e
    if header.get("magic") != CUBE_MAGIC:
        raise CubeFormatError(f"bad magic {header.get('magic')!r}", 0)
    if header.get("version") != FORMAT_VERSION:
        raise CubeFormatError(f"unsupported version {header.get('version')!r}", 0)
    if header.get("dtype") != "f32le" or header.get("layout") != "bip":
        raise CubeFormatError("unsupported dtype/layout", 0)
    try:
        height, width, bands = int(header["height"]), int(header["width"]), int(header["bands"])
    except (KeyError, TypeError, ValueError) as e:
        raise CubeFormatError(f"bad dimensions in header: {e}", 0) from e
    if height < 1 or width < 1 or bands < 1 or height * width * bands > 2**34:
        raise CubeFormatError(f"dimension overflow: {height}x{width}x{bands}", 0)
    start = nl + 1
    expected = height * width * bands * 4
    payload = raw[start:]
    if len(payload) < expected:
        raise CubeFormatError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}",
            start + len(payload),
        )
    if len(payload) > expected:
        raise CubeFormatError(f"trailing bytes after payload", start + expected)
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(height * width, bands)
    wl = header.get("wavelengths")
    return HyperCube(
        data=data,
        height=height,
        width=width,
        wavelengths=np.asarray(wl, dtype=np.float64) if wl is not None else None,
    )


def write_abundance_cube(A: AbundanceMatrix, height: int, width: int, path) -> None:
    """Persist abundance maps in the cube format with bands = R."""
    write_cube(HyperCube(data=A.data.T.copy(), height=height, width=width), path)


def read_abundance_cube(path) -> tuple[AbundanceMatrix, int, int]:
    cube = read_cube(path)
    return AbundanceMatrix(data=cube.data.T.copy()), cube.height, cube.width


# ---------------------------------------------------------------------------
# Endmember CSV
# ---------------------------------------------------------------------------

def write_endmembers(em: EndmemberMatrix, path, header: bool = False) -> None:
    """CSV with one row per band; repr round-trips every float exactly."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        if header:
            w.writerow([f"endmember_{j}" for j in range(em.n_endmembers)])
        for row in em.data:
            w.writerow([repr(float(x)) for x in row])


def read_endmembers(path, header: bool = False, allow_invalid: bool = False) -> EndmemberMatrix:
    rows = []
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        for i, row in enumerate(reader):
            if i == 0 and header:
                continue
            if not row:
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError as e:
                raise ValueError(f"non-numeric cell in row {i}: {e}") from e
    if not rows:
        raise ValueError("empty endmember file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"ragged rows: widths {sorted(widths)}")
    data = np.asarray(rows, dtype=np.float64)
    if np.any(data < 0.0):
        if allow_invalid:
            warnings.warn("endmember file violates nonnegativity; loading anyway")
            em = EndmemberMatrix.__new__(EndmemberMatrix)
            object.__setattr__(em, "data", data)
            object.__setattr__(em, "domain_tag", "reflectance")
            return em
        raise ValueError("negative endmember entry (pass allow_invalid to load anyway)")
    return EndmemberMatrix(data=data)


# ---------------------------------------------------------------------------
# Unrolled-network parameter file
# ---------------------------------------------------------------------------

def write_unroll_params(params: UnrollParams, path) -> None:
    r, l = params.layers[0].W.shape
    header = {
        "magic": PARAMS_MAGIC,
        "version": FORMAT_VERSION,
        "layers": params.depth,
        "rows": r,
        "cols": l,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for lay in params.layers:
            f.write(lay.W.astype("<f8").tobytes())
            f.write(lay.B.astype("<f8").tobytes())
            f.write(np.array([lay.theta, lay.eta], dtype="<f8").tobytes())


def read_unroll_params(path) -> UnrollParams:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError("missing parameter-file header")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("magic") != PARAMS_MAGIC or header.get("version") != FORMAT_VERSION:
        raise ValueError("bad parameter-file magic/version")
    K, r, l = int(header["layers"]), int(header["rows"]), int(header["cols"])
    per_layer = (r * l + r * r + 2) * 8
    payload = raw[nl + 1 :]
    if len(payload) != K * per_layer:
        raise ValueError(f"parameter payload size mismatch: expected {K * per_layer}, got {len(payload)}")
    layers = []
    for k in range(K):
        block = payload[k * per_layer : (k + 1) * per_layer]
        W = np.frombuffer(block[: r * l * 8], dtype="<f8").reshape(r, l).copy()
        B = np.frombuffer(block[r * l * 8 : (r * l + r * r) * 8], dtype="<f8").reshape(r, r).copy()
        theta, eta = np.frombuffer(block[(r * l + r * r) * 8 :], dtype="<f8")
        layers.append(UnrollLayer(W=W, B=B, theta=float(theta), eta=float(eta)))
    return UnrollParams(layers=layers)


# ---------------------------------------------------------------------------
# PGM export (inspection artifact)
# ---------------------------------------------------------------------------

def write_abundance_pgms(A: AbundanceMatrix, height: int, width: int, out_dir, prefix: str = "plane") -> list:
    """One 8-bit grayscale PGM per abundance plane, values clipped to [0, 1]."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for r in range(A.n_endmembers):
        plane = np.clip(A.data[r].reshape(height, width), 0.0, 1.0)
        img = np.round(plane * 255.0).astype(np.uint8)
        p = out_dir / f"{prefix}_{r}.pgm"
        with open(p, "wb") as f:
            f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
            f.write(img.tobytes())
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# Denoiser selection grammar: kind:key=val,key=val
# ---------------------------------------------------------------------------

_DENOISER_KEYS = {
    "identity": set(),
    "soft_threshold": {"lambda"},
    "tv2d": {"lambda", "iters"},
    "gaussian_blur": {"sigma"},
}


def parse_denoiser(text: str) -> DenoiserSpec:
    """Parse strings like ``tv2d:lambda=0.05,iters=30``."""
    text = text.strip()
    kind, _, rest = text.partition(":")
    if kind not in _DENOISER_KEYS:
        raise ConfigError(f"unknown denoiser kind {kind!r}")
    kv = {}
    if rest:
        for item in rest.split(","):
            key, sep, val = item.partition("=")
            if not sep:
                raise ConfigError(f"bad denoiser parameter {item!r} (expected key=val)")
            kv[key.strip()] = val.strip()
    unknown = set(kv) - _DENOISER_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown denoiser parameter(s) {sorted(unknown)} for kind {kind!r}")
    try:
        if kind == "identity":
            return DenoiserSpec(kind="identity")
        if kind == "soft_threshold":
            return DenoiserSpec(kind="soft_threshold", lam=float(kv.get("lambda", 0.0)))
        if kind == "tv2d":
            return DenoiserSpec(
                kind="tv2d", lam=float(kv.get("lambda", 0.0)), inner_iters=int(kv.get("iters", 30))
            )
        return DenoiserSpec(kind="gaussian_blur", sigma_px=float(kv.get("sigma", 1.0)))
    except ValueError as e:
        raise ConfigError(f"bad denoiser parameter value: {e}") from e


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass
class SceneConfig:
    endmembers: int = 3
    bands: int = 50
    height: int = 1
    width: int = 100
    model: str = "lmm"
    seed: int = 0
    snr_db: float = float("inf")
    min_sad_deg: float = 5.0


@dataclass
class SolverConfig:
    rho: float = 1.0
    max_iters: int = 500
    primal_tol: float = 1e-8
    dual_tol: float = 1e-8
    volume_weight: float = 0.0
    sparsity_weight: float = 0.0
    step_shrink: float = 0.5
    rel_obj_tol: float = 1e-9
    nmf_max_iters: int = 500
    mu: float = 0.01
    kernel: str = "gaussian"
    bandwidth: float = 0.0  # 0 -> median heuristic
    degree: int = 2
    offset: float = 1.0
    pnp_rho: float = 1.0
    pnp_max_iters: int = 200
    pnp_primal_tol: float = 1e-6


@dataclass
class UnrollConfig:
    depth: int = 10
    mu: float = 0.1
    rho: float = 1.0
    lam: float = 0.0
    eta: float = 1.0
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    validation_fraction: float = 0.2
    params_file: str = ""


@dataclass
class OutputConfig:
    pgm: bool = True


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    denoiser: str = "identity"
    unroll: UnrollConfig = field(default_factory=UnrollConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


def _fill_section(obj, section: dict, name: str):
    known = set(obj.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section [{name}]")
    for key, val in section.items():
        current = getattr(obj, key)
        try:
            if isinstance(current, bool):
                if not isinstance(val, bool):
                    raise ConfigError(f"{name}.{key} must be a boolean")
                setattr(obj, key, val)
            elif isinstance(current, int):
                setattr(obj, key, int(val))
            elif isinstance(current, float):
                setattr(obj, key, float(val))
            else:
                setattr(obj, key, str(val))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {name}.{key}: {e}") from e


def load_config(path) -> RunConfig:
    """Strict JSON config: unknown sections or keys fail fast."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    known = {"scene", "solver", "denoiser", "unroll", "output"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")
    cfg = RunConfig()
    if "scene" in doc:
        _fill_section(cfg.scene, doc["scene"], "scene")
    if "solver" in doc:
        _fill_section(cfg.solver, doc["solver"], "solver")
    if "denoiser" in doc:
        den = doc["denoiser"]
        if isinstance(den, dict):
            unknown = set(den) - {"spec"}
            if unknown:
                raise ConfigError(f"unknown key(s) {sorted(unknown)} in section [denoiser]")
            cfg.denoiser = str(den.get("spec", "identity"))
        else:
            cfg.denoiser = str(den)
        parse_denoiser(cfg.denoiser)  # fail fast on a bad grammar
    if "unroll" in doc:
        _fill_section(cfg.unroll, doc["unroll"], "unroll")
    if "output" in doc:
        _fill_section(cfg.output, doc["output"], "output")
    return cfg


# ---------------------------------------------------------------------------
# Seed policy
# ---------------------------------------------------------------------------

def derive_seed(master: int, tag: str) -> int:
    """Per-module stream: master seed XOR the CRC32 of the module tag."""
    return (int(master) ^ zlib.crc32(tag.encode("ascii"))) & 0xFFFFFFFF
