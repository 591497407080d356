"""Procedural benchmark: primitive shapes with analytic volume and exact mass.

Each sample is a solid-or-hollow primitive (box, cylinder, sphere) with a
material drawn from the vocabulary. The renderer produces a front-facing
orthographic depth map in a fixed world window, so absolute size stays
observable in pixels. Categories are (shape kind, material) pairs; a
configurable fraction is held out of training entirely to form the unseen
test stratum.

Per-kind size ranges are matched in log-volume (mean and spread), so holding
out categories does not shift the per-material mass distribution between
train and test.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInputError
from .geometry import DepthMap
from .materials import MaterialVocab, default_vocab, parse_material
from .rng import Rng, derive_seed

KINDS = ("box", "cylinder", "sphere")

_CAMERA_Z = 1.2  # camera-to-object-center distance, meters

MANIFEST_HEADER = "#massbench-manifest 1"
_DEPTH_MAGIC = b"Df"
_MASK_MAGIC = "M1"


@dataclass(frozen=True)
class ShapeSpec:
    """kind 'box' dims (w, h, d); 'cylinder' dims (r, h); 'sphere' dims (r,)."""

    kind: str
    dims: tuple[float, ...]
    fill_ratio: float = 1.0

    def __post_init__(self):
        expected = {"box": 3, "cylinder": 2, "sphere": 1}
        if self.kind not in expected:
            raise ConfigError(f"unknown shape kind {self.kind!r}")
        if len(self.dims) != expected[self.kind]:
            raise ConfigError(f"{self.kind} needs {expected[self.kind]} dims, got {self.dims}")
        if any(d <= 0 for d in self.dims):
            raise ConfigError(f"shape dims must be positive, got {self.dims}")
        if not (0.0 < self.fill_ratio <= 1.0):
            raise ConfigError(f"fill ratio must lie in (0, 1], got {self.fill_ratio}")


def geometric_volume(spec: ShapeSpec) -> float:
    if spec.kind == "box":
        w, h, d = spec.dims
        return w * h * d
    if spec.kind == "cylinder":
        r, h = spec.dims
        return float(np.pi) * r * r * h
    r, = spec.dims
    return (4.0 / 3.0) * float(np.pi) * r ** 3


def analytic_volume(spec: ShapeSpec) -> float:
    """Mass-bearing volume: geometric volume times the fill ratio."""
    return geometric_volume(spec) * spec.fill_ratio


def bounding_dims(spec: ShapeSpec) -> tuple[float, float, float]:
    """Axis-aligned extents (x, y, z) as seen by the front-facing camera."""
    if spec.kind == "box":
        return spec.dims
    if spec.kind == "cylinder":
        r, h = spec.dims
        return (2 * r, h, 2 * r)
    r, = spec.dims
    return (2 * r, 2 * r, 2 * r)


def silhouette_area(spec: ShapeSpec) -> float:
    """Exact area of the front silhouette, m^2."""
    if spec.kind == "box":
        return spec.dims[0] * spec.dims[1]
    if spec.kind == "cylinder":
        r, h = spec.dims
        return 2 * r * h
    r, = spec.dims
    return float(np.pi) * r * r


def silhouette_fill_factor(spec: ShapeSpec) -> float:
    """Silhouette area over its own bounding-box area (scale free)."""
    bx, by, _ = bounding_dims(spec)
    return silhouette_area(spec) / (bx * by)


def render_depth(spec: ShapeSpec, resolution: int, frame_m: float) -> DepthMap:
    """Front orthographic depth of the shape centered in a fixed world window."""
    if resolution < 16:
        raise ConfigError(f"resolution must be at least 16, got {resolution}")
    fp = frame_m / resolution
    centers = (np.arange(resolution) + 0.5) * fp - frame_m / 2.0
    x = centers[None, :]
    y = centers[:, None]
    if spec.kind == "box":
        w, h, d = spec.dims
        mask = (np.abs(x) <= w / 2) & (np.abs(y) <= h / 2)
        depth = np.full((resolution, resolution), _CAMERA_Z - d / 2.0)
    elif spec.kind == "cylinder":
        r, h = spec.dims
        mask = (np.abs(x) <= r) & (np.abs(y) <= h / 2)
        bulge = np.sqrt(np.maximum(r * r - x * x, 0.0))
        depth = np.broadcast_to(_CAMERA_Z - bulge, (resolution, resolution)).copy()
    else:
        r, = spec.dims
        rho2 = x * x + y * y
        mask = rho2 <= r * r
        depth = _CAMERA_Z - np.sqrt(np.maximum(r * r - rho2, 0.0))
    if int(mask.sum()) < 3:
        raise DegenerateInputError(
            f"{spec.kind} with dims {spec.dims} projects to fewer than 3 pixels"
        )
    depth = np.where(mask, depth, 0.0)
    return DepthMap(depth, mask)


def material_color(material_id: int) -> np.ndarray:
    """Fixed pseudo-color triple per material index (run-seed independent)."""
    rng = Rng(derive_seed("material-color", material_id))
    return rng.uniforms(3, 0.15, 0.85)


_KIND_ONEHOT = {k: np.eye(3)[i] for i, k in enumerate(KINDS)}

APPEARANCE_DIM = 10


def synth_appearance(spec: ShapeSpec, material_id: int, noise_seed: int,
                     sigma: float = 0.1, frame_m: float = 0.8) -> np.ndarray:
    """Noisy photo stand-in: normalized extents, silhouette fill, color, kind."""
    bx, by, bz = bounding_dims(spec)
    base = np.concatenate([
        np.array([bx, by, bz]) / frame_m,
        [silhouette_fill_factor(spec)],
        material_color(material_id),
        _KIND_ONEHOT[spec.kind],
    ])
    if sigma > 0:
        base = base + Rng(noise_seed).normals(base.size, 0.0, sigma)
    return base


@dataclass
class Sample:
    id: str
    shape: ShapeSpec
    material_id: int
    material_text: str
    category: str
    split: str  # train | test_seen | test_unseen
    rho: float
    volume: float  # geometric volume, m^3
    mass: float  # kg; equals fill * volume * rho
    appearance: np.ndarray
    depth: DepthMap | None = None


@dataclass
class GeneratorConfig:
    n_train: int = 2000
    n_test: int = 500
    unseen_fraction: float = 0.25
    resolution: int = 64
    frame_m: float = 0.8
    size_min: float = 0.02
    size_max: float = 0.64
    fill_min: float = 0.3
    appearance_noise: float = 0.1
    scale_jitter: float = 0.0  # log-scale render zoom jitter; off by default

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("need at least one train and one test sample")
        if not (0.0 <= self.unseen_fraction < 1.0):
            raise ConfigError("unseen fraction must lie in [0, 1)")
        if not (0.0 < self.size_min < self.size_max < self.frame_m):
            raise ConfigError("need 0 < size_min < size_max < frame_m")
        if not (0.0 < self.fill_min <= 1.0):
            raise ConfigError("fill_min must lie in (0, 1]")

    @property
    def pixel_m(self) -> float:
        return self.frame_m / self.resolution


@dataclass
class Dataset:
    samples: list[Sample]
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[Sample]:
        if name == "test":
            return [s for s in self.samples if s.split in ("test_seen", "test_unseen")]
        return [s for s in self.samples if s.split == name]


def _draw_shape(rng: Rng, kind: str, cfg: GeneratorConfig) -> ShapeSpec:
    # Per-kind ranges are chosen so ln(volume) has the same mean and spread
    # for every kind: boxes set the target, cylinders and spheres match it.
    ln_lo, ln_hi = np.log(cfg.size_min), np.log(cfg.size_max)
    mu = 0.5 * (ln_lo + ln_hi)
    w = 0.5 * (ln_hi - ln_lo)
    fill = rng.uniform(cfg.fill_min, 1.0)
    if kind == "box":
        dims = tuple(float(np.exp(rng.uniform(ln_lo, ln_hi))) for _ in range(3))
        return ShapeSpec("box", dims, fill)
    if kind == "cylinder":
        half = w * np.sqrt(3.0 / 5.0)
        center = mu - np.log(np.pi) / 3.0
        r = float(np.exp(rng.uniform(center - half, center + half)))
        h = float(np.exp(rng.uniform(center - half, center + half)))
        return ShapeSpec("cylinder", (r, h), fill)
    half = w / np.sqrt(3.0)
    center = mu - np.log(4.0 * np.pi / 3.0) / 3.0
    r = float(np.exp(rng.uniform(center - half, center + half)))
    return ShapeSpec("sphere", (r,), fill)


def _choose_unseen(rng: Rng, categories: list[tuple[str, str]], target: int):
    """Hold out categories while keeping every kind and material seen somewhere."""
    order = list(range(len(categories)))
    rng.shuffle(order)
    unseen: set[int] = set()
    for idx in order:
        if len(unseen) >= target:
            break
        kind, mat = categories[idx]
        remaining = [categories[j] for j in range(len(categories))
                     if j not in unseen and j != idx]
        if any(k == kind for k, _ in remaining) and any(m == mat for _, m in remaining):
            unseen.add(idx)
    if len(unseen) < target:
        raise ConfigError(
            f"cannot hold out {target} categories while keeping every kind and material seen"
        )
    return unseen


def _make_sample(idx: int, seed: int, category_idx: int, categories, split: str,
                 cfg: GeneratorConfig, vocab: MaterialVocab) -> Sample:
    kind, material = categories[category_idx]
    material_id = vocab.id_of(material)
    entry = vocab.entries[material_id]
    rng = Rng(derive_seed(seed, "sample", idx))
    while True:
        spec = _draw_shape(rng, kind, cfg)
        frame = cfg.frame_m
        if cfg.scale_jitter > 0:
            frame = frame * float(np.exp(rng.uniform(-cfg.scale_jitter, cfg.scale_jitter)))
        try:
            depth = render_depth(spec, cfg.resolution, frame)
            break
        except DegenerateInputError:
            continue
    rho = rng.uniform(entry.rho_lo, entry.rho_hi)
    volume = geometric_volume(spec)
    mass = spec.fill_ratio * volume * rho
    sid = f"s{idx:05d}"
    appearance = synth_appearance(spec, material_id, derive_seed(seed, "appearance", idx),
                                  cfg.appearance_noise, cfg.frame_m)
    return Sample(sid, spec, material_id, entry.name, f"{kind}:{material}", split,
                  rho, volume, mass, appearance, depth)


def generate_dataset(cfg: GeneratorConfig, seed: int,
                     vocab: MaterialVocab | None = None) -> Dataset:
    vocab = vocab or default_vocab()
    categories = [(kind, e.name) for kind in KINDS for e in vocab.entries]
    if len(categories) < 2:
        raise ConfigError("need at least 2 categories for a seen/unseen split")
    target = int(round(cfg.unseen_fraction * len(categories)))
    rng = Rng(derive_seed(seed, "splits"))
    unseen = _choose_unseen(rng, categories, target)
    seen = [i for i in range(len(categories)) if i not in unseen]
    if not seen:
        raise ConfigError("hold-out leaves no training categories")

    samples = []
    for i in range(cfg.n_train):
        cat = seen[rng.randint(len(seen))]
        samples.append(_make_sample(i, seed, cat, categories, "train", cfg, vocab))
    for j in range(cfg.n_test):
        cat = rng.randint(len(categories))
        split = "test_unseen" if cat in unseen else "test_seen"
        samples.append(_make_sample(cfg.n_train + j, seed, cat, categories, split, cfg, vocab))

    meta = {
        "seed": seed,
        "n_train": cfg.n_train,
        "n_test": cfg.n_test,
        "unseen_fraction": cfg.unseen_fraction,
        "resolution": cfg.resolution,
        "frame_m": cfg.frame_m,
        "size_min": cfg.size_min,
        "size_max": cfg.size_max,
        "fill_min": cfg.fill_min,
        "appearance_noise": cfg.appearance_noise,
        "scale_jitter": cfg.scale_jitter,
        "pixel_m": cfg.pixel_m,
        "n_unseen_categories": len(unseen),
        "n_categories": len(categories),
    }
    return Dataset(samples, meta)


# ---------------------------------------------------------------------------
# On-disk format: manifest + per-sample depth grid and run-length mask files.
# ---------------------------------------------------------------------------

def write_depth_grid(path, d: DepthMap) -> None:
    """Binary raster: ASCII header line, then row-major little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_DEPTH_MAGIC + f" {d.width} {d.height}\n".encode("ascii"))
        fh.write(d.depth.astype("<f8").tobytes())


def read_depth_grid(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().split()
        if header[0] != _DEPTH_MAGIC:
            raise ValueError(f"not a depth grid file: {path}")
        width, height = int(header[1]), int(header[2])
        data = np.frombuffer(fh.read(width * height * 8), dtype="<f8")
    return data.reshape(height, width).astype(np.float64)


def mask_to_rle_rows(mask: np.ndarray) -> list[str]:
    """Per-row run lengths, alternating off/on and starting with off."""
    rows = []
    for row in mask:
        runs = []
        current, count = False, 0
        for value in row:
            if bool(value) == current:
                count += 1
            else:
                runs.append(count)
                current, count = bool(value), 1
        runs.append(count)
        rows.append(" ".join(str(r) for r in runs))
    return rows


def rle_rows_to_mask(rows: list[str], width: int) -> np.ndarray:
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, line in enumerate(rows):
        pos, value = 0, False
        for run in line.split():
            n = int(run)
            if value:
                mask[i, pos:pos + n] = True
            pos += n
            value = not value
        if pos != width:
            raise ValueError(f"mask row {i} sums to {pos}, expected {width}")
    return mask


def write_mask_rle(path, mask: np.ndarray) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{_MASK_MAGIC} {mask.shape[1]} {mask.shape[0]}\n")
        for line in mask_to_rle_rows(mask):
            fh.write(line + "\n")


def read_mask_rle(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if header[0] != _MASK_MAGIC:
            raise ValueError(f"not a mask file: {path}")
        width, height = int(header[1]), int(header[2])
        rows = [fh.readline().rstrip("\n") for _ in range(height)]
    return rle_rows_to_mask(rows, width)


def _shape_field(spec: ShapeSpec) -> str:
    parts = [spec.kind] + [repr(d) for d in spec.dims] + [repr(spec.fill_ratio)]
    return ";".join(parts)


def _parse_shape_field(text: str) -> ShapeSpec:
    parts = text.split(";")
    return ShapeSpec(parts[0], tuple(float(p) for p in parts[1:-1]), float(parts[-1]))


def write_dataset(ds: Dataset, out_dir) -> str:
    """Write manifest plus depth/mask files; returns the manifest path."""
    os.makedirs(os.path.join(out_dir, "depth"), exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.txt")
    with open(manifest_path, "w", newline="\n") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        for key in sorted(ds.meta):
            fh.write(f"#meta {key}={ds.meta[key]!r}\n")
        for s in ds.samples:
            depth_rel = f"depth/{s.id}.df"
            if s.depth is not None:
                write_depth_grid(os.path.join(out_dir, depth_rel), s.depth)
                write_mask_rle(os.path.join(out_dir, f"depth/{s.id}.rle"), s.depth.mask)
            appearance = ";".join(repr(float(a)) for a in s.appearance)
            fields = [s.id, s.split, s.category, _shape_field(s.shape), s.material_text,
                      repr(s.rho), repr(s.volume), repr(s.mass), depth_rel, appearance]
            fh.write("|".join(fields) + "\n")
    return manifest_path


def _load_depth_field(field_text: str, base_dir) -> DepthMap | None:
    if field_text == "-":
        return None
    if field_text.startswith("flat:"):
        # flat:<w>x<h>:v,v,...  zero-valued pixels are background
        _, dims, values = field_text.split(":", 2)
        width, height = (int(x) for x in dims.split("x"))
        depth = np.array([float(v) for v in values.split(",")],
                         dtype=np.float64).reshape(height, width)
        return DepthMap(depth, depth > 0)
    depth = read_depth_grid(os.path.join(base_dir, field_text))
    mask = read_mask_rle(os.path.join(base_dir, field_text[:-3] + ".rle"))
    return DepthMap(depth, mask)


def _parse_meta_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text.strip("'\"")


def load_dataset(data_dir) -> Dataset:
    manifest_path = os.path.join(data_dir, "manifest.txt")
    samples: list[Sample] = []
    meta: dict = {}
    vocab = default_vocab()
    with open(manifest_path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != MANIFEST_HEADER:
            raise ValueError(f"unrecognized manifest header: {first!r}")
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#meta "):
                key, value = line[len("#meta "):].split("=", 1)
                meta[key] = _parse_meta_value(value)
                continue
            if line.startswith("#"):
                continue
            f = line.split("|")
            if len(f) != 10:
                raise ValueError(f"manifest record has {len(f)} fields, expected 10")
            shape = _parse_shape_field(f[3])
            material_text = f[4]
            material_id = parse_material(material_text, vocab)
            appearance = np.array([float(v) for v in f[9].split(";")], dtype=np.float64)
            samples.append(Sample(
                id=f[0], shape=shape, material_id=material_id, material_text=material_text,
                category=f[2], split=f[1],
                rho=float(f[5]) if f[5] != "-" else float("nan"),
                volume=float(f[6]) if f[6] != "-" else float("nan"),
                mass=float(f[7]),
                appearance=appearance,
                depth=_load_depth_field(f[8], data_dir),
            ))
    return Dataset(samples, meta)
