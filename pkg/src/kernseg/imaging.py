"""Images, masks, PGM files, synthetic tumor phantoms and pixel sampling.

Images are 2-D ``uint8`` arrays indexed ``[row, col]``; masks are 2-D ``bool``
arrays of the same shape where True marks tumor.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

from .errors import DomainError, ParseError

_WHITESPACE = b" \t\n\r\v\f"


def as_image(image) -> np.ndarray:
    a = np.asarray(image)
    if a.ndim != 2 or a.size == 0:
        raise DomainError(f"image must be a nonempty 2-D array, got shape {a.shape}")
    if a.dtype != np.uint8:
        if not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() > 255:
            raise DomainError("image intensities must be integers in 0..255")
        a = a.astype(np.uint8)
    return a


def as_mask(mask, shape=None) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DomainError(f"mask must be 2-D, got shape {m.shape}")
    if m.dtype != bool:
        if not np.all((m == 0) | (m == 1)):
            raise DomainError("mask labels must be binary")
        m = m.astype(bool)
    if shape is not None and m.shape != tuple(shape):
        raise DomainError(f"mask shape {m.shape} does not match image shape {tuple(shape)}")
    return m


# ---------------------------------------------------------------- PGM files

class _HeaderReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def skip_space(self):
        data = self.data
        while self.pos < len(data):
            c = data[self.pos:self.pos + 1]
            if c == b"#":
                end = data.find(b"\n", self.pos)
                self.pos = len(data) if end < 0 else end + 1
            elif c in _WHITESPACE:
                self.pos += 1
            else:
                break

    def integer(self, what: str) -> int:
        self.skip_space()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos:self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            raise ParseError(f"expected {what}", start)
        return int(self.data[start:self.pos])


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a binary (P5) PGM with maxval 255."""
    if data[:2] != b"P5":
        raise ParseError("not a binary PGM (magic number P5 expected)", 0)
    hdr = _HeaderReader(data)
    hdr.pos = 2
    if hdr.pos >= len(data) or data[hdr.pos:hdr.pos + 1] not in _WHITESPACE:
        raise ParseError("missing whitespace after magic number", hdr.pos)
    width = hdr.integer("width")
    height = hdr.integer("height")
    hdr.skip_space()
    maxval_at = hdr.pos
    maxval = hdr.integer("maxval")
    if width <= 0 or height <= 0:
        raise ParseError(f"bad dimensions {width}x{height}", maxval_at)
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval} (only 255)", maxval_at)
    if hdr.pos >= len(data) or data[hdr.pos:hdr.pos + 1] not in _WHITESPACE:
        raise ParseError("missing whitespace before pixel data", hdr.pos)
    start = hdr.pos + 1
    n = width * height
    if len(data) - start < n:
        raise ParseError(f"truncated pixel data: {len(data) - start} of {n} bytes", len(data))
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=start).reshape(height, width).copy()


def encode_pgm(image) -> bytes:
    img = as_image(image)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def write_pgm(image, path) -> None:
    Path(path).write_bytes(encode_pgm(image))


def read_mask(path) -> np.ndarray:
    """Read a mask PGM. Pixels must be exactly 0 or 255."""
    raw = read_pgm(path)
    bad = (raw != 0) & (raw != 255)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DomainError(f"{path}: mask value {raw[r, c]} at ({r}, {c}) is not 0 or 255")
    return raw == 255


def write_mask(mask, path) -> None:
    m = as_mask(mask)
    write_pgm(np.where(m, 255, 0).astype(np.uint8), path)


# ----------------------------------------------------------------- phantoms

@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, intensity bands and noise of one synthetic tumor slice.

    Bands are inclusive ``(low, high)`` intensity ranges. Within each region the
    clean intensity follows a smooth random field (Gaussian-filtered white
    noise with width ``texture_scale``) rank-mapped onto the region's band, so
    every phantom spans its bands uniformly; Gaussian noise is added on top.
    Brain tissue is split into an outer and an inner compartment using the
    lower and upper halves of ``tissue_band``. The tumor outline is an ellipse
    whose radius is modulated by a seeded sum of harmonics; the dark core is
    the same outline shrunk by ``core_fraction``. ``vessels`` thin curvilinear
    structures with intensities in ``vessel_band`` (bright, but below the ring
    band) wander through the brain away from the tumor; they are not tumor.
    """

    seed: int = 0
    shape: tuple[int, int] = (256, 256)
    brain_center: tuple[float, float] = (128.0, 128.0)
    brain_axes: tuple[float, float] = (110.0, 92.0)
    tumor_center: tuple[float, float] = (110.0, 150.0)
    tumor_radii: tuple[float, float] = (30.0, 24.0)
    jaggedness: float = 0.08
    harmonics: int = 8
    core_fraction: float = 0.5
    ring_band: tuple[float, float] = (190.0, 230.0)
    core_band: tuple[float, float] = (10.0, 40.0)
    tissue_band: tuple[float, float] = (60.0, 110.0)
    background_band: tuple[float, float] = (0.0, 8.0)
    band_margin: float = 20.0
    noise_sigma: float = 6.0
    texture_scale: float = 6.0
    vessels: int = 4
    vessel_band: tuple[float, float] = (160.0, 185.0)
    vessel_width: float = 2.5
    vessel_length: int = 60

    def __post_init__(self):
        for name in ("ring_band", "core_band", "tissue_band", "background_band", "vessel_band"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi <= 255):
                raise DomainError(f"{name} {lo, hi} must satisfy 0 <= low <= high <= 255")
        for name in ("ring_band", "core_band"):
            if _band_gap(getattr(self, name), self.tissue_band) < self.band_margin:
                raise DomainError(f"{name} is closer than {self.band_margin} to tissue_band")
        if min(self.shape) <= 0:
            raise DomainError(f"bad shape {self.shape}")
        if min(self.tumor_radii) <= 0 or min(self.brain_axes) <= 0:
            raise DomainError("radii and axes must be positive")
        if not 0 < self.core_fraction < 1:
            raise DomainError("core_fraction must lie in (0, 1)")
        if not (0 <= self.jaggedness < 0.5):
            raise DomainError("jaggedness must lie in [0, 0.5)")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be nonnegative")
        if self.texture_scale <= 0:
            raise DomainError("texture_scale must be positive")
        if self.vessels < 0 or self.vessel_width <= 0 or self.vessel_length < 1:
            raise DomainError("vessel count, width and length must be positive")
        if self.vessels and min(_band_gap(self.vessel_band, self.ring_band),
                                _band_gap(self.vessel_band, self.core_band)) <= 0:
            raise DomainError("vessel_band overlaps a tumor band")


def _band_gap(a, b) -> float:
    return max(a[0] - b[1], b[0] - a[1])


def _ellipse_radius(theta, ry, rx):
    return ry * rx / np.sqrt((rx * np.sin(theta)) ** 2 + (ry * np.cos(theta)) ** 2)


def _vessels(spec, rng, brain, tumor, rows, cols) -> np.ndarray:
    """Random smooth curves inside the brain that keep clear of the tumor."""
    out = np.zeros(spec.shape, dtype=bool)
    if spec.vessels == 0:
        return out
    # keep a gap of a few pixels so vessels never touch the tumor outline
    clearance = distance_transform_edt(~tumor) > spec.vessel_width + 4
    allowed = brain & clearance
    starts = np.argwhere(allowed)
    half = 0.5 * spec.vessel_width
    for _ in range(spec.vessels):
        r, c = starts[rng.integers(len(starts))].astype(np.float64)
        heading = rng.uniform(0, 2 * np.pi)
        for _ in range(spec.vessel_length):
            heading += rng.normal(scale=0.25)
            nr, nc = r + np.sin(heading), c + np.cos(heading)
            ir, ic = int(round(nr)), int(round(nc))
            if not (0 <= ir < spec.shape[0] and 0 <= ic < spec.shape[1]) or not allowed[ir, ic]:
                heading += np.pi / 2
                continue
            r, c = nr, nc
            win = (slice(max(int(r - half - 1), 0), int(r + half + 2)),
                   slice(max(int(c - half - 1), 0), int(c + half + 2)))
            out[win] |= (rows[win] - r) ** 2 + (cols[win] - c) ** 2 <= half * half
    return out & allowed


def gen_phantom(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render a phantom image and its tumor mask (ring plus core)."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.shape
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)

    by, bx = spec.brain_center
    ay, ax = spec.brain_axes
    brain_r = ((rows - by) / ay) ** 2 + ((cols - bx) / ax) ** 2
    brain = brain_r <= 1.0
    inner = brain_r <= 0.45

    ty, tx = spec.tumor_center
    dy, dx = rows - ty, cols - tx
    theta = np.arctan2(dy, dx)
    dist = np.hypot(dy, dx)
    k = np.arange(3, 3 + spec.harmonics)
    amps = spec.jaggedness * rng.uniform(0.3, 1.0, size=k.size) / np.sqrt(k.size)
    phases = rng.uniform(0, 2 * np.pi, size=k.size)
    wobble = 1.0 + (amps[:, None, None] * np.cos(k[:, None, None] * theta + phases[:, None, None])).sum(0)
    outline = _ellipse_radius(theta, *spec.tumor_radii) * wobble
    tumor = dist <= outline
    core = dist <= spec.core_fraction * outline
    if np.any(tumor & ~brain):
        raise DomainError("tumor extends outside the brain")

    vessel = _vessels(spec, rng, brain, tumor, rows, cols)

    t_lo, t_hi = spec.tissue_band
    t_mid = 0.5 * (t_lo + t_hi)
    field = gaussian_filter(rng.standard_normal(spec.shape), spec.texture_scale, mode="reflect")
    clean = np.empty(spec.shape)
    regions = [
        (~brain, spec.background_band),
        (brain & ~inner & ~tumor & ~vessel, (t_lo, t_mid)),
        (inner & ~tumor & ~vessel, (t_mid, t_hi)),
        (vessel, spec.vessel_band),
        (tumor & ~core, spec.ring_band),
        (core, spec.core_band),
    ]
    for region, (lo, hi) in regions:
        if not region.any():
            continue
        vals = field[region]
        u = (np.argsort(np.argsort(vals, kind="stable"), kind="stable") + 0.5) / max(vals.size, 1)
        clean[region] = lo + (hi - lo) * u

    noisy = clean + spec.noise_sigma * rng.standard_normal(spec.shape)
    image = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    return image, tumor


def tumor_area(spec: PhantomSpec) -> float:
    """Area of the unperturbed tumor ellipse."""
    return math.pi * spec.tumor_radii[0] * spec.tumor_radii[1]


def phantom_series(n: int, seed: int, base: PhantomSpec = PhantomSpec(), center_jitter: float = 16.0,
                   radius_range: tuple[float, float] = (20.0, 32.0)) -> list[PhantomSpec]:
    """Specs for ``n`` phantoms sharing anatomy with jittered tumor position and size."""
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(n):
        cy, cx = base.tumor_center
        specs.append(replace(
            base,
            seed=int(rng.integers(2**31)),
            tumor_center=(float(cy + rng.uniform(-center_jitter, center_jitter)),
                          float(cx + rng.uniform(-center_jitter, center_jitter))),
            tumor_radii=(float(rng.uniform(*radius_range)), float(rng.uniform(*radius_range))),
        ))
    return specs


# ----------------------------------------------------------- corpus/sampling

@dataclass(frozen=True)
class TrainingCorpus:
    images: tuple
    masks: tuple
    sample_budget: int = 15000

    def __post_init__(self):
        images = tuple(as_image(im) for im in self.images)
        if len(images) != len(self.masks):
            raise DomainError(f"{len(images)} images but {len(self.masks)} masks")
        if not images:
            raise DomainError("empty corpus")
        masks = tuple(as_mask(m, im.shape) for im, m in zip(images, self.masks))
        if self.sample_budget < 0:
            raise DomainError("sample_budget must be nonnegative")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "masks", masks)

    def __len__(self):
        return len(self.images)

    def class_sizes(self) -> tuple[int, int]:
        """(tumor, non-tumor) pixel counts over the corpus."""
        tumor = sum(int(m.sum()) for m in self.masks)
        return tumor, sum(m.size for m in self.masks) - tumor


@dataclass(frozen=True)
class PixelSample:
    """Struct-of-arrays pixel list. Labels are +1 (tumor) / -1."""

    intensities: np.ndarray
    locations: np.ndarray
    labels: np.ndarray
    image_index: np.ndarray
    clamped: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return self.labels.size

    def subset(self, keep) -> "PixelSample":
        return PixelSample(self.intensities[keep], self.locations[keep], self.labels[keep],
                           self.image_index[keep], self.clamped)


def _class_indices(corpus: TrainingCorpus, tumor: bool) -> tuple[np.ndarray, np.ndarray]:
    img_idx, flat_idx = [], []
    for i, m in enumerate(corpus.masks):
        sel = np.flatnonzero(m.ravel() == tumor)
        img_idx.append(np.full(sel.size, i, dtype=np.int64))
        flat_idx.append(sel)
    return np.concatenate(img_idx), np.concatenate(flat_idx)


def sample_pixels(corpus: TrainingCorpus, per_class_budget: int, seed: int) -> PixelSample:
    """Draw up to ``per_class_budget`` pixels of each class uniformly without replacement.

    Tumor pixels come first, then non-tumor pixels; within a class the order is
    (image, raster position). A budget larger than a class is clamped to the
    class size with a warning and recorded in ``clamped``.
    """
    if per_class_budget < 0:
        raise DomainError("budget must be nonnegative")
    tumor_n, normal_n = corpus.class_sizes()
    if tumor_n == 0 or normal_n == 0:
        raise DomainError("corpus must contain both tumor and non-tumor pixels")
    rng = np.random.default_rng(seed)
    parts, clamped = [], {}
    for label, is_tumor in ((1, True), (-1, False)):
        img_idx, flat_idx = _class_indices(corpus, is_tumor)
        take = per_class_budget
        if take > img_idx.size:
            clamped[label] = img_idx.size
            warnings.warn(f"budget {per_class_budget} exceeds class {label:+d} population "
                          f"{img_idx.size}; using all of it", stacklevel=2)
            take = img_idx.size
        chosen = np.sort(rng.choice(img_idx.size, size=take, replace=False))
        parts.append((label, img_idx[chosen], flat_idx[chosen]))

    intens, locs, labels, owners = [], [], [], []
    for label, ii, ff in parts:
        for i in np.unique(ii):
            sel = ff[ii == i]
            img = corpus.images[i]
            r, c = np.divmod(sel, img.shape[1])
            intens.append(img.ravel()[sel])
            locs.append(np.column_stack([r, c]))
            labels.append(np.full(sel.size, label, dtype=np.int8))
            owners.append(np.full(sel.size, i, dtype=np.int64))
    if not intens:
        empty = np.zeros(0)
        return PixelSample(empty.astype(np.uint8), np.zeros((0, 2), dtype=np.int64),
                           empty.astype(np.int8), empty.astype(np.int64), clamped)
    return PixelSample(np.concatenate(intens), np.concatenate(locs).astype(np.int64),
                       np.concatenate(labels), np.concatenate(owners), clamped)


# ----------------------------------------------------------------- manifest

def read_manifest(path) -> list[dict]:
    """One JSON object per line with image_path, mask_path and split.

    Relative paths are resolved against the manifest's directory.
    """
    base = Path(path).parent
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DomainError(f"{path}:{lineno}: {exc}") from None
            missing = {"image_path", "mask_path", "split"} - set(rec)
            if missing:
                raise DomainError(f"{path}:{lineno}: missing {sorted(missing)}")
            entries.append({
                "image_path": str(base / rec["image_path"]),
                "mask_path": str(base / rec["mask_path"]),
                "split": str(rec["split"]),
            })
    return entries


def write_manifest(path, entries) -> None:
    base = Path(path).parent
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            rec = {
                "image_path": os.path.relpath(e["image_path"], base),
                "mask_path": os.path.relpath(e["mask_path"], base),
                "split": e["split"],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_split(path, split: str) -> tuple[list[np.ndarray], list[np.ndarray]]:
    entries = [e for e in read_manifest(path) if e["split"] == split]
    if not entries:
        raise DomainError(f"manifest {path} has no entries with split {split!r}")
    images = [read_pgm(e["image_path"]) for e in entries]
    masks = [read_mask(e["mask_path"]) for e in entries]
    return images, masks
