"""Readers and writers for label maps, band images and constraint files,
plus a seeded synthetic benchmark generator."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ConstraintSet, DimensionMismatch, Segmentation, close_constraints
from .segmenters import MultiBandImage


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- graymaps

def _pgm_tokens(data: bytes, count: int, start: int = 0):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], start
    while len(tokens) < count:
        m = re.compile(rb"\s*(#[^\n]*\n?)?").match(data, pos)
        pos = m.end()
        if m.group(1):
            continue
        m = re.compile(rb"\S+").match(data, pos)
        if not m:
            raise FormatError("truncated graymap header")
        tokens.append(m.group())
        pos = m.end()
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Return a (height, width) integer array from a P2 or P5 graymap."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _pgm_tokens(data, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed graymap header") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid size {w}x{h} or maxval {maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace byte before raster
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        if len(data) - pos < w * h * np.dtype(dtype).itemsize:
            raise FormatError(f"{path}: truncated raster")
        arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).astype(np.int64)
    elif magic == b"P2":
        body = re.sub(rb"#[^\n]*", b"", data[pos:]).split()
        if len(body) != w * h:
            raise FormatError(f"{path}: expected {w * h} samples, found {len(body)}")
        arr = np.array([int(v) for v in body], dtype=np.int64)
    else:
        raise FormatError(f"{path}: not a P2/P5 graymap (magic {magic!r})")
    if arr.max(initial=0) > maxval:
        raise FormatError(f"{path}: sample exceeds maxval {maxval}")
    return arr.reshape(h, w)


def write_pgm(path, arr, ascii=False, maxval=None):
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise DimensionMismatch("graymap needs a 2-D array")
    if arr.size and (arr.min() < 0 or arr.max() > 65535):
        raise FormatError("graymap samples must lie in 0..65535")
    if maxval is None:
        maxval = 255 if arr.max(initial=0) <= 255 else 65535
    h, w = arr.shape
    header = f"{'P2' if ascii else 'P5'}\n{w} {h}\n{maxval}\n".encode()
    if ascii:
        body = "\n".join(" ".join(str(int(v)) for v in row) for row in arr).encode() + b"\n"
    else:
        body = arr.astype(">u2" if maxval > 255 else np.uint8).tobytes()
    Path(path).write_bytes(header + body)


# -------------------------------------------------------------- label maps

def _read_csv_grid(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([int(v) for v in line.split(",")])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-integer label") from exc
    if not rows:
        raise FormatError(f"{path}: empty label grid")
    if len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: inconsistent row lengths")
    return np.array(rows, dtype=np.int64)


def read_label_map(path, mapping_path=None) -> Segmentation:
    """Read a graymap or CSV label map and densify its labels.

    The original value of each dense label is kept in ``source_values``
    and, when ``mapping_path`` is given, written there as ``original dense``
    lines.
    """
    path = Path(path)
    grid = _read_csv_grid(path) if path.suffix.lower() == ".csv" else read_pgm(path)
    if grid.min() < 0:
        raise FormatError(f"{path}: negative label")
    seg = Segmentation.densified(grid, grid.shape[1], grid.shape[0])
    if mapping_path is not None:
        lines = [f"{orig} {dense}" for dense, orig in enumerate(seg.source_values)]
        Path(mapping_path).write_text("\n".join(lines) + "\n")
    return seg


def write_label_map(s: Segmentation, path, ascii=False):
    path = Path(path)
    grid = s.grid()
    if path.suffix.lower() == ".csv":
        path.write_text("\n".join(",".join(str(int(v)) for v in row) for row in grid) + "\n")
        return
    if s.num_labels > 65536:
        raise FormatError(f"{s.num_labels} labels do not fit a 16-bit graymap")
    write_pgm(path, grid, ascii=ascii)


# ------------------------------------------------------------ band images

def read_manifest(path) -> list[Path]:
    path = Path(path)
    entries = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.append(path.parent / line)
    return entries


def read_image(manifest) -> MultiBandImage:
    """Load the per-band graymaps listed in a manifest, in order."""
    paths = read_manifest(manifest)
    if not paths:
        raise FormatError(f"{manifest}: manifest lists no bands")
    bands = [read_pgm(p) for p in paths]
    if len({b.shape for b in bands}) != 1:
        raise DimensionMismatch(f"{manifest}: bands differ in size")
    return MultiBandImage(np.stack(bands).astype(float), tuple(p.stem for p in paths))


def write_image(img: MultiBandImage, directory, stem="band") -> Path:
    """Write bands as 16-bit graymaps (rounded, clipped) plus ``manifest.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for j, band in enumerate(img.bands):
        name = f"{stem}{j:02d}.pgm"
        write_pgm(directory / name, np.clip(np.rint(band), 0, 65535).astype(np.int64), maxval=65535)
        names.append(name)
    manifest = directory / "manifest.txt"
    manifest.write_text("# band order\n" + "\n".join(names) + "\n")
    return manifest


# ------------------------------------------------------------ constraints

def read_constraints(path) -> ConstraintSet:
    ml, cl = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0].upper() not in ("ML", "CL"):
            raise FormatError(f"{path}:{lineno}: expected 'ML m l' or 'CL m l'")
        try:
            m, l = int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: pixel indices must be integers") from exc
        if m < 0 or l < 0 or m == l:
            raise FormatError(f"{path}:{lineno}: invalid pair ({m}, {l})")
        (ml if parts[0].upper() == "ML" else cl).append((m, l))
    return close_constraints(ConstraintSet.from_pairs(ml, cl))


def write_constraints(cons: ConstraintSet, path):
    lines = [f"ML {m} {l}" for m, l in cons.must_link]
    lines += [f"CL {m} {l}" for m, l in cons.cannot_link]
    Path(path).write_text("".join(line + "\n" for line in lines))


def _decode_pairs(idx, n):
    """Map linear indices over the upper triangle (row-major) to (m, l)."""
    idx = np.asarray(idx, dtype=np.int64)
    # rows start at s(m) = m*n - m(m+1)/2
    m = np.floor((2 * n - 1 - np.sqrt((2 * n - 1) ** 2 - 8.0 * idx)) / 2).astype(np.int64)
    start = m * n - m * (m + 1) // 2
    m = np.where(start > idx, m - 1, m)
    start = m * n - m * (m + 1) // 2
    nxt = (m + 1) * n - (m + 1) * (m + 2) // 2
    bump = idx >= nxt
    m = np.where(bump, m + 1, m)
    start = np.where(bump, nxt, start)
    return np.stack([m, idx - start + m + 1], axis=1)


def constraints_from_ground_truth(gt: Segmentation, fraction: float, seed: int = 0) -> ConstraintSet:
    """Sample a fraction of all pixel pairs; same label -> must-link, else cannot-link."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    n = gt.n
    total = n * (n - 1) // 2
    if total == 0:
        return ConstraintSet()
    count = max(1, int(round(fraction * total)))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(total, size=count, replace=False))
    pairs = _decode_pairs(idx, n)
    same = gt.labels[pairs[:, 0]] == gt.labels[pairs[:, 1]]
    return ConstraintSet(pairs[same], pairs[~same])


# ---------------------------------------------------------- splits, synth

@dataclass(frozen=True)
class DatasetSplit:
    train: tuple  # (MultiBandImage, Segmentation)
    test: tuple
    split_spec: str


def _cut(img, gt, rows=None, mask=None):
    if mask is not None:
        sub = img.subset(mask=mask)
        return sub, Segmentation.densified(gt.labels[np.ravel(mask)], sub.width, 1)
    sub = img.subset(rows=rows)
    lab = gt.grid()[rows[0]:rows[1]].ravel()
    return sub, Segmentation.densified(lab, sub.width, sub.height)


def split_rows(img: MultiBandImage, gt: Segmentation, train_rows: int) -> DatasetSplit:
    """Rows ``[0, train_rows)`` train, the remaining rows test."""
    if not 0 < train_rows < img.height:
        raise ValueError("train_rows must leave both halves non-empty")
    return DatasetSplit(
        _cut(img, gt, rows=(0, train_rows)),
        _cut(img, gt, rows=(train_rows, img.height)),
        f"rows 0:{train_rows} / {train_rows}:{img.height}",
    )


def split_mask(img: MultiBandImage, gt: Segmentation, train_mask) -> DatasetSplit:
    """Pixels where ``train_mask`` is true train, the rest test (flattened to 1 x n)."""
    mask = np.asarray(train_mask, dtype=bool).reshape(img.height, img.width)
    if mask.all() or not mask.any():
        raise ValueError("mask must select a proper, non-empty subset")
    return DatasetSplit(_cut(img, gt, mask=mask), _cut(img, gt, mask=~mask), "mask")


def generate_synthetic(width: int, height: int, C: int, bands: int, noise_sigma: float,
                       seed: int = 0, spread: float = 1.0, correlation: float = 0.0,
                       sites_per_label: int = 1):
    """Voronoi ground truth with per-band, per-segment constant means plus noise.

    In every band the segment means form a shuffled ladder with a step of
    ``3 * noise_sigma * U(1, 1 + spread)``, so any two segments differ by
    at least ``3 * noise_sigma`` in each band while the band contrast varies.
    ``correlation`` is the share of noise variance common to all bands.
    With ``sites_per_label = m`` every label owns m Voronoi sites, one in
    each of m equal horizontal strips, so a row split into m parts keeps
    every label in every part.
    """
    n = width * height
    if C < 2 or bands < 1:
        raise ValueError("need C >= 2 and at least one band")
    if C > n:
        raise ValueError(f"cannot place {C} segments on {n} pixels")
    if not 0.0 <= correlation <= 1.0:
        raise ValueError("correlation must lie in [0, 1]")
    if sites_per_label < 1 or C * sites_per_label > n or height < sites_per_label:
        raise ValueError(f"cannot place {sites_per_label} sites per label")
    rng = np.random.default_rng(seed)
    if sites_per_label == 1:
        sites = rng.choice(n, size=C, replace=False)
    else:
        edges = np.linspace(0, height, sites_per_label + 1).astype(int)
        strips = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            strips.append(lo * width + rng.choice((hi - lo) * width, size=C, replace=False))
        sites = np.concatenate(strips)
    owner = np.tile(np.arange(C), sites_per_label)
    sy, sx = np.divmod(sites, width)
    yy, xx = np.mgrid[0:height, 0:width]
    d2 = (yy.ravel()[:, None] - sy[None]) ** 2 + (xx.ravel()[:, None] - sx[None]) ** 2
    gt = Segmentation(owner[d2.argmin(axis=1)], width, height, C)

    scale = 3.0 * noise_sigma if noise_sigma > 0 else 1.0
    means = np.empty((bands, C))
    for j in range(bands):
        step = scale * rng.uniform(1.0, 1.0 + spread)
        means[j] = 100.0 + step * rng.permutation(C)
    shared = rng.normal(0.0, 1.0, n)
    out = np.empty((bands, height, width))
    for j in range(bands):
        noise = np.sqrt(correlation) * shared + np.sqrt(1.0 - correlation) * rng.normal(0.0, 1.0, n)
        out[j] = (means[j][gt.labels] + noise_sigma * noise).reshape(height, width)
    return MultiBandImage(out), gt
