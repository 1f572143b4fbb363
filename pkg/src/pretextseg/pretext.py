"""Self-supervised pretext transforms for unlabeled RGB images.

Each transform is a pure function of (image, rng state, parameters) that
turns one image into an (input, target) training pair:

    inpainting:   erase a square, regress the original image
    denoising:    add clipped gaussian noise, regress the original image
    colorization: keep only luminance, classify pixels into a color palette
    jigsaw:       shuffle tiles by a catalogued permutation, classify it
    segmentation: pass a labeled (image, mask) pair through unchanged

Images are float64 arrays shaped [3,H,W] with values in [0,1]; masks and
classification targets are integer arrays.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, StateError

TASKS = ("inpainting", "denoising", "colorization", "jigsaw", "segmentation")
PRETEXT_TASKS = TASKS[:4]


@dataclass
class PretextSample:
    """One (input, target) pair produced by a task transform."""

    task: str
    input: np.ndarray
    target: np.ndarray
    meta: dict = field(default_factory=dict)


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"expected an RGB image shaped [3,H,W], got {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DataError("image values must lie in [0,1]")
    return img


# ---- inpainting -----------------------------------------------------------


def make_inpainting(img, rng, side: int | None = None, fill: float = 0.5) -> PretextSample:
    """Erase one axis-aligned square (neutral gray by default)."""
    img = _check_image(img)
    _, h, w = img.shape
    if side is None:
        side = h // 4
    if side < 1:
        raise ValueError(f"erase square side must be >= 1, got {side}")
    if side > h or side > w:
        raise ValueError(f"image {h}x{w} is smaller than erase square side {side}")
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    corrupted = img.copy()
    corrupted[:, top : top + side, left : left + side] = fill
    return PretextSample(
        task="inpainting",
        input=corrupted,
        target=img.copy(),
        meta={"top": top, "left": left, "side": side, "fill": fill},
    )


# ---- denoising ------------------------------------------------------------


def make_denoising(img, rng, sigma: float = 0.1) -> PretextSample:
    """Add gaussian noise, clipped back into [0,1]."""
    img = _check_image(img)
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    noisy = np.clip(img + rng.normal(0.0, sigma, img.shape), 0.0, 1.0)
    return PretextSample(
        task="denoising", input=noisy, target=img.copy(), meta={"sigma": sigma}
    )


# ---- colorization ---------------------------------------------------------

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luminance(img: np.ndarray) -> np.ndarray:
    """Collapse RGB to a single luminance channel [1,H,W]."""
    return np.tensordot(LUMA_WEIGHTS, img, axes=(0, 0))[None]


@dataclass
class ColorPalette:
    """The most frequent cells of a uniform RGB lattice over a corpus.

    The lattice has ``levels`` bins per channel; a pixel's cell is the
    triple of per-channel bin indices. ``lut`` maps flat cell ids to
    palette classes (-1 where the cell was not kept); pixels in dropped
    cells are assigned the nearest kept cell center.
    """

    levels: int
    centers: np.ndarray  # [K,3] cell centers
    lut: np.ndarray  # [levels**3] int64, kept cell -> class, else -1

    @property
    def size(self) -> int:
        return self.centers.shape[0]


def _cell_ids(img: np.ndarray, levels: int) -> np.ndarray:
    coords = np.minimum((img * levels).astype(np.int64), levels - 1)
    return (coords[0] * levels + coords[1]) * levels + coords[2]


def build_palette(images, nb_bins: int = 16, levels: int | None = None) -> ColorPalette:
    """Histogram corpus pixels over the lattice and keep the top cells."""
    if nb_bins < 1:
        raise ValueError(f"palette needs >= 1 bin, got {nb_bins}")
    if levels is None:
        levels = nb_bins
    counts = np.zeros(levels**3, dtype=np.int64)
    seen = 0
    for img in images:
        img = _check_image(img)
        counts += np.bincount(_cell_ids(img, levels).ravel(), minlength=levels**3)
        seen += 1
    if seen == 0:
        raise DataError("palette corpus is empty")
    order = np.argsort(-counts, kind="stable")
    kept = order[: nb_bins][counts[order[:nb_bins]] > 0]
    lut = np.full(levels**3, -1, dtype=np.int64)
    lut[kept] = np.arange(len(kept))
    coords = np.stack(
        [kept // (levels * levels), (kept // levels) % levels, kept % levels], axis=1
    )
    centers = (coords + 0.5) / levels
    return ColorPalette(levels=levels, centers=centers, lut=lut)


def quantize_colors(img: np.ndarray, palette: ColorPalette) -> np.ndarray:
    """Per-pixel palette class [H,W]; dropped cells go to the nearest center."""
    cells = _cell_ids(img, palette.levels)
    classes = palette.lut[cells]
    missing = classes < 0
    if np.any(missing):
        pixels = img[:, missing].T  # [M,3]
        dists = ((pixels[:, None, :] - palette.centers[None]) ** 2).sum(axis=2)
        classes[missing] = np.argmin(dists, axis=1)
    return classes


def make_colorization(img, palette: ColorPalette | None, rng=None) -> PretextSample:
    """Grayscale input, palette-class target."""
    img = _check_image(img)
    if palette is None:
        raise StateError("color palette has not been built yet")
    return PretextSample(
        task="colorization",
        input=luminance(img),
        target=quantize_colors(img, palette),
        meta={"bins": palette.size},
    )


# ---- jigsaw ---------------------------------------------------------------


@dataclass
class PermutationCatalogue:
    """Fixed set of tile permutations the jigsaw head classifies over."""

    grid: int
    perms: np.ndarray  # [P, grid*grid] int64, perms[0] is the identity

    def __len__(self) -> int:
        return self.perms.shape[0]


def build_catalogue(grid: int, count: int, seed: int = 0) -> PermutationCatalogue:
    """Pick ``count`` diverse permutations by greedy max-min Hamming distance.

    Selection starts from the identity and repeatedly adds the candidate
    farthest (in minimum Hamming distance) from everything already
    chosen. Candidates are enumerated exhaustively up to 9 tiles and
    sampled from a seeded pool beyond that.
    """
    if grid < 1:
        raise ValueError(f"grid must be >= 1, got {grid}")
    tiles = grid * grid
    total = math.factorial(tiles)
    if count < 1:
        raise ValueError(f"catalogue size must be >= 1, got {count}")
    if count > total:
        raise ValueError(f"catalogue size {count} exceeds {tiles}! = {total} permutations")

    if total <= math.factorial(9):
        pool = np.array(list(itertools.permutations(range(tiles))), dtype=np.int64)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, tiles]))
        draws = rng.permuted(
            np.tile(np.arange(tiles, dtype=np.int64), (max(20000, 20 * count), 1)), axis=1
        )
        pool = np.vstack([np.arange(tiles, dtype=np.int64)[None], draws])
        _, first = np.unique(pool, axis=0, return_index=True)
        pool = pool[np.sort(first)]

    selected = [0]
    min_dist = (pool != pool[0]).sum(axis=1)
    min_dist[0] = -1
    while len(selected) < count:
        nxt = int(np.argmax(min_dist))
        if min_dist[nxt] <= 0:
            raise ValueError("candidate pool exhausted before reaching requested count")
        selected.append(nxt)
        min_dist = np.minimum(min_dist, (pool != pool[nxt]).sum(axis=1))
        min_dist[nxt] = -1
    return PermutationCatalogue(grid=grid, perms=pool[selected])


def apply_tile_permutation(img: np.ndarray, grid: int, perm: np.ndarray) -> np.ndarray:
    """Move tile i of the grid to position perm[i]."""
    c, h, w = img.shape
    if h % grid != 0 or w % grid != 0:
        raise ValueError(f"image {h}x{w} is not divisible into a {grid}x{grid} grid")
    perm = np.asarray(perm, dtype=np.int64)
    tiles = grid * grid
    if sorted(perm.tolist()) != list(range(tiles)):
        raise ValueError(f"not a permutation of 0..{tiles - 1}: {perm.tolist()}")
    th, tw = h // grid, w // grid
    cut = img.reshape(c, grid, th, grid, tw).transpose(1, 3, 0, 2, 4).reshape(tiles, c, th, tw)
    placed = np.empty_like(cut)
    placed[perm] = cut
    return (
        placed.reshape(grid, grid, c, th, tw).transpose(2, 0, 3, 1, 4).reshape(c, h, w)
    )


def invert_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0], dtype=perm.dtype)
    return inv


def make_jigsaw(img, catalogue: PermutationCatalogue, rng) -> PretextSample:
    """Shuffle tiles by a random catalogued permutation; the permutation
    itself (tile i -> position target[i]) is the classification target."""
    img = _check_image(img)
    k = int(rng.integers(0, len(catalogue)))
    perm = catalogue.perms[k]
    return PretextSample(
        task="jigsaw",
        input=apply_tile_permutation(img, catalogue.grid, perm),
        target=perm.copy(),
        meta={"perm_index": k, "grid": catalogue.grid},
    )


# ---- segmentation ---------------------------------------------------------


def make_segmentation(img, mask: np.ndarray, nb_classes: int) -> PretextSample:
    """Labeled passthrough pair. No stochastic element."""
    img = _check_image(img)
    mask = np.asarray(mask)
    if not np.issubdtype(mask.dtype, np.integer):
        raise DataError(f"segmentation mask must be integer, got dtype {mask.dtype}")
    if mask.shape != img.shape[1:]:
        raise DataError(f"mask shape {mask.shape} does not match image {img.shape[1:]}")
    if mask.min() < 0 or mask.max() >= nb_classes:
        raise DataError(
            f"mask labels must lie in 0..{nb_classes - 1}, got range "
            f"[{mask.min()}, {mask.max()}]"
        )
    return PretextSample(
        task="segmentation", input=img.copy(), target=mask.astype(np.int64), meta={}
    )


# ---- shared parameter bundle ----------------------------------------------


@dataclass
class PretextParams:
    """Per-task knobs plus the derived state (palette, catalogue)."""

    inpaint_side: int | None = None
    inpaint_fill: float = 0.5
    noise_sigma: float = 0.1
    color_bins: int = 16
    jigsaw_grid: int = 3
    jigsaw_count: int = 64
    palette: ColorPalette | None = None
    catalogue: PermutationCatalogue | None = None

    def ensure_catalogue(self, seed: int = 0) -> PermutationCatalogue:
        if self.catalogue is None:
            self.catalogue = build_catalogue(self.jigsaw_grid, self.jigsaw_count, seed)
        return self.catalogue


def make_sample(task: str, img: np.ndarray, params: PretextParams, rng) -> PretextSample:
    """Dispatch one unlabeled image through the named pretext task."""
    if task == "inpainting":
        return make_inpainting(img, rng, side=params.inpaint_side, fill=params.inpaint_fill)
    if task == "denoising":
        return make_denoising(img, rng, sigma=params.noise_sigma)
    if task == "colorization":
        return make_colorization(img, params.palette, rng)
    if task == "jigsaw":
        return make_jigsaw(img, params.ensure_catalogue(), rng)
    raise ValueError(f"unknown pretext task {task!r}")
