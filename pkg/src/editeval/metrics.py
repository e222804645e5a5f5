"""Region-specific consistency metrics and their registry.

Every metric is registered under a stable id with a fixed orientation
(higher-is-better for the similarity family, lower-is-better for the distance
family). All operations are pure; neural features (patch embeddings, face
identity vectors, depth maps, LPIPS scalars) arrive ready-made in bundles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d, correlate1d
from scipy.optimize import linear_sum_assignment, linprog

from .datamodel import EmbeddingSet, FaceRecord, FeatureBundle, ImageTensor, Mask, resize_to

HIGHER = "higher"
LOWER = "lower"


class MetricError(ValueError):
    """Raised when metric preconditions fail (dims, masks, missing inputs)."""


@dataclass(frozen=True)
class MetricInfo:
    metric_id: str
    orientation: str
    regions: tuple[str, ...]
    summary: str


METRIC_REGISTRY: dict[str, MetricInfo] = {
    info.metric_id: info
    for info in (
        MetricInfo("ssim", HIGHER, ("edit", "non_edit", "global"), "structural similarity on luminance"),
        MetricInfo("l_ssim", HIGHER, ("edit",), "SSIM restricted to the CIELAB lightness channel"),
        MetricInfo("depth_ssim", HIGHER, ("edit",), "SSIM between min-max normalized depth maps"),
        MetricInfo("lpips", LOWER, ("edit", "non_edit"), "perceptual distance, ingested precomputed"),
        MetricInfo("emd", LOWER, ("non_edit",), "exact optimal-transport cost between patch embedding sets"),
        MetricInfo("clip_cls", HIGHER, ("edit",), "cosine similarity of segmented-object CLIP class tokens"),
        MetricInfo("dino_cls", HIGHER, ("edit",), "cosine similarity of segmented-object DINO class tokens"),
        MetricInfo("dino_structure", LOWER, ("edit",), "distance between patch self-similarity matrices"),
        MetricInfo("face_id", HIGHER, ("edit",), "cosine similarity of target-face identity embeddings"),
        MetricInfo("hair_hf", LOWER, ("edit",), "mean difference of high-frequency hair texture maps"),
        MetricInfo("body_appearance", HIGHER, ("edit",), "cosine of mask-averaged body patch embeddings"),
        MetricInfo("bg_face_id", HIGHER, ("non_edit",), "identity preservation of IoU-matched background faces"),
        MetricInfo("max_face_id", HIGHER, ("edit",), "best identity match over all detected output faces"),
    )
}


@dataclass
class MetricValue:
    metric_id: str
    region: str
    value: float
    orientation: str
    flag: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise MetricError(f"{self.metric_id}: non-finite value {self.value}")
        if self.orientation not in (HIGHER, LOWER):
            raise MetricError(f"bad orientation {self.orientation!r}")
        info = METRIC_REGISTRY.get(self.metric_id)
        if info is not None and info.orientation != self.orientation:
            raise MetricError(
                f"{self.metric_id} is registered {info.orientation}-is-better, got {self.orientation}"
            )

    def oriented(self) -> float:
        """Value flipped so that higher is always better."""
        return self.value if self.orientation == HIGHER else -self.value


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise MetricError(f"SSIM window must be odd and >= 3, got {self.window}")
        if self.sigma <= 0:
            raise MetricError(f"SSIM sigma must be positive, got {self.sigma}")


# ---------------------------------------------------------------------------
# SSIM family

def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _ssim_map(a: np.ndarray, b: np.ndarray, p: SsimParams) -> np.ndarray:
    kernel = _gaussian_kernel(p.window, p.sigma)

    def smooth(x):
        return correlate1d(correlate1d(x, kernel, axis=0, mode="reflect"), kernel, axis=1, mode="reflect")

    c1 = (p.k1 * p.dynamic_range) ** 2
    c2 = (p.k2 * p.dynamic_range) ** 2
    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )


def _masked_ssim(a: np.ndarray, b: np.ndarray, mask: Mask | None, p: SsimParams) -> float:
    if a.shape != b.shape:
        raise MetricError(f"SSIM inputs differ in dims: {a.shape} vs {b.shape}")
    smap = _ssim_map(a.astype(np.float64), b.astype(np.float64), p)
    if mask is None:
        return float(smap.mean())
    if mask.bits.shape != a.shape:
        raise MetricError(f"mask dims {mask.bits.shape} do not match image {a.shape}")
    if mask.area < p.window * p.window:
        raise MetricError(
            f"mask holds {mask.area} pixels; SSIM needs at least window^2 = {p.window ** 2}"
        )
    return float(smap[mask.bits].mean())


def _single_channel(img: ImageTensor, what: str) -> np.ndarray:
    if img.channels != 1:
        raise MetricError(f"{what} must be single-channel, got {img.channels} channels")
    return img.data[:, :, 0].astype(np.float64)


def ssim(
    a: ImageTensor, b: ImageTensor, mask: Mask | None = None, params: SsimParams = SsimParams()
) -> MetricValue:
    """Mean Gaussian-windowed SSIM over pixels whose window center lies in the mask."""
    value = _masked_ssim(_single_channel(a, "ssim input"), _single_channel(b, "ssim input"), mask, params)
    return MetricValue("ssim", "global", value, HIGHER)


# sRGB (D65) <-> CIELAB, the standard constants.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_WHITE = np.array([0.95047, 1.0, 1.08883])
_LAB_DELTA = 6.0 / 29.0


def _srgb_linearize(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _srgb_delinearize(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.clip(c, 0, None) ** (1 / 2.4) - 0.055)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_DELTA**3, np.cbrt(t), t / (3 * _LAB_DELTA**2) + 4.0 / 29.0)


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """(..., 3) sRGB in [0,1] to CIELAB (L in [0,100])."""
    xyz = _srgb_linearize(np.asarray(rgb, dtype=np.float64)) @ _RGB_TO_XYZ.T
    fxyz = _lab_f(xyz / _XYZ_WHITE)
    lightness = 116.0 * fxyz[..., 1] - 16.0
    a = 500.0 * (fxyz[..., 0] - fxyz[..., 1])
    b = 200.0 * (fxyz[..., 1] - fxyz[..., 2])
    return np.stack([lightness, a, b], axis=-1)


def lab_to_srgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of srgb_to_lab; out-of-gamut values are clipped to [0,1]."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f > _LAB_DELTA, f**3, 3 * _LAB_DELTA**2 * (f - 4.0 / 29.0)) * _XYZ_WHITE
    rgb = _srgb_delinearize(xyz @ np.linalg.inv(_RGB_TO_XYZ).T)
    return np.clip(rgb, 0.0, 1.0)


def l_channel_ssim(
    a: ImageTensor, b: ImageTensor, mask: Mask | None = None, params: SsimParams = SsimParams()
) -> MetricValue:
    """SSIM on the CIELAB lightness channel only (L/100), ignoring chroma."""
    if a.channels != 3 or b.channels != 3:
        raise MetricError("l_ssim expects 3-channel sRGB inputs")
    la = srgb_to_lab(a.data)[..., 0] / 100.0
    lb = srgb_to_lab(b.data)[..., 0] / 100.0
    value = _masked_ssim(np.clip(la, 0.0, 1.0), np.clip(lb, 0.0, 1.0), mask, params)
    return MetricValue("l_ssim", "edit", value, HIGHER)


def _minmax(depth: np.ndarray) -> np.ndarray:
    lo, hi = depth.min(), depth.max()
    if hi - lo < 1e-12:
        return np.zeros_like(depth)
    return (depth - lo) / (hi - lo)


def depth_ssim(
    a: ImageTensor, b: ImageTensor, mask: Mask | None = None, params: SsimParams = SsimParams()
) -> MetricValue:
    """SSIM between depth maps, each min-max normalized first (depth is scale-ambiguous)."""
    da = _minmax(_single_channel(a, "depth map"))
    db = _minmax(_single_channel(b, "depth map"))
    return MetricValue("depth_ssim", "edit", _masked_ssim(da, db, mask, params), HIGHER)


# ---------------------------------------------------------------------------
# Embedding metrics

def _unit_rows(e: EmbeddingSet) -> np.ndarray:
    v = e.vectors.astype(np.float64)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def patch_emd(a: EmbeddingSet, b: EmbeddingSet) -> MetricValue:
    """Exact earth mover's distance under cosine ground cost with uniform weights.

    Equal-size sets reduce to a minimum-cost assignment; unequal sizes solve
    the transportation LP exactly.
    """
    if a.count == 0 or b.count == 0:
        raise MetricError("patch_emd needs non-empty embedding sets")
    if a.dim != b.dim:
        raise MetricError(f"embedding dims differ: {a.dim} vs {b.dim}")
    if not (a.normalized and b.normalized):
        raise MetricError("patch_emd expects unit-normalized embedding sets")
    cost = 1.0 - _unit_rows(a) @ _unit_rows(b).T
    na, nb = a.count, b.count
    if na == nb:
        rows, cols = linear_sum_assignment(cost)
        value = float(cost[rows, cols].sum() / na)
    else:
        c = cost.ravel()
        n_var = na * nb
        a_eq = np.zeros((na + nb, n_var))
        for i in range(na):
            a_eq[i, i * nb : (i + 1) * nb] = 1.0
        for j in range(nb):
            a_eq[na + j, j::nb] = 1.0
        b_eq = np.concatenate([np.full(na, 1.0 / na), np.full(nb, 1.0 / nb)])
        res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        if not res.success:
            raise MetricError(f"transport LP failed: {res.message}")
        value = float(res.fun)
    return MetricValue("emd", "non_edit", max(0.0, value), LOWER)


def _unit_vector(v: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > 1e-4:
        raise MetricError(f"{what} must be unit-norm, got norm {norm:.6f}")
    return v


def cls_cosine(a: np.ndarray, b: np.ndarray, metric_id: str = "dino_cls") -> MetricValue:
    """Cosine similarity between two unit class-token vectors."""
    va, vb = _unit_vector(a, "cls vector"), _unit_vector(b, "cls vector")
    if va.shape != vb.shape:
        raise MetricError(f"cls vectors differ in dim: {va.shape} vs {vb.shape}")
    value = float(np.clip(va @ vb, -1.0, 1.0))
    return MetricValue(metric_id, "edit", value, HIGHER)


def structure_distance(a: EmbeddingSet, b: EmbeddingSet) -> MetricValue:
    """Frobenius distance between the two patch self-similarity matrices.

    Invariant under any common orthogonal transform of both embedding sets.
    """
    if a.grid is None or b.grid is None or a.grid != b.grid:
        raise MetricError(f"structure distance needs matching patch grids, got {a.grid} vs {b.grid}")
    va, vb = a.vectors.astype(np.float64), b.vectors.astype(np.float64)
    if va.shape != vb.shape:
        raise MetricError("embedding sets differ in shape")
    diff = va @ va.T - vb @ vb.T
    return MetricValue("dino_structure", "edit", float(np.linalg.norm(diff)), LOWER)


# ---------------------------------------------------------------------------
# Hair / body / face metrics

def _masked_blur(img: np.ndarray, mask: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur that ignores pixels outside the mask (normalized convolution)."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()

    def conv(arr):
        out = convolve1d(arr, kernel, axis=0, mode="constant", cval=0.0)
        return convolve1d(out, kernel, axis=1, mode="constant", cval=0.0)

    m = mask.astype(np.float64)
    num = conv(img * m)
    den = conv(m)
    out = np.zeros_like(img)
    good = den > 1e-12
    out[good] = num[good] / den[good]
    return out


def hair_hf_diff(
    crop_a: ImageTensor,
    mask_a: Mask,
    crop_b: ImageTensor,
    mask_b: Mask,
    sigma: float = 2.0,
) -> MetricValue:
    """Mean absolute difference of high-frequency texture inside the hair masks.

    The high-frequency map is the crop minus its mask-aware Gaussian blur, so
    texture outside the mask never bleeds across the hair boundary. The second
    crop and mask are resized to the first crop's dims before comparison.
    """
    if mask_a.area == 0 or mask_b.area == 0:
        raise MetricError("hair masks must be non-empty")
    ia = _single_channel(crop_a, "hair crop")
    ib = _single_channel(crop_b, "hair crop")
    if ib.shape != ia.shape:
        ib = _single_channel(resize_to(crop_b, ia.shape[0], ia.shape[1]), "hair crop")
        mb_float = resize_to(
            ImageTensor(mask_b.bits.astype(np.float32)[:, :, None]), ia.shape[0], ia.shape[1]
        )
        mb = mb_float.data[:, :, 0] >= 0.5
    else:
        mb = mask_b.bits
    ma = mask_a.bits

    both = ma & mb
    if not both.any():
        raise MetricError("hair masks do not intersect after resizing")

    hf_a = (ia - _masked_blur(ia, ma, sigma)) * ma
    hf_b = (ib - _masked_blur(ib, mb, sigma)) * mb
    value = float(np.abs(hf_a - hf_b)[both].mean())
    return MetricValue("hair_hf", "edit", value, LOWER)


def patch_centers_in_mask(grid: tuple[int, int], mask: Mask) -> np.ndarray:
    """Boolean selector over row-major grid patches whose center pixel is masked."""
    gh, gw = grid
    h, w = mask.height, mask.width
    cy = np.minimum((np.floor((np.arange(gh) + 0.5) * h / gh)).astype(int), h - 1)
    cx = np.minimum((np.floor((np.arange(gw) + 0.5) * w / gw)).astype(int), w - 1)
    return mask.bits[np.ix_(cy, cx)].ravel()


def body_appearance(a: EmbeddingSet, mask_a: Mask, b: EmbeddingSet, mask_b: Mask) -> MetricValue:
    """Cosine of the two mask-averaged, renormalized patch-mean embeddings."""
    if a.grid is None or b.grid is None:
        raise MetricError("body appearance needs patch grids on both embedding sets")

    def pooled(e: EmbeddingSet, mask: Mask) -> np.ndarray:
        sel = patch_centers_in_mask(e.grid, mask)
        if not sel.any():
            raise MetricError("no patch centers fall inside the body mask")
        mean = e.vectors.astype(np.float64)[sel].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise MetricError("masked patch mean vanished; cannot normalize")
        return mean / norm

    value = float(np.clip(pooled(a, mask_a) @ pooled(b, mask_b), -1.0, 1.0))
    return MetricValue("body_appearance", "edit", value, HIGHER)


def face_id_cosine(a: FaceRecord, b: FaceRecord) -> MetricValue:
    value = float(np.clip(a.embedding.astype(np.float64) @ b.embedding.astype(np.float64), -1.0, 1.0))
    return MetricValue("face_id", "edit", value, HIGHER)


def box_iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def bg_face_consistency(
    faces_a: list[FaceRecord], faces_b: list[FaceRecord], iou_threshold: float = 0.5
) -> MetricValue:
    """Mean identity similarity over greedily IoU-matched background faces.

    Matching is one-to-one by descending IoU; pairs below the threshold are
    dropped. No matches yields the defined-worst value 0 with an
    ``unmatched`` flag rather than an error.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise MetricError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    candidates = [
        (box_iou(fa.box, fb.box), i, j)
        for i, fa in enumerate(faces_a)
        for j, fb in enumerate(faces_b)
    ]
    candidates = [c for c in candidates if c[0] >= iou_threshold]
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_a: set[int] = set()
    used_b: set[int] = set()
    sims = []
    for iou, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        sims.append(face_id_cosine(faces_a[i], faces_b[j]).value)
    if not sims:
        return MetricValue("bg_face_id", "non_edit", 0.0, HIGHER, flag="unmatched")
    return MetricValue("bg_face_id", "non_edit", float(np.mean(sims)), HIGHER)


def max_match_face_id(reference: FaceRecord, candidates: list[FaceRecord]) -> MetricValue:
    """Best identity similarity between the reference face and any output face."""
    if not candidates:
        return MetricValue("max_face_id", "edit", -1.0, HIGHER, flag="no-face")
    best = max(face_id_cosine(reference, c).value for c in candidates)
    return MetricValue("max_face_id", "edit", best, HIGHER)


def ingest_precomputed(bundle: FeatureBundle, metric_id: str, region: str) -> MetricValue:
    """Wrap a sidecar-computed scalar (keyed ``metric_id/region``) as a MetricValue."""
    info = METRIC_REGISTRY.get(metric_id)
    if info is None:
        raise MetricError(f"unknown metric id {metric_id!r}")
    key = f"{metric_id}/{region}"
    if key not in bundle.precomputed:
        raise MetricError(f"bundle has no precomputed value for {key!r}")
    value = float(bundle.precomputed[key])
    if metric_id == "lpips" and value < 0.0:
        raise MetricError(f"LPIPS must be non-negative, got {value}")
    return MetricValue(metric_id, region, value, info.orientation)
