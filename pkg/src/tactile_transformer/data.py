"""Tactile datasets: on-disk format, controllable synthetic tasks, normalization.

Disk format
-----------
One sample per file: raw little-endian float32, C-order, laid out
(devices, frames, rows, cols). The manifest is UTF-8 text, one record per
line as ``relative_path,label_name,split``; lines starting with ``#`` are
directives or comments. Directives carry what a raw array cannot:

    #shape: C T H W
    #rate: 15.0
    #classes: walk,stand,jump

``#shape`` is required, ``#rate`` defaults to 15 Hz, ``#classes`` fixes the
label-id order (otherwise labels are sorted).

Synthetic tasks
---------------
Samples are a deterministic class template plus iid Gaussian sensor noise.
Templates are built from a small Gaussian blob stamped per frame:

* ``spatial-pair``: every class moves its blob around the same small loop
  with the same amplitude envelope, but around a class-specific center. At
  zero noise the per-frame spatial mean is identical across classes; only
  *where* energy sits distinguishes them.
* ``temporal-pair``: the blob rests at one of ``n_segments`` shared sites for
  ``segment_frames`` frames at a time; classes differ only in the *order*
  the sites are visited. Segment order is a permutation, so time-averaged
  heatmaps are identical across classes, and with ``segment_frames`` equal
  to the tokenizer frame depth the multiset of (tubelet content, spatial
  patch) pairs is also identical — only window identity separates classes.
* ``mixed``: the ablation task. The first ceil(M/2) classes form a spatial
  pair: small-kernel loop blobs at the *same row* of the left half,
  differing only in column, so separating them takes fine spatial identity
  rather than coarse top/bottom cues. The remaining classes form a temporal
  pair: one fixed right-half site whose amplitude follows a per-window
  ladder, rising for one class and falling for the other. Ladder classes
  get multiplicative per-sample scale jitter (``scale_jitter``), so no
  single window's absolute energy separates them; the reliable discriminant
  is the energy ratio between windows, which is scale-invariant.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

SPLIT_NAMES = ("train", "validation", "test")


class DatasetError(ValueError):
    pass


@dataclass
class TactileTensor:
    """One 4-D block of sensor readings: devices x frames x rows x cols."""

    values: np.ndarray
    sample_rate_hz: float = 15.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 4:
            raise DatasetError(f"tactile tensor must be 4-D, got shape {self.values.shape}")
        if min(self.values.shape) < 1:
            raise DatasetError(f"all dimensions must be >= 1, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DatasetError("tactile tensor contains non-finite values")
        if self.sample_rate_hz <= 0:
            raise DatasetError(f"sample rate must be positive, got {self.sample_rate_hz}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass
class LabeledSample:
    tensor: TactileTensor
    label: int


@dataclass
class DatasetSplit:
    train: list[LabeledSample]
    validation: list[LabeledSample]
    test: list[LabeledSample]
    class_names: list[str]

    def __post_init__(self) -> None:
        m = len(self.class_names)
        for name, samples in self.items():
            for s in samples:
                if not (0 <= s.label < m):
                    raise DatasetError(f"label {s.label} out of range for {m} classes in {name}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def items(self) -> list[tuple[str, list[LabeledSample]]]:
        return [("train", self.train), ("validation", self.validation), ("test", self.test)]

    def split(self, name: str) -> list[LabeledSample]:
        if name not in SPLIT_NAMES:
            raise DatasetError(f"unknown split {name!r}")
        return getattr(self, name)

    def fingerprint(self) -> str:
        """sha256 over raw sample bytes, labels and class names (order-sensitive)."""
        h = hashlib.sha256()
        h.update(",".join(self.class_names).encode())
        for name, samples in self.items():
            h.update(name.encode())
            for s in samples:
                h.update(np.int64(s.label).tobytes())
                h.update(np.ascontiguousarray(s.tensor.values).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# synthetic generator

Mode = Literal["spatial-pair", "temporal-pair", "mixed"]

_KERNEL_SIGMA = 1.1
_KERNEL_HALF = 2
_SMALL_KERNEL_SIGMA = 0.7
_SMALL_KERNEL_HALF = 1
_LOOP_RADIUS = 1
_BASE_AMPLITUDE = 2.0
_AMPLITUDE_SWING = 0.5
_LADDER_RATIO = 1.4
_LADDER_BASE = 1.0


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Recipe for a deterministic synthetic dataset.

    ``segment_frames`` sets the granularity of the temporal permutation and
    should match the tokenizer frame depth so that reordering moves whole
    tubelet windows.
    """

    mode: str = "mixed"
    classes: int = 4
    devices: int = 1
    frames: int = 20
    height: int = 16
    width: int = 16
    noise_std: float = 0.05
    train_per_class: int = 50
    val_per_class: int = 20
    test_per_class: int = 40
    seed: int = 0
    segment_frames: int = 5
    scale_jitter: float = 0.25
    sample_rate_hz: float = 15.0

    def __post_init__(self) -> None:
        if self.mode not in ("spatial-pair", "temporal-pair", "mixed"):
            raise DatasetError(f"unknown synthetic mode {self.mode!r}")
        if self.classes < 2:
            raise DatasetError(f"M < 2: need at least two classes, got {self.classes}")
        for name in ("devices", "frames", "height", "width"):
            if getattr(self, name) < 1:
                raise DatasetError(f"nonpositive dimension: {name}={getattr(self, name)}")
        if self.noise_std < 0:
            raise DatasetError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.scale_jitter < 0:
            raise DatasetError(f"scale_jitter must be >= 0, got {self.scale_jitter}")
        if self.seed < 0:
            raise DatasetError(f"seed must be >= 0, got {self.seed}")
        if self.mode in ("temporal-pair", "mixed"):
            if self.frames % self.segment_frames != 0:
                raise DatasetError(
                    f"frames={self.frames} not divisible by segment_frames={self.segment_frames}"
                )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.devices, self.frames, self.height, self.width)


def _blob_kernel(half: int = _KERNEL_HALF, sigma: float = _KERNEL_SIGMA) -> np.ndarray:
    ax = np.arange(-half, half + 1, dtype=np.float64)
    sq = ax[:, None] ** 2 + ax[None, :] ** 2
    return np.exp(-sq / (2.0 * sigma * sigma))


def _stamp(frame: np.ndarray, row: int, col: int, kernel: np.ndarray, amplitude: float) -> None:
    half = kernel.shape[0] // 2
    h, w = frame.shape
    if row - half < 0 or row + half >= h or col - half < 0 or col + half >= w:
        raise DatasetError(
            f"grid too small for synthetic layout: blob at ({row},{col}) clips a {h}x{w} frame"
        )
    frame[row - half : row + half + 1, col - half : col + half + 1] += amplitude * kernel


def _loop_offsets(frames: int) -> list[tuple[int, int]]:
    theta = 2.0 * np.pi * np.arange(frames) / frames
    return [
        (int(np.rint(_LOOP_RADIUS * np.sin(a))), int(np.rint(_LOOP_RADIUS * np.cos(a))))
        for a in theta
    ]


def _amplitude_profile(frames: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(frames) / frames
    return _BASE_AMPLITUDE + _AMPLITUDE_SWING * np.sin(theta)


def _site_lattice(
    n: int,
    height: int,
    width: int,
    margin: int,
    *,
    col_range: tuple[int, int] | None = None,
    what: str = "sites",
) -> list[tuple[int, int]]:
    """Up to `n` well-spread integer positions inside the safe box.

    Column-major enumeration spreads over rows first, which matters when the
    column range is a narrow half-grid band.
    """
    lo_c, hi_c = col_range if col_range is not None else (margin, width - 1 - margin)
    lo_r, hi_r = margin, height - 1 - margin
    if lo_r > hi_r or lo_c > hi_c:
        raise DatasetError(f"grid too small for synthetic layout: {height}x{width}")
    per_axis = max(2, math.isqrt(n) + 1)
    rows = np.unique(np.linspace(lo_r, hi_r, per_axis).round().astype(int))
    cols = np.unique(np.linspace(lo_c, hi_c, per_axis).round().astype(int))
    sites = [(int(r), int(c)) for c in cols for r in rows]
    if len(sites) < n:
        raise DatasetError(f"grid too small for {n} {what} on {height}x{width}")
    return sites[:n]


def _spatial_centers(n: int, height: int, width: int, *, col_range: tuple[int, int] | None = None) -> list[tuple[int, int]]:
    """Deterministic class centers, far enough from edges to never clip."""
    extent = _KERNEL_HALF + _LOOP_RADIUS
    if n == 2 and col_range is None:
        # mirrored left/right pair; keeps each class confined to its half
        left = extent + 1
        right = width - 1 - (extent + 1)
        if left + extent >= width // 2 or right - extent < width // 2:
            raise DatasetError(f"grid too narrow for a left/right pair: width={width}")
        return [(height // 2, left), (height // 2, right)]
    return _site_lattice(n, height, width, extent, col_range=col_range, what="spatial classes")


def _segment_permutations(n_classes: int, n_segments: int) -> list[tuple[int, ...]]:
    identity = tuple(range(n_segments))
    reverse = identity[::-1]
    perms: list[tuple[int, ...]] = [identity]
    if n_classes > 1 and reverse != identity:
        perms.append(reverse)
    for cand in itertools.permutations(range(n_segments)):
        if len(perms) >= n_classes:
            break
        if cand not in perms:
            perms.append(cand)
    if len(perms) < n_classes:
        raise DatasetError(
            f"only {len(perms)} distinct segment orders exist for {n_segments} segments,"
            f" cannot build {n_classes} temporal classes"
        )
    return perms[:n_classes]


def _spatial_template(
    spec: SyntheticTaskSpec, center: tuple[int, int], kernel: np.ndarray | None = None
) -> np.ndarray:
    kernel = _blob_kernel() if kernel is None else kernel
    offsets = _loop_offsets(spec.frames)
    amps = _amplitude_profile(spec.frames)
    frames = np.zeros((spec.frames, spec.height, spec.width))
    for t in range(spec.frames):
        dr, dc = offsets[t]
        _stamp(frames[t], center[0] + dr, center[1] + dc, kernel, amps[t])
    return np.broadcast_to(frames, spec.shape).copy()


def _temporal_template(
    spec: SyntheticTaskSpec, sites: Sequence[tuple[int, int]], order: Sequence[int]
) -> np.ndarray:
    kernel = _blob_kernel()
    sl = spec.segment_frames
    frames = np.zeros((spec.frames, spec.height, spec.width))
    for j, site_idx in enumerate(order):
        row, col = sites[site_idx]
        for t in range(j * sl, (j + 1) * sl):
            _stamp(frames[t], row, col, kernel, _BASE_AMPLITUDE)
    return np.broadcast_to(frames, spec.shape).copy()


def _ladder_template(
    spec: SyntheticTaskSpec, site: tuple[int, int], order: Sequence[int]
) -> np.ndarray:
    """Static blob whose per-window amplitude follows a permuted geometric ladder."""
    kernel = _blob_kernel()
    sl = spec.segment_frames
    n_seg = spec.frames // sl
    ladder = _LADDER_BASE * _LADDER_RATIO ** np.arange(n_seg)
    frames = np.zeros((spec.frames, spec.height, spec.width))
    for j in range(n_seg):
        amp = float(ladder[order[j]])
        for t in range(j * sl, (j + 1) * sl):
            _stamp(frames[t], site[0], site[1], kernel, amp)
    return np.broadcast_to(frames, spec.shape).copy()


@dataclass(frozen=True)
class _ClassRecipe:
    name: str
    template: np.ndarray  # (C, T, H, W)
    scale_jitter: bool = False  # multiplicative per-sample amplitude jitter


def _mixed_spatial_sites(n: int, height: int, width: int) -> list[tuple[int, int]]:
    """Same-row, column-separated centers in the left half (small-kernel extent)."""
    extent = _SMALL_KERNEL_HALF + _LOOP_RADIUS
    lo, hi = extent, width // 2 - 1 - extent
    if hi < lo:
        raise DatasetError(f"grid too narrow for mixed spatial classes: width={width}")
    cols = np.unique(np.linspace(lo, hi, max(2, n)).round().astype(int))
    sites = [(height // 2, int(c)) for c in cols]
    if len(sites) < n:
        # more classes than distinct columns: spread over rows as well
        sites = _site_lattice(n, height, width, extent, col_range=(lo, hi), what="spatial classes")
    return sites[:n]


def _class_templates(spec: SyntheticTaskSpec) -> list[_ClassRecipe]:
    h, w = spec.height, spec.width
    recipes: list[_ClassRecipe] = []
    if spec.mode == "spatial-pair":
        for i, center in enumerate(_spatial_centers(spec.classes, h, w)):
            recipes.append(_ClassRecipe(f"spatial_{i}", _spatial_template(spec, center)))
    elif spec.mode == "temporal-pair":
        n_seg = spec.frames // spec.segment_frames
        if n_seg < 2:
            raise DatasetError("temporal-pair mode needs at least 2 segments")
        sites = _site_lattice(n_seg, h, w, _KERNEL_HALF, what="temporal segment sites")
        for i, order in enumerate(_segment_permutations(spec.classes, n_seg)):
            recipes.append(_ClassRecipe(f"temporal_{i}", _temporal_template(spec, sites, order)))
    else:  # mixed
        n_spatial = (spec.classes + 1) // 2
        n_temporal = spec.classes - n_spatial
        small = _blob_kernel(_SMALL_KERNEL_HALF, _SMALL_KERNEL_SIGMA)
        for i, center in enumerate(_mixed_spatial_sites(n_spatial, h, w)):
            recipes.append(_ClassRecipe(f"spatial_{i}", _spatial_template(spec, center, small)))
        n_seg = spec.frames // spec.segment_frames
        if n_seg < 2:
            raise DatasetError("mixed mode needs at least 2 segments")
        site = (h // 2, (3 * w) // 4)
        if not (
            _KERNEL_HALF <= site[0] < h - _KERNEL_HALF and _KERNEL_HALF <= site[1] < w - _KERNEL_HALF
        ):
            raise DatasetError(f"grid too small for the mixed temporal site on {h}x{w}")
        for i, order in enumerate(_segment_permutations(n_temporal, n_seg)):
            recipes.append(
                _ClassRecipe(f"temporal_{i}", _ladder_template(spec, site, order), scale_jitter=True)
            )
    return recipes


def generate_synthetic(spec: SyntheticTaskSpec) -> DatasetSplit:
    """Build a synthetic dataset; byte-identical for identical specs.

    Every sample is seeded by (spec.seed, global sample ordinal), where
    ordinals enumerate splits in (train, validation, test) order, classes in
    label order, then the per-class index — so parallel construction would
    reproduce serial output exactly. Each sample stream first draws the
    amplitude jitter (for classes that carry it), then the sensor noise.
    """
    recipes = _class_templates(spec)
    counts = {
        "train": spec.train_per_class,
        "validation": spec.val_per_class,
        "test": spec.test_per_class,
    }
    splits: dict[str, list[LabeledSample]] = {name: [] for name in SPLIT_NAMES}
    ordinal = 0
    for split_name in SPLIT_NAMES:
        for label in range(spec.classes):
            recipe = recipes[label]
            for _ in range(counts[split_name]):
                rng = np.random.default_rng(np.random.SeedSequence([spec.seed, ordinal]))
                values = recipe.template
                if recipe.scale_jitter and spec.scale_jitter > 0:
                    values = values * np.exp(spec.scale_jitter * rng.standard_normal())
                if spec.noise_std > 0:
                    values = values + spec.noise_std * rng.standard_normal(spec.shape)
                elif values is recipe.template:
                    values = values.copy()
                splits[split_name].append(
                    LabeledSample(TactileTensor(values, spec.sample_rate_hz), label)
                )
                ordinal += 1
    return DatasetSplit(
        splits["train"], splits["validation"], splits["test"], [r.name for r in recipes]
    )


def synthetic_templates(spec: SyntheticTaskSpec) -> tuple[list[str], np.ndarray]:
    """Noise-free class templates (M, C, T, H, W); exposed for tests and plots."""
    recipes = _class_templates(spec)
    return [r.name for r in recipes], np.stack([r.template for r in recipes])


# ---------------------------------------------------------------------------
# normalization

@dataclass
class NormalizationStats:
    """Per-sensor-cell z-score statistics, computed from the training split only."""

    mean: np.ndarray  # (C, 1, H, W)
    std: np.ndarray  # (C, 1, H, W), floored at 1e-6

    @classmethod
    def from_samples(cls, tensors: Iterable[TactileTensor]) -> "NormalizationStats":
        total = None
        total_sq = None
        count = 0
        shape = None
        for t in tensors:
            v = t.values
            if shape is None:
                shape = v.shape
                total = np.zeros((shape[0], shape[2], shape[3]))
                total_sq = np.zeros_like(total)
            elif v.shape != shape:
                raise DatasetError(f"shape mismatch: {v.shape} vs {shape}")
            total += v.sum(axis=1)
            total_sq += (v * v).sum(axis=1)
            count += v.shape[1]
        if count == 0:
            raise DatasetError("cannot compute statistics from an empty sample list")
        mean = total / count
        var = np.maximum(total_sq / count - mean * mean, 0.0)
        std = np.maximum(np.sqrt(var), 1e-6)
        return cls(mean[:, None, :, :], std[:, None, :, :])


def normalize(tensor: TactileTensor, stats: NormalizationStats) -> TactileTensor:
    c, _, h, w = tensor.shape
    if stats.mean.shape != (c, 1, h, w):
        raise DatasetError(
            f"stats shape mismatch: {stats.mean.shape} vs tensor {(c, 1, h, w)}"
        )
    values = (tensor.values - stats.mean) / stats.std
    return TactileTensor(values, tensor.sample_rate_hz)


def denormalize(tensor: TactileTensor, stats: NormalizationStats) -> TactileTensor:
    c, _, h, w = tensor.shape
    if stats.mean.shape != (c, 1, h, w):
        raise DatasetError(
            f"stats shape mismatch: {stats.mean.shape} vs tensor {(c, 1, h, w)}"
        )
    return TactileTensor(tensor.values * stats.std + stats.mean, tensor.sample_rate_hz)


def normalize_split(split: DatasetSplit, stats: NormalizationStats) -> DatasetSplit:
    def conv(samples: list[LabeledSample]) -> list[LabeledSample]:
        return [LabeledSample(normalize(s.tensor, stats), s.label) for s in samples]

    return DatasetSplit(conv(split.train), conv(split.validation), conv(split.test), list(split.class_names))


# ---------------------------------------------------------------------------
# disk I/O

def save_dataset(split: DatasetSplit, root: Path | str) -> Path:
    """Write raw float32 sample files plus a manifest; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    shape = None
    rate = None
    lines: list[str] = []
    for split_name, samples in split.items():
        (root / split_name).mkdir(exist_ok=True)
        for i, sample in enumerate(samples):
            if shape is None:
                shape = sample.tensor.shape
                rate = sample.tensor.sample_rate_hz
            elif sample.tensor.shape != shape:
                raise DatasetError("all samples in one dataset must share a shape")
            rel = f"{split_name}/{i:05d}_{split.class_names[sample.label]}.f32"
            sample.tensor.values.astype("<f4").tofile(root / rel)
            lines.append(f"{rel},{split.class_names[sample.label]},{split_name}")
    if shape is None:
        raise DatasetError("refusing to save an empty dataset")
    manifest = root / "manifest.txt"
    header = [
        f"#shape: {shape[0]} {shape[1]} {shape[2]} {shape[3]}",
        f"#rate: {rate}",
        f"#classes: {','.join(split.class_names)}",
    ]
    manifest.write_text("\n".join(header + lines) + "\n", encoding="utf-8")
    return manifest


def _balance_train(
    samples: list[LabeledSample], n_classes: int, target: int, rng: np.random.Generator
) -> list[LabeledSample]:
    by_class: list[list[LabeledSample]] = [[] for _ in range(n_classes)]
    for s in samples:
        by_class[s.label].append(s)
    out: list[LabeledSample] = []
    for group in by_class:
        if not group:
            continue
        if len(group) >= target:
            keep = rng.permutation(len(group))[:target]
            out.extend(group[i] for i in sorted(keep))
        else:
            out.extend(group)
            extra = rng.integers(0, len(group), size=target - len(group))
            out.extend(group[i] for i in extra)
    return out


def load_dataset(
    root: Path | str,
    manifest: Path | str,
    *,
    balance_train_to: int | None = None,
    balance_seed: int = 0,
) -> DatasetSplit:
    """Load a dataset as assigned by its manifest.

    Validation and test splits are returned exactly as listed; when
    ``balance_train_to`` is given, each training class is brought to that
    count (undersampling via a seeded permutation, oversampling with
    replacement).
    """
    root = Path(root)
    manifest = Path(manifest)
    if not manifest.exists():
        raise DatasetError(f"missing file: {manifest}")
    shape: tuple[int, int, int, int] | None = None
    rate = 15.0
    class_names: list[str] | None = None
    records: list[tuple[str, str, str]] = []
    for raw in manifest.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("#shape:"):
                parts = line[len("#shape:") :].split()
                if len(parts) != 4:
                    raise DatasetError(f"malformed #shape directive: {line!r}")
                shape = tuple(int(p) for p in parts)  # type: ignore[assignment]
            elif line.startswith("#rate:"):
                rate = float(line[len("#rate:") :].strip())
            elif line.startswith("#classes:"):
                class_names = [c.strip() for c in line[len("#classes:") :].split(",") if c.strip()]
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise DatasetError(f"malformed manifest record: {line!r}")
        records.append((parts[0], parts[1], parts[2]))
    if not records:
        raise DatasetError("empty manifest")
    if shape is None:
        raise DatasetError("manifest missing #shape directive")
    if class_names is None:
        class_names = sorted({label for _, label, _ in records})
    label_of = {name: i for i, name in enumerate(class_names)}
    expected = int(np.prod(shape))
    splits: dict[str, list[LabeledSample]] = {name: [] for name in SPLIT_NAMES}
    for rel, label_name, split_name in records:
        if label_name not in label_of:
            raise DatasetError(f"unknown label {label_name!r}")
        if split_name not in SPLIT_NAMES:
            raise DatasetError(f"unknown split {split_name!r} for {rel}")
        path = root / rel
        if not path.exists():
            raise DatasetError(f"missing file: {path}")
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != expected:
            raise DatasetError(
                f"shape mismatch for {rel}: {raw.size} values, expected {expected} for {shape}"
            )
        tensor = TactileTensor(raw.reshape(shape).astype(np.float64), rate)
        splits[split_name].append(LabeledSample(tensor, label_of[label_name]))
    if balance_train_to is not None:
        rng = np.random.default_rng(np.random.SeedSequence([balance_seed]))
        splits["train"] = _balance_train(splits["train"], len(class_names), balance_train_to, rng)
    return DatasetSplit(splits["train"], splits["validation"], splits["test"], class_names)
