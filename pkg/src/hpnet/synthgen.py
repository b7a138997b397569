"""Seeded synthetic action data.

Every class is a parametric motion of one joint group on a COCO-17 rest
pose. Heatmaps at each scale are per-channel mixtures of per-joint
Gaussians; the channel mixing matrices are fixed for a given seed. Video
features are a weak class direction plus a projection of motion
statistics plus noise.

Coordinates are (x = column, y = row), origin top-left, integers at pixel
centres, expressed in the frame of the largest scale.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import hpt
from .numerics import DTYPE

# Normalized (x, y) rest pose, COCO-17 order.
REST_POSE = np.array([
    [0.50, 0.14], [0.47, 0.11], [0.53, 0.11], [0.44, 0.13], [0.56, 0.13],
    [0.38, 0.27], [0.62, 0.27], [0.33, 0.41], [0.67, 0.41], [0.31, 0.54],
    [0.69, 0.54], [0.43, 0.57], [0.57, 0.57], [0.43, 0.73], [0.57, 0.73],
    [0.43, 0.88], [0.57, 0.88],
])

# Joint groups a class can animate, with per-joint amplitude weights
# (distal joints move more) and the motion direction in (x, y).
MOTION_GROUPS = (
    ("left arm", {5: 0.2, 7: 0.6, 9: 1.0}, (0.3, -1.0)),
    ("right arm", {6: 0.2, 8: 0.6, 10: 1.0}, (-0.3, -1.0)),
    ("legs", {11: 0.3, 12: 0.3, 13: 0.7, 14: 0.7, 15: 1.0, 16: 1.0}, (1.0, 0.2)),
    ("head", {0: 1.0, 1: 1.0, 2: 1.0, 3: 0.9, 4: 0.9}, (1.0, 0.4)),
    ("both arms", {7: 0.5, 8: 0.5, 9: 1.0, 10: 1.0}, (0.0, 1.0)),
)
VERBS = ("wave", "swing", "shake", "pump", "circle")


@dataclass
class SynthConfig:
    num_classes: int = 5
    samples_per_class: int = 30
    frames: int = 16
    joints: int = 17
    scales: List[Tuple[int, int, int]] = field(
        default_factory=lambda: [(64, 48, 32), (32, 24, 96), (16, 12, 192)])
    gaussian_sigma: float = 6.0
    noise_std: float = 0.04
    seed: int = 0
    amplitude: float = 5.0          # motion amplitude in largest-scale pixels
    pose_jitter: float = 0.4        # per-frame jitter in largest-scale pixels
    video_dim: int = 64
    video_signal: float = 0.2
    video_motion: float = 0.05
    video_offset: float = 3.0       # norm of the component shared by all videos
    video_noise: float = 1.0
    test_fraction: float = 1 / 3

    def __post_init__(self):
        self.scales = [tuple(int(v) for v in s) for s in self.scales]
        if self.joints < 2 or self.frames < 2:
            raise ValueError("need at least 2 joints and 2 frames")
        if self.joints != len(REST_POSE):
            raise ValueError(f"the synthetic skeleton has {len(REST_POSE)} joints")
        if self.num_classes < 1 or self.samples_per_class < 1:
            raise ValueError("num_classes and samples_per_class must be positive")
        if not self.scales or any(v <= 0 for s in self.scales for v in s):
            raise ValueError("every scale (h, w, c) must be positive")
        if any(s[2] < self.joints for s in self.scales):
            raise ValueError("every scale needs at least one channel per joint")
        if self.gaussian_sigma <= 0 or self.noise_std < 0:
            raise ValueError("gaussian_sigma must be positive and noise_std non-negative")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def largest(self) -> Tuple[int, int, int]:
        return max(self.scales, key=lambda s: s[0] * s[1])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = [list(s) for s in self.scales]
        return d


def class_names(num_classes: int) -> List[str]:
    names = []
    for c in range(num_classes):
        group = MOTION_GROUPS[c % len(MOTION_GROUPS)][0]
        verb = VERBS[(c // len(MOTION_GROUPS)) % len(VERBS)]
        tempo = c // (len(MOTION_GROUPS) * len(VERBS))
        names.append(f"{verb} {group}" + (f" tempo {tempo}" if tempo else ""))
    return names


def _class_motion(class_id: int):
    """Group, cycles over the clip, and direction sign for one class."""
    n_groups = len(MOTION_GROUPS)
    group = class_id % n_groups
    cycles = 1 + class_id % 3
    direction = np.array(MOTION_GROUPS[group][2], dtype=np.float64)
    if (class_id // n_groups) % 2:
        direction = direction[::-1].copy()
    cycles += 3 * (class_id // (2 * n_groups))
    return group, cycles, direction / np.linalg.norm(direction)


def sample_seed(seed: int, sample_id: str) -> np.random.SeedSequence:
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    return np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32,
                                   *np.frombuffer(digest[:16], dtype=np.uint32).tolist()])


def generate_motion(class_id: int, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Continuous joint trajectory ``[T, n, 2]`` in largest-scale pixels."""
    if not 0 <= class_id < cfg.num_classes:
        raise ValueError(f"class {class_id} outside [0, {cfg.num_classes})")
    h, w, _ = cfg.largest
    group, cycles, direction = _class_motion(class_id)
    weights = MOTION_GROUPS[group][1]
    T = cfg.frames

    base = REST_POSE * np.array([w, h], dtype=np.float64)
    base = base + rng.normal(0.0, 0.5, size=2)                 # global placement
    amp = cfg.amplitude * (h / 64.0) * rng.uniform(0.8, 1.2)
    phase = rng.uniform(-0.3, 0.3)
    t = np.arange(T) / T
    wave = np.sin(2 * np.pi * cycles * t + phase)

    poses = np.repeat(base[None], T, axis=0)
    for j, weight in weights.items():
        poses[:, j, :] += (amp * weight * wave)[:, None] * direction[None, :]
    poses += rng.normal(0.0, cfg.pose_jitter * (h / 64.0), size=poses.shape)
    # keep a margin of one pixel inside the grid
    poses[..., 0] = np.clip(poses[..., 0], 1.0, w - 2.0)
    poses[..., 1] = np.clip(poses[..., 1], 1.0, h - 2.0)
    return poses


def mixing_matrices(cfg: SynthConfig) -> List[np.ndarray]:
    """Per-scale non-negative, row-normalized ``[c, n]`` channel mixtures.

    Channel ``k`` is anchored on joint ``k mod n``; the remainder of its
    weight is spread over two other random joints. Channels ``k < n`` are
    nearly pure (anchor weight >= 0.9) so every joint has a dominant channel
    whose peak stays on the joint.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, cfg.seed >> 32, 0x4D4958]))
    mats = []
    n = cfg.joints
    for _, _, c in cfg.scales:
        m = np.zeros((c, n))
        for k in range(c):
            primary = k % n
            m[k, primary] = rng.uniform(0.9, 0.97) if k < n else rng.uniform(0.5, 0.85)
            others = rng.choice([j for j in range(n) if j != primary], size=2, replace=False)
            m[k, others] = rng.dirichlet([1.0, 1.0]) * (1.0 - m[k, primary])
        mats.append(m / m.sum(axis=1, keepdims=True))
    return mats


def joint_channels(cfg: SynthConfig) -> List[List[int]]:
    """Per scale, the channel with the largest mixing weight for each joint."""
    return [np.argmax(m, axis=0).astype(int).tolist() for m in mixing_matrices(cfg)]


def render_scale(pose: np.ndarray, mixing: np.ndarray, shape: Tuple[int, int],
                 ref_shape: Tuple[int, int], sigma: float) -> np.ndarray:
    """Noise-free ``[c, h, w]`` mixture heatmap for one frame at one scale."""
    h, w = shape
    ref_h, ref_w = ref_shape
    sx, sy = w / ref_w, h / ref_h
    centers = pose * np.array([sx, sy])
    sig = sigma * sx
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    gx = np.exp(-((xs[None, :] - centers[:, 0:1]) ** 2) / (2 * sig ** 2))   # [n, w]
    gy = np.exp(-((ys[None, :] - centers[:, 1:2]) ** 2) / (2 * sig ** 2))   # [n, h]
    gauss = gy[:, :, None] * gx[:, None, :]                                   # [n, h, w]
    return (mixing @ gauss.reshape(len(pose), -1)).reshape(-1, h, w)


def render_heatmaps(poses: np.ndarray, cfg: SynthConfig, rng: np.random.Generator,
                    mixing: Optional[Sequence[np.ndarray]] = None) -> List[List[np.ndarray]]:
    """Per frame, a list of ``[c, h, w]`` float32 heatmaps, one per scale."""
    mixing = mixing_matrices(cfg) if mixing is None else mixing
    ref_h, ref_w, _ = cfg.largest
    frames = []
    for pose in poses:
        stack = []
        for (h, w, _), m in zip(cfg.scales, mixing):
            hm = render_scale(pose, m, (h, w), (ref_h, ref_w), cfg.gaussian_sigma)
            if cfg.noise_std > 0:
                noise = np.clip(rng.standard_normal(hm.shape), -3.0, 3.0) * cfg.noise_std
                hm = np.maximum(hm + noise, 0.0)
            stack.append(hm.astype(DTYPE))
        frames.append(stack)
    return frames


def class_directions(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, cfg.seed >> 32, 0x564944]))
    d = rng.standard_normal((cfg.num_classes, cfg.video_dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _motion_projection(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, cfg.seed >> 32, 0x50524A]))
    return rng.standard_normal((cfg.video_dim, cfg.joints * 2)) / np.sqrt(cfg.joints * 2)


def common_direction(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, cfg.seed >> 32, 0x4F4646]))
    v = rng.standard_normal(cfg.video_dim)
    return v / np.linalg.norm(v)


def make_video_feature(poses: np.ndarray, label: int, cfg: SynthConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """Stand-in video descriptor of length ``cfg.video_dim``.

    A shared offset (real encoder features are far from zero-mean), a weak
    unit class direction, a projection of per-joint motion spread, and
    isotropic noise of expected norm ``video_noise``.
    """
    h = cfg.largest[0]
    spread = poses.std(axis=0).reshape(-1) / (cfg.amplitude * h / 64.0)
    v = (cfg.video_offset * common_direction(cfg)
         + cfg.video_signal * class_directions(cfg)[label]
         + cfg.video_motion * _motion_projection(cfg) @ spread
         + cfg.video_noise * rng.standard_normal(cfg.video_dim) / np.sqrt(cfg.video_dim))
    return v.astype(DTYPE)


# --------------------------------------------------------------------------
# Samples and datasets


@dataclass
class SynthSample:
    id: str
    label: int
    gt_poses: np.ndarray                 # [T, n, 2]
    heatmaps: List[List[np.ndarray]]     # [T][scale] -> [c, h, w]
    video_feature: np.ndarray            # [video_dim]


def sample_ids(cfg: SynthConfig) -> List[Tuple[str, int]]:
    return [(f"c{c:03d}_s{i:04d}", c)
            for c in range(cfg.num_classes) for i in range(cfg.samples_per_class)]


def make_sample(sample_id: str, label: int, cfg: SynthConfig,
                mixing: Optional[Sequence[np.ndarray]] = None) -> SynthSample:
    motion_rng, heat_rng, video_rng = (np.random.default_rng(s)
                                       for s in sample_seed(cfg.seed, sample_id).spawn(3))
    poses = generate_motion(label, cfg, motion_rng)
    heatmaps = render_heatmaps(poses, cfg, heat_rng, mixing)
    video = make_video_feature(poses, label, cfg, video_rng)
    return SynthSample(sample_id, label, poses.astype(DTYPE), heatmaps, video)


def iter_samples(cfg: SynthConfig) -> Iterator[SynthSample]:
    mixing = mixing_matrices(cfg)
    for sid, label in sample_ids(cfg):
        yield make_sample(sid, label, cfg, mixing)


def split_of(cfg: SynthConfig) -> Dict[str, str]:
    """Deterministic per-class split: ids ranked by SHA-256, the lowest
    ``round(test_fraction * count)`` go to test."""
    by_class: Dict[int, List[str]] = {}
    for sid, label in sample_ids(cfg):
        by_class.setdefault(label, []).append(sid)
    split = {}
    for ids in by_class.values():
        ranked = sorted(ids, key=lambda s: hashlib.sha256(s.encode()).hexdigest())
        n_test = int(round(cfg.test_fraction * len(ids)))
        for i, sid in enumerate(ranked):
            split[sid] = "test" if i < n_test else "train"
    return split


def _atomic_dir(out_dir: Path):
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))


def _commit_dir(tmp: Path, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    if out_dir.exists():
        shutil.rmtree(out_dir)
    os.replace(tmp, out_dir)


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def generate_dataset(cfg: SynthConfig, out_dir) -> Path:
    """Write every sample as ``.hpt`` files plus ``manifest.json``.

    Output is staged in a sibling temp directory and moved into place once
    complete. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    tmp = _atomic_dir(out_dir)
    try:
        split = split_of(cfg)
        entries = []
        for sample in iter_samples(cfg):
            rel = Path("samples") / sample.id
            (tmp / rel).mkdir(parents=True)
            heat_paths = []
            for t, stack in enumerate(sample.heatmaps):
                for s, hm in enumerate(stack):
                    p = rel / f"heatmap_t{t:03d}_s{s}.hpt"
                    hpt.save(tmp / p, hm)
                    heat_paths.append(p.as_posix())
            hpt.save(tmp / rel / "video_feature.hpt", sample.video_feature)
            hpt.save(tmp / rel / "gt_poses.hpt", sample.gt_poses)
            entries.append({
                "id": sample.id,
                "label": sample.label,
                "split": split[sample.id],
                "heatmaps": heat_paths,
                "video_feature": (rel / "video_feature.hpt").as_posix(),
                "gt_poses": (rel / "gt_poses.hpt").as_posix(),
            })
        write_json(tmp / "manifest.json", {"config": cfg.to_dict(), "samples": entries})
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _commit_dir(tmp, out_dir)
    return out_dir / "manifest.json"


def load_manifest(path):
    """Return ``(SynthConfig, samples, base_dir)`` from a manifest file."""
    path = Path(path)
    data = json.loads(path.read_text())
    if set(data) != {"config", "samples"}:
        raise ValueError("manifest must contain exactly 'config' and 'samples'")
    cfg = SynthConfig(**data["config"])
    return cfg, data["samples"], path.parent


def load_sample_heatmaps(entry: dict, cfg: SynthConfig, base: Path) -> List[List[np.ndarray]]:
    n_scales = len(cfg.scales)
    paths = entry["heatmaps"]
    if len(paths) != cfg.frames * n_scales:
        raise ValueError(f"sample {entry['id']}: expected {cfg.frames * n_scales} heatmap files")
    return [[hpt.load(base / paths[t * n_scales + s]) for s in range(n_scales)]
            for t in range(cfg.frames)]
