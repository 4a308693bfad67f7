"""Datasets: a seeded synthetic generator and a small binary file format.

The synthetic task is 10-way orientation classification of noisy sinusoidal
gratings with random phase. Random phase makes the classes linearly
inseparable in pixel space (expected correlation with any fixed template is
zero), so the model must learn phase-invariant energy features through the
conv stack; that keeps the task sensitive to damage on the propagated
gradient path.

File format (little-endian):

    magic   4 bytes  b"HLQD"
    version u16      currently 1
    count   u32
    C, H, W u16 each
    classes u16
    labels  u8  * count
    pixels  u8  * count*C*H*W   (affine-coded from the float range [-4, 4])
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"HLQD"
VERSION = 1
_RANGE = 4.0  # float values are clipped to [-4, 4] when stored as u8


def _binomial_blur(a: np.ndarray, passes: int = 1) -> np.ndarray:
    """Separable [1, 2, 1]/4 smoothing with edge replication, per image."""
    for _ in range(passes):
        p = np.pad(a, ((0, 0), (1, 1), (1, 1)), mode="edge")
        a = (p[:, :-2, 1:-1] + 2 * p[:, 1:-1, 1:-1] + p[:, 2:, 1:-1]) / 4.0
        p = np.pad(a, ((0, 0), (1, 1), (1, 1)), mode="edge")
        a = (p[:, 1:-1, :-2] + 2 * p[:, 1:-1, 1:-1] + p[:, 1:-1, 2:]) / 4.0
    return a


def synthetic_gratings(seed: int, count: int, image: int = 16, classes: int = 10,
                       noise: float = 1.2, freq: float = 2.0, jitter: float = 0.06,
                       noise_smooth: int = 1, amp_sigma: float = 0.0,
                       glint_rate: float = 0.0, glint_amp: float = 6.0,
                       marker_amp: float = 0.35, label_noise: float = 0.0,
                       faint_classes: int = 0, faint_scale: float = 0.45):
    """Oriented-grating images (count, 1, image, image) float32 plus labels.

    Classes pair a coarse cue with a fine one: label = orientation index * 2
    + marker bit. The orientation (classes//2 angles) is carried by a
    full-contrast grating; the marker bit adds a faint orthogonal grating of
    amplitude ``marker_amp``. Both cues are low-frequency with random phase,
    so classification requires learned phase-invariant energy features, and
    resolving the marker requires gradients precise enough to pull a weak
    signal out of the clutter.

    ``noise`` is the additive Gaussian level before smoothing; ``noise_smooth``
    low-passes it so the clutter is spatially correlated like natural image
    statistics rather than white. ``jitter`` perturbs each sample's
    orientation within its class. ``amp_sigma`` > 0 switches per-sample
    contrast to log-normal (heavy-tailed difficulty). ``glint_rate``
    sprinkles sparse class-irrelevant pixels of amplitude +-``glint_amp``.
    ``label_noise`` flips that fraction of labels uniformly; once such
    samples are memorized wrong, their near-unit loss gradients dominate the
    tensor maxima, reproducing the sparse heavy-tailed late-training
    gradient statistics that outlier-sensitive quantizers are bad at.
    The last ``faint_classes`` classes get their contrast multiplied by
    ``faint_scale``: persistently hard classes whose logit-gradient channels
    stay large, giving the gradients channel-structured outliers.
    """
    if marker_amp > 0 and classes % 2:
        raise ValueError("classes must be even (orientation x marker pairs)")
    rng = np.random.default_rng(np.random.Philox(key=np.array([seed, 0xDA7A], dtype=np.uint64)))
    labels = rng.integers(0, classes, size=count)
    if marker_amp > 0:
        orient, marker = labels // 2, labels % 2
        n_orient = classes // 2
    else:
        orient, marker = labels, np.zeros(count, dtype=np.int64)
        n_orient = classes
    u, v = np.meshgrid(np.arange(image) / image, np.arange(image) / image, indexing="xy")
    theta = np.pi * orient / n_orient + rng.normal(0.0, jitter, size=count)
    phase = rng.uniform(0, 2 * np.pi, size=count)
    phase2 = rng.uniform(0, 2 * np.pi, size=count)
    if amp_sigma > 0:
        amp = rng.lognormal(0.0, amp_sigma, size=count)
    else:
        amp = rng.uniform(0.6, 1.4, size=count)
    if faint_classes > 0:
        amp = amp * np.where(labels >= classes - faint_classes, faint_scale, 1.0)

    def grating(angle, ph):
        arg = (np.cos(angle)[:, None, None] * u[None] + np.sin(angle)[:, None, None] * v[None])
        return np.sin(2 * np.pi * freq * arg + ph[:, None, None])

    img = amp[:, None, None] * grating(theta, phase)
    img = img + (marker * marker_amp)[:, None, None] * grating(theta + np.pi / 2, phase2)
    clutter = rng.standard_normal((count, image, image))
    if noise_smooth:
        clutter = _binomial_blur(clutter, noise_smooth)
    img = img + noise * clutter
    if glint_rate > 0:
        mask = rng.random((count, image, image)) < glint_rate
        signs = rng.choice([-1.0, 1.0], size=(count, image, image))
        img = img + mask * signs * glint_amp
    if label_noise > 0:
        flip = rng.random(count) < label_noise
        labels = np.where(flip, (labels + rng.integers(1, classes, size=count)) % classes,
                          labels)
    return img[:, None, :, :].astype(np.float32), labels.astype(np.int64)


def write_dataset(path, images: np.ndarray, labels: np.ndarray, classes: int):
    count, C, H, W = images.shape
    coded = np.clip(images, -_RANGE, _RANGE)
    coded = np.round((coded + _RANGE) / (2 * _RANGE) * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HIHHHH", VERSION, count, C, H, W, classes))
        f.write(labels.astype(np.uint8).tobytes())
        f.write(coded.tobytes())


def load_dataset(path):
    """Returns (images float32 in [-4, 4], labels int64, classes)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise FormatError("bad dataset magic", 0)
    if len(buf) < 18:
        raise FormatError("truncated dataset header", len(buf))
    version, count, C, H, W, classes = struct.unpack("<HIHHHH", buf[4:18])
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    need = 18 + count + count * C * H * W
    if len(buf) != need:
        raise FormatError(f"dataset length {len(buf)} != expected {need}", 18)
    labels = np.frombuffer(buf, dtype=np.uint8, count=count, offset=18).astype(np.int64)
    pix = np.frombuffer(buf, dtype=np.uint8, count=count * C * H * W, offset=18 + count)
    images = pix.reshape(count, C, H, W).astype(np.float32) / 255.0 * (2 * _RANGE) - _RANGE
    if labels.size and labels.max() >= classes:
        raise FormatError("label outside the declared class count", 18)
    return images, labels, classes


def make_splits(seed: int, n_train: int, n_val: int, **kwargs):
    """Train/val splits from independent seeded streams."""
    train_x, train_y = synthetic_gratings(seed, n_train, **kwargs)
    val_x, val_y = synthetic_gratings(seed + 0x5EED, n_val, **kwargs)
    return (train_x, train_y), (val_x, val_y)
