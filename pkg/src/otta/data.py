"""Synthetic class-conditional trial streams, subject/session shifts, the
lowpass ingest filter and the ``.ottd`` dataset file format.

A subject is a :class:`GeneratorSpec`. A trial of class ``k`` is::

    x = diag(gains) @ mixing @ (pattern_k * sin(2 pi f_k t + phase) + noise) + bias

where ``phase`` is uniform in ``[-phase_jitter, phase_jitter]``, the
oscillation amplitude is scaled by ``1 + amp_jitter * u`` with ``u``
uniform in ``[-1, 1]``, and ``noise`` is white Gaussian with standard
deviation ``noise``. Samples are rounded to float32 so datasets survive the
on-disk format bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .buffer import Trial

MAX_CONDITION = 10.0


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    patterns: np.ndarray  # (n_classes, C), one spatial pattern per class
    freqs: np.ndarray  # (n_classes,), oscillation frequency in Hz
    mixing: np.ndarray  # (C, C)
    gains: np.ndarray  # (C,)
    bias: np.ndarray  # (C,)
    noise: float = 1.0
    n_samples: int = 1000
    sample_rate: float = 250.0
    amplitude: float = 2.0
    phase_jitter: float = np.pi
    amp_jitter: float = 0.3
    seed: int = 0
    max_condition: float = MAX_CONDITION

    def __post_init__(self):
        for key in ("patterns", "freqs", "mixing", "gains", "bias"):
            object.__setattr__(self, key, np.array(getattr(self, key), dtype=np.float64))
        self.validate()

    @property
    def n_channels(self) -> int:
        return self.mixing.shape[0]

    @property
    def n_classes(self) -> int:
        return self.patterns.shape[0]

    def validate(self) -> None:
        c = self.mixing.shape[0]
        if self.mixing.shape != (c, c):
            raise GeneratorError("mixing must be square")
        if self.patterns.ndim != 2 or self.patterns.shape[1] != c:
            raise GeneratorError("patterns must be (n_classes, n_channels)")
        k = self.patterns.shape[0]
        if k < 2:
            raise GeneratorError("need at least two classes")
        if self.freqs.shape != (k,):
            raise GeneratorError("one frequency per class required")
        if self.gains.shape != (c,) or np.any(self.gains <= 0):
            raise GeneratorError("gains must be positive, one per channel")
        if self.bias.shape != (c,):
            raise GeneratorError("bias must have one entry per channel")
        if self.noise < 0 or self.amplitude < 0 or self.phase_jitter < 0 or not 0 <= self.amp_jitter < 1:
            raise GeneratorError("noise, amplitude and jitters must be non-negative (amp_jitter < 1)")
        if self.n_samples < 1 or self.sample_rate <= 0:
            raise GeneratorError("n_samples and sample_rate must be positive")
        if np.any(self.freqs <= 0) or np.any(self.freqs >= self.sample_rate / 2):
            raise GeneratorError("class frequencies must lie in (0, Nyquist)")
        cond = np.linalg.cond(self.mixing)
        if not cond <= self.max_condition:
            raise GeneratorError(f"mixing condition number {cond:.2f} exceeds cap {self.max_condition:g}")
        for i in range(k):
            for j in range(i + 1, k):
                if np.array_equal(self.patterns[i], self.patterns[j]) and self.freqs[i] == self.freqs[j]:
                    raise GeneratorError(f"class templates {i} and {j} are identical")

    def __eq__(self, other):
        if not isinstance(other, GeneratorSpec):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in self.__dataclass_fields__
        )

    __hash__ = None


def default_spec(
    n_channels: int = 22,
    n_samples: int = 1000,
    n_classes: int = 4,
    sample_rate: float = 250.0,
    noise: float = 1.0,
    seed: int = 0,
    **kw,
) -> GeneratorSpec:
    """Random orthonormal class patterns (unit-norm when classes outnumber
    channels), class frequencies spread over 8-30 Hz, identity mixing and
    unit gains."""
    rng = np.random.default_rng(seed)
    patterns = rng.standard_normal((n_classes, n_channels))
    if n_classes <= n_channels:
        q, r = np.linalg.qr(patterns.T)
        patterns = (q * np.sign(np.diag(r))).T
    else:
        patterns /= np.linalg.norm(patterns, axis=1, keepdims=True)
    hi = min(30.0, 0.4 * sample_rate)
    freqs = np.linspace(8.0, hi, n_classes)
    return GeneratorSpec(
        patterns=patterns,
        freqs=freqs,
        mixing=np.eye(n_channels),
        gains=np.ones(n_channels),
        bias=np.zeros(n_channels),
        noise=noise,
        n_samples=n_samples,
        sample_rate=sample_rate,
        seed=seed,
        **kw,
    )


@dataclass(frozen=True)
class Dataset:
    """Pre-epoched labelled trials ``data[i]`` (C x T) with ``labels[i]``."""

    data: np.ndarray
    labels: np.ndarray
    n_classes: int
    sample_rate: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if data.ndim != 3 or labels.shape != (len(data),):
            raise ValueError("dataset needs data (N, C, T) and N labels")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    def trials(self, first_id: int = 1) -> list[Trial]:
        return [Trial(x, int(y), first_id + i) for i, (x, y) in enumerate(zip(self.data, self.labels))]

    def subset(self, index) -> "Dataset":
        return Dataset(self.data[index], self.labels[index], self.n_classes, self.sample_rate)

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        if not parts:
            raise ValueError("nothing to concatenate")
        return Dataset(
            np.concatenate([p.data for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].n_classes,
            parts[0].sample_rate,
        )


def generate_subject(spec: GeneratorSpec, n_trials: int, balance: bool = True, seed: int | None = None) -> Dataset:
    """Draw ``n_trials`` labelled trials from ``spec``.

    The result depends only on ``(spec, n_trials, balance, seed)``; ``seed``
    defaults to ``spec.seed``.
    """
    k = spec.n_classes
    if n_trials < 0:
        raise GeneratorError("n_trials must be non-negative")
    if balance and n_trials < k:
        raise GeneratorError(f"balanced generation needs at least {k} trials")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    if balance:
        labels = rng.permutation(np.arange(n_trials) % k)
    else:
        labels = rng.integers(0, k, n_trials)
    t = np.arange(spec.n_samples) / spec.sample_rate
    phase = rng.uniform(-spec.phase_jitter, spec.phase_jitter, n_trials)
    amp = spec.amplitude * (1.0 + spec.amp_jitter * rng.uniform(-1.0, 1.0, n_trials))
    wave = amp[:, None] * np.sin(2 * np.pi * spec.freqs[labels][:, None] * t[None, :] + phase[:, None])
    latent = spec.patterns[labels][:, :, None] * wave[:, None, :]
    if spec.noise:
        latent = latent + spec.noise * rng.standard_normal(latent.shape)
    transform = spec.gains[:, None] * spec.mixing
    data = np.matmul(transform, latent) + spec.bias[None, :, None]
    return Dataset(data.astype(np.float32).astype(np.float64), labels, k, spec.sample_rate)


@dataclass(frozen=True)
class Shift:
    """Subject/session shift magnitudes; every field at its zero value is a no-op.

    rotation : maximal rotation angle (radians) of a random orthogonal
        transform applied after the mixing, in [0, pi].
    gain : ``(low, high)``; channel gains are multiplied by draws from
        ``U(low, high)``; ``(c, c)`` scales all channels by ``c``.
    bias : standard deviation of an added per-channel offset.
    mixing : size of a random symmetric perturbation ``I + mixing * S`` of
        the mixing matrix (``S`` symmetric Gaussian, scaled by ``1/sqrt(2C)``).
    scale : common amplitude factor, log-uniform in ``[1/scale, scale]``.
    noise : multiplier on the noise level.
    """

    rotation: float = 0.0
    gain: tuple[float, float] = (1.0, 1.0)
    bias: float = 0.0
    mixing: float = 0.0
    scale: float = 1.0
    noise: float = 1.0

    def __post_init__(self):
        lo, hi = self.gain
        if not 0 <= self.rotation <= np.pi:
            raise GeneratorError("rotation budget must lie in [0, pi]")
        if not 0 < lo <= hi:
            raise GeneratorError("gain range must satisfy 0 < low <= high")
        if self.scale < 1.0:
            raise GeneratorError("scale must be >= 1")
        if self.bias < 0 or self.mixing < 0 or self.noise <= 0:
            raise GeneratorError("bias and mixing must be non-negative, noise factor positive")

    @classmethod
    def rotation_only(cls, angle: float) -> "Shift":
        return cls(rotation=angle)

    @classmethod
    def gain_only(cls, low: float, high: float | None = None) -> "Shift":
        return cls(gain=(low, low if high is None else high))

    @classmethod
    def bias_only(cls, std: float) -> "Shift":
        return cls(bias=std)


# magnitudes calibrated so that an unadapted source model loses clearly
# more than 10 accuracy points on a shifted subject
SUBJECT_SHIFT = Shift(rotation=0.1, gain=(0.7, 1.4), bias=0.5, mixing=0.7, scale=3.0)
SESSION_SHIFT = Shift(rotation=0.1, gain=(0.7, 1.4), bias=0.1, mixing=0.1)


def random_rotation(c: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix ``expm(S)`` for a random skew ``S`` whose largest
    rotation angle equals ``angle``."""
    a = rng.standard_normal((c, c))
    skew = a - a.T
    top = np.max(np.abs(np.linalg.eigvals(skew)))
    if top == 0:
        return np.eye(c)
    return expm(skew * (angle / top))


def derive_shifted_subject(spec: GeneratorSpec, shift: Shift, seed: int) -> GeneratorSpec:
    """New subject sharing ``spec``'s class templates with shifted mixing,
    gains, bias and noise. The trial seed is derived from ``seed``."""
    rng = np.random.default_rng(seed)
    c = spec.n_channels
    mixing, gains, bias = spec.mixing, spec.gains, spec.bias
    if shift.mixing:
        a = rng.standard_normal((c, c))
        perturb = np.eye(c) + shift.mixing * (a + a.T) / np.sqrt(2 * c)
        # keep the perturbation within the condition cap
        for _ in range(100):
            if np.linalg.cond(perturb @ mixing) <= spec.max_condition:
                break
            perturb = 0.5 * (perturb + np.eye(c))
        mixing = perturb @ mixing
    if shift.rotation:
        mixing = random_rotation(c, shift.rotation, rng) @ mixing
    lo, hi = shift.gain
    if (lo, hi) != (1.0, 1.0):
        gains = gains * (np.full(c, lo) if lo == hi else rng.uniform(lo, hi, c))
    if shift.scale != 1.0:
        gains = gains * np.exp(rng.uniform(-1.0, 1.0) * np.log(shift.scale))
    if shift.bias:
        bias = bias + shift.bias * rng.standard_normal(c)
    new_seed = int(rng.integers(0, 2**31 - 1)) if shift != Shift() else spec.seed
    return replace(spec, mixing=mixing, gains=gains, bias=bias, noise=spec.noise * shift.noise, seed=new_seed)


def fir_lowpass_taps(cutoff_hz: float, sample_rate: float, n_taps: int = 101) -> np.ndarray:
    """Hamming-windowed sinc with unit DC gain."""
    if not 0 < cutoff_hz < sample_rate / 2:
        raise ValueError(f"cutoff must lie in (0, {sample_rate / 2:g}) Hz, got {cutoff_hz:g}")
    fc = cutoff_hz / sample_rate
    n = np.arange(n_taps) - (n_taps - 1) / 2
    taps = 2 * fc * np.sinc(2 * fc * n) * np.hamming(n_taps)
    return taps / taps.sum()


def lowpass(data: np.ndarray, cutoff_hz: float, sample_rate: float, n_taps: int = 101) -> np.ndarray:
    """Zero-phase FIR lowpass along the last axis of ``(..., T)`` data.

    The symmetric, odd-length kernel is applied once, centred, after
    symmetric (mirror) padding of half the kernel length on each side.
    """
    taps = fir_lowpass_taps(cutoff_hz, sample_rate, n_taps)
    x = np.asarray(data, dtype=np.float64)
    half = n_taps // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    padded = np.pad(x, pad, mode="symmetric")
    if padded.shape[-1] < n_taps:
        raise ValueError("trial too short for the filter")
    windows = np.lib.stride_tricks.sliding_window_view(padded, n_taps, axis=-1)
    return windows @ taps[::-1]


def lowpass_dataset(ds: Dataset, cutoff_hz: float = 40.0) -> Dataset:
    data = lowpass(ds.data, cutoff_hz, ds.sample_rate)
    return Dataset(data, ds.labels, ds.n_classes, ds.sample_rate)


# ---------------------------------------------------------------- file format

DATASET_MAGIC = b"OTTD"
DATASET_VERSION = 1
_DS_HEADER = struct.Struct("<4sHIIIId")


class DatasetFormatError(ValueError):
    pass


class DatasetMagicError(DatasetFormatError):
    pass


class DatasetVersionError(DatasetFormatError):
    pass


class DatasetLengthError(DatasetFormatError):
    pass


class DatasetValidationError(DatasetFormatError):
    pass


def dataset_to_bytes(ds: Dataset) -> bytes:
    n, c, t = ds.data.shape
    if ds.n_classes > 255:
        raise DatasetValidationError("labels are stored as u8; at most 255 classes")
    header = _DS_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, c, t, ds.n_classes, n, float(ds.sample_rate))
    record = np.dtype([("label", "u1"), ("data", "<f4", (c * t,))])
    payload = np.empty(n, dtype=record)
    payload["label"] = ds.labels
    payload["data"] = ds.data.reshape(n, -1)
    return header + payload.tobytes()


def dataset_from_bytes(raw: bytes) -> Dataset:
    if len(raw) < _DS_HEADER.size:
        raise DatasetLengthError(f"file has {len(raw)} bytes, header needs {_DS_HEADER.size}")
    magic, version, c, t, k, n, rate = _DS_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise DatasetMagicError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise DatasetVersionError(f"unsupported dataset version {version}")
    if c < 1 or t < 1 or k < 2 or k > 255 or not rate > 0:
        raise DatasetValidationError(f"invalid header: C={c} T={t} n_classes={k} sample_rate={rate}")
    expected = n * (1 + 4 * c * t)
    got = len(raw) - _DS_HEADER.size
    if got != expected:
        raise DatasetLengthError(f"payload has {got} bytes, header implies {expected}")
    record = np.dtype([("label", "u1"), ("data", "<f4", (c * t,))])
    payload = np.frombuffer(raw, dtype=record, offset=_DS_HEADER.size, count=n)
    labels = payload["label"].astype(np.int64)
    if n and labels.max() >= k:
        bad = int(np.argmax(labels >= k))
        raise DatasetValidationError(f"trial {bad} has label {labels[bad]} but header declares {k} classes")
    data = payload["data"].astype(np.float64).reshape(n, c, t)
    if not np.all(np.isfinite(data)):
        raise DatasetValidationError("payload contains non-finite samples")
    return Dataset(data, labels, k, rate)


def write_dataset(path, ds: Dataset) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def read_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())
