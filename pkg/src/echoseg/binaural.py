"""Binaural clips, channel RMS and the per-Gaussian audio intensity map.

For every observation the louder ear defines a half-space (split by the agent's
sagittal plane). Each Gaussian whose center lies in that half-space collects the
normalised level difference ``|R_l - R_r| / max(R_l, R_r)``; summing over the
trajectory concentrates mass around the emitter.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CorruptContainer, EmptyClip, EmptyObservations, InputError, UnsupportedFormat
from .gs_scene import CameraPose, GaussianCloud

AUDIO_PATTERN = "audio_{:05d}.wav"

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(eq=False)
class StereoClip:
    sample_rate: int
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64).reshape(-1)
        self.right = np.asarray(self.right, dtype=np.float64).reshape(-1)
        if len(self.left) != len(self.right):
            raise InputError("left and right channels differ in length")
        if self.sample_rate <= 0:
            raise InputError("sample rate must be positive")

    def __len__(self):
        return len(self.left)


@dataclass(frozen=True)
class RmsObservation:
    rms_left: float
    rms_right: float
    pose: CameraPose

    def __post_init__(self):
        for r in (self.rms_left, self.rms_right):
            if not np.isfinite(r) or r < 0:
                raise InputError(f"RMS values must be finite and non-negative, got {r}")


@dataclass(frozen=True)
class AudioIntensityMap:
    raw: np.ndarray
    normalized: np.ndarray

    @classmethod
    def from_raw(cls, raw) -> "AudioIntensityMap":
        raw = np.asarray(raw, dtype=np.float64)
        peak = raw.max() if len(raw) else 0.0
        norm = raw / peak if peak > 0 else np.zeros_like(raw)
        return cls(raw, norm)

    def __len__(self):
        return len(self.raw)


# ---------------------------------------------------------------------------
# WAV

def decode_wav(data: bytes) -> StereoClip:
    """Decode a stereo RIFF/WAVE file holding 16-bit PCM or 32-bit float samples."""
    data = bytes(data)
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptContainer("not a RIFF/WAVE container", 0)
    riff_size = struct.unpack_from("<I", data, 4)[0]
    end = min(len(data), 8 + riff_size)
    if 8 + riff_size > len(data):
        raise CorruptContainer(
            f"RIFF size {riff_size} exceeds file length {len(data)}", 4)
    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= end:
        cid, size = data[pos:pos + 4], struct.unpack_from("<I", data, pos + 4)[0]
        body = pos + 8
        if body + size > end:
            raise CorruptContainer(f"chunk {cid!r} overruns the container", pos)
        if cid == b"fmt ":
            if size < 16:
                raise CorruptContainer("fmt chunk too short", pos)
            tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise CorruptContainer("extensible fmt chunk too short", pos)
                tag = struct.unpack_from("<H", data, body + 24)[0]
            fmt = (tag, channels, rate, block_align, bits)
        elif cid == b"data":
            pcm = data[body:body + size]
        pos = body + size + (size & 1)
    if fmt is None or pcm is None:
        raise CorruptContainer("missing fmt or data chunk", 12)
    tag, channels, rate, block_align, bits = fmt
    if channels != 2:
        raise UnsupportedFormat(f"expected 2 channels, got {channels}")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedFormat(f"unsupported sample format tag={tag} bits={bits}")
    if block_align != 2 * dtype.itemsize:
        raise CorruptContainer(f"block align {block_align} inconsistent with format", 12)
    if len(pcm) % block_align:
        raise CorruptContainer("data chunk is not a whole number of frames", 12)
    samples = np.frombuffer(pcm, dtype=dtype).astype(np.float64) * scale
    return StereoClip(rate, samples[0::2], samples[1::2])


def encode_wav(clip: StereoClip) -> bytes:
    """32-bit float stereo WAV (format tag 3)."""
    frames = np.empty(2 * len(clip), dtype="<f4")
    frames[0::2] = clip.left
    frames[1::2] = clip.right
    pcm = frames.tobytes()
    fmt = struct.pack("<HHIIHH", WAVE_FORMAT_IEEE_FLOAT, 2, clip.sample_rate,
                      clip.sample_rate * 8, 8, 32)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(pcm)) + pcm
    return b"RIFF" + struct.pack("<I", len(body)) + body


def read_wav(path) -> StereoClip:
    with open(path, "rb") as f:
        return decode_wav(f.read())


def write_wav(path, clip: StereoClip) -> None:
    with open(path, "wb") as f:
        f.write(encode_wav(clip))


# ---------------------------------------------------------------------------
# intensity map

def channel_rms(clip: StereoClip) -> tuple[float, float]:
    if len(clip) == 0:
        raise EmptyClip("cannot take the RMS of an empty clip")
    return (float(np.sqrt(np.mean(clip.left ** 2))),
            float(np.sqrt(np.mean(clip.right ** 2))))


def intensity_weight(rms_left: float, rms_right: float) -> float:
    peak = max(rms_left, rms_right)
    if peak == 0:
        return 0.0
    return abs(rms_left - rms_right) / peak


def _louder_side(obs: RmsObservation) -> int:
    """+1 when the right ear is louder, -1 when the left is, 0 on a tie."""
    return int(np.sign(obs.rms_right - obs.rms_left))


def side_indicators(pose: CameraPose, centers, obs: RmsObservation) -> np.ndarray:
    """Vectorised ``side_indicator`` over (N, 3) centers, as an int array of 0/1."""
    s = (np.asarray(centers, dtype=np.float64) - pose.position) @ pose.right_axis
    louder = _louder_side(obs)
    return ((louder != 0) & (np.sign(s) == louder)).astype(np.int64)


def side_indicator(pose: CameraPose, center, obs: RmsObservation) -> int:
    return int(side_indicators(pose, np.reshape(center, (1, 3)), obs)[0])


def accumulate_intensity(cloud: GaussianCloud,
                         observations: Sequence[RmsObservation]) -> AudioIntensityMap:
    if not observations:
        raise EmptyObservations("at least one binaural observation is required")
    raw = np.zeros(len(cloud))
    for obs in observations:
        w = intensity_weight(obs.rms_left, obs.rms_right)
        if w == 0:
            continue
        raw += w * side_indicators(obs.pose, cloud.centers, obs)
    return AudioIntensityMap.from_raw(raw)
