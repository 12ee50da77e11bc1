"""Audio ingestion and spectral features.

WAV files are parsed directly (RIFF PCM16 / IEEE float32, mono or downmixed)
and resampled to 22050 Hz by linear interpolation when needed.  Mel extraction
follows the fixed recipe recorded in :class:`FeatureConfig`: 1024-point FFT,
1024-sample periodic Hann window, 256-sample hop, reflect padding, 80
Slaney-normalized triangular mel filters spanning 0..11025 Hz, magnitudes
clamped at 1e-5 before natural log.  Griffin-Lim inversion exists for
audibility; synthesis quality metrics never depend on it beyond F0 checks.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensorio
from .autodiff import make_rng

SAMPLE_RATE = 22050


class WavFormatError(ValueError):
    """Malformed RIFF container or unsupported codec."""


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = SAMPLE_RATE
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 11025.0
    mel_floor: float = 1e-5

    @property
    def hop_seconds(self) -> float:
        return self.hop_length / self.sample_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "FeatureConfig":
        return FeatureConfig(**d)

    def settings_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:16]


@dataclass
class Waveform:
    """Mono samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    """T x D matrix of natural-log mel energies plus frame metadata."""

    frames: np.ndarray
    hop_seconds: float = 256 / SAMPLE_RATE

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise ValueError(f"mel frames must be 2-D, got shape {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_channels(self) -> int:
        return self.frames.shape[1]

    @property
    def seconds(self) -> float:
        return self.n_frames * self.hop_seconds

    def save(self, path) -> None:
        tensorio.save_tensors(path, {
            "frames": self.frames.astype(np.float32),
            "hop_seconds": np.array(self.hop_seconds, dtype=np.float64),
        })

    @staticmethod
    def load(path) -> "MelSpectrogram":
        blocks = tensorio.load_tensors(path)
        return MelSpectrogram(blocks["frames"], float(blocks["hop_seconds"]))


# -- WAV I/O -----------------------------------------------------------------


def load_wav(path, target_rate: int = SAMPLE_RATE) -> Waveform:
    """Read a RIFF WAV (PCM16 or float32), downmix to mono, resample."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (chunk_size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)
    if fmt is None or data is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if audio_format == 1 and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
    elif audio_format == 3 and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float32)
    else:
        raise WavFormatError(
            f"{path}: unsupported codec (format {audio_format}, {bits}-bit); "
            "expected PCM16 or IEEE float32"
        )
    if channels > 1:
        x = x[: len(x) - len(x) % channels].reshape(-1, channels).mean(axis=1)
    if rate != target_rate:
        x = resample_linear(x, rate, target_rate)
    return Waveform(np.clip(x, -1.0, 1.0), target_rate)


def write_wav(path, wav: Waveform, bits: int = 16) -> None:
    """Write mono PCM16 (default) or IEEE float32."""
    x = np.asarray(wav.samples, dtype=np.float32).reshape(-1)
    if bits == 16:
        payload = (np.clip(x, -1.0, 1.0) * 32767.0).round().astype("<i2").tobytes()
        audio_format, block, bps = 1, 2, 16
    elif bits == 32:
        payload = x.astype("<f4").tobytes()
        audio_format, block, bps = 3, 4, 32
    else:
        raise WavFormatError(f"unsupported bit depth {bits}")
    sr = wav.sample_rate
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16,
        audio_format, 1, sr, sr * block, block, bps,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


def resample_linear(x: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    """Linear-interpolation resampler (adequate for speech-band content)."""
    if sr_in == sr_out:
        return np.asarray(x, dtype=np.float32)
    n_out = int(round(len(x) * sr_out / sr_in))
    t_out = np.arange(n_out) * (sr_in / sr_out)
    return np.interp(t_out, np.arange(len(x)), x).astype(np.float32)


# -- STFT machinery -----------------------------------------------------------


def _hann(n: int) -> np.ndarray:
    # periodic Hann, matching the analysis convention of the mel recipe
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)).astype(np.float64)


def stft(x: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Complex STFT (frames x bins) with reflect padding of n_fft // 2."""
    x = np.asarray(x, dtype=np.float64)
    pad = cfg.n_fft // 2
    if len(x) < 1:
        raise ValueError("stft: empty signal")
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (len(xp) - cfg.n_fft) // cfg.hop_length
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.n_fft)[:: cfg.hop_length]
    frames = frames[:n_frames] * _hann(cfg.win_length)
    return np.fft.rfft(frames, n=cfg.n_fft, axis=1)


def istft(spec: np.ndarray, cfg: FeatureConfig = FeatureConfig(),
          length: int | None = None) -> np.ndarray:
    """Inverse STFT by windowed overlap-add with squared-window normalization."""
    window = _hann(cfg.win_length)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1) * window
    n_frames = frames.shape[0]
    total = cfg.n_fft + cfg.hop_length * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = window * window
    for i in range(n_frames):
        start = i * cfg.hop_length
        out[start:start + cfg.n_fft] += frames[i]
        norm[start:start + cfg.n_fft] += wsq
    out /= np.maximum(norm, 1e-10)
    pad = cfg.n_fft // 2
    out = out[pad:]
    if length is not None:
        out = out[:length]
    else:
        out = out[: total - 2 * pad]
    return out


# -- mel filterbank ------------------------------------------------------------


def _hz_to_mel(hz):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    hz = np.asarray(hz, dtype=np.float64)
    mel = hz / (200.0 / 3.0)
    log_region = hz >= 1000.0
    mel = np.where(log_region, 15.0 + np.log(np.maximum(hz, 1e-12) / 1000.0) / (np.log(6.4) / 27.0), mel)
    return mel


def _mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    hz = mel * (200.0 / 3.0)
    log_region = mel >= 15.0
    hz = np.where(log_region, 1000.0 * np.exp((np.log(6.4) / 27.0) * (mel - 15.0)), hz)
    return hz


_FB_CACHE: dict = {}


def mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Slaney-normalized triangular filters, rows: mel bands, cols: FFT bins."""
    key = cfg.settings_hash()
    if key in _FB_CACHE:
        return _FB_CACHE[key]
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    mel_pts = np.linspace(_hz_to_mel(cfg.fmin), _hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins))
    for i in range(cfg.n_mels):
        lo, ctr, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (fft_freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - ctr, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
        fb[i] *= 2.0 / (hi - lo)  # Slaney area normalization
    _FB_CACHE[key] = fb
    return fb


def mel_center_frequencies(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    mel_pts = np.linspace(_hz_to_mel(cfg.fmin), _hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return _mel_to_hz(mel_pts)[1:-1]


# -- feature extraction ----------------------------------------------------------


def mel_spectrogram(wav: Waveform, cfg: FeatureConfig = FeatureConfig()) -> MelSpectrogram:
    """Log-mel features of a waveform (magnitude filterbank, natural log)."""
    x = wav.samples
    if len(x) < cfg.n_fft:
        raise ValueError(
            f"mel_spectrogram: signal too short ({len(x)} samples < n_fft {cfg.n_fft})"
        )
    if wav.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"mel_spectrogram: waveform rate {wav.sample_rate} != configured {cfg.sample_rate}"
        )
    mag = np.abs(stft(x, cfg))
    mel = mag @ mel_filterbank(cfg).T
    logmel = np.log(np.maximum(mel, cfg.mel_floor))
    return MelSpectrogram(logmel.astype(np.float32), cfg.hop_seconds)


def mel_to_linear(mel: MelSpectrogram, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Invert the filterbank by pseudo-inverse; clamps to non-negative."""
    key = ("pinv", cfg.settings_hash())
    if key not in _FB_CACHE:
        _FB_CACHE[key] = np.linalg.pinv(mel_filterbank(cfg))
    energies = np.exp(np.asarray(mel.frames, dtype=np.float64))
    return np.maximum(energies @ _FB_CACHE[key].T, 0.0)


def griffin_lim(mel: MelSpectrogram, iters: int = 60,
                cfg: FeatureConfig = FeatureConfig(), seed: int = 0,
                return_residual: bool = False):
    """Iterative phase reconstruction from a mel spectrogram.

    Returns a peak-normalized waveform; with ``return_residual`` also returns
    the final spectral-convergence residual ||S - |STFT(y)||| / ||S||, which is
    non-increasing in the iteration count for a fixed seed.
    """
    if iters < 1:
        raise ValueError("griffin_lim: iters must be >= 1")
    target = np.sqrt(np.maximum(mel_to_linear(mel, cfg), 0.0))
    if not np.all(np.isfinite(target)):
        raise ValueError("griffin_lim: non-finite input spectrogram")
    rng = make_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(target.shape))
    denom = max(np.linalg.norm(target), 1e-12)
    residual = np.inf
    rebuilt = None
    for _ in range(iters):
        y = istft(target * angles, cfg)
        rebuilt = stft(y, cfg)[: target.shape[0]]
        residual = np.linalg.norm(target - np.abs(rebuilt)) / denom
        angles = np.exp(1j * np.angle(rebuilt))
    y = istft(target * angles, cfg)
    peak = np.abs(y).max()
    if peak > 1e-8:
        y = y * (0.95 / peak)
    wav = Waveform(y.astype(np.float32), cfg.sample_rate)
    if return_residual:
        return wav, float(residual)
    return wav
