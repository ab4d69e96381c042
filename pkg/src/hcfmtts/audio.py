"""Log-mel features, MCD and F0-RMSE, plus waveform/mel file I/O."""

from dataclasses import asdict, dataclass, fields
import math
import wave
import warnings

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import get_window

from .errors import ContractError

LN10 = math.log(10.0)
MCD_COEFFS = 13
F0_MIN, F0_MAX = 50.0, 500.0
VOICING_THRESHOLD = 0.3


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    frame_length_ms: float = 50.0
    frame_shift_ms: float = 12.5
    n_fft: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 0.0   # 0 means sample_rate / 2
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.frame_length_ms < self.frame_shift_ms:
            raise ContractError("frame length must be >= frame shift")
        if self.n_fft < self.frame_samples:
            raise ContractError(f"n_fft {self.n_fft} < frame of {self.frame_samples} samples")
        if self.n_mels < 1 or self.hop_samples < 1:
            raise ContractError("need at least one mel bin and a positive hop")

    @property
    def frame_samples(self):
        return int(round(self.sample_rate * self.frame_length_ms / 1000.0))

    @property
    def hop_samples(self):
        # 12.5 ms at 44.1 kHz is 551.25 samples; the hop is rounded down
        return int(math.floor(self.sample_rate * self.frame_shift_ms / 1000.0 + 1e-9))

    @property
    def f_max(self):
        return self.fmax if self.fmax > 0 else self.sample_rate / 2.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        kinds = {f.name: f.type for f in fields(cls)}
        return cls(**{k: (int if kinds[k] in (int, "int") else float)(v) for k, v in d.items()})


@dataclass
class MelSpectrogram:
    values: np.ndarray   # [frames, bins] natural-log mel energies
    config: MelConfig

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ContractError(f"mel spectrogram needs shape [frames>=1, bins], got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("mel spectrogram has non-finite values")

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def bins(self):
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg):
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    return pts[1:-1]


def mel_filterbank(cfg):
    """HTK-scale triangular filters with unit peak, shape [n_mels, n_fft//2 + 1]."""
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def frame_signal(x, cfg):
    n = cfg.frame_samples
    if len(x) < n:
        raise ContractError(f"waveform of {len(x)} samples is shorter than one frame ({n})")
    count = 1 + (len(x) - n) // cfg.hop_samples
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[::cfg.hop_samples]
    return frames[:count]


def mel_spectrogram(waveform, cfg=None):
    """Hann window, magnitude STFT, HTK mel filterbank, natural log with floor."""
    cfg = cfg or MelConfig()
    x = np.asarray(waveform, dtype=np.float64)
    frames = frame_signal(x, cfg) * get_window("hann", cfg.frame_samples)
    mag = np.abs(rfft(frames, n=cfg.n_fft, axis=-1))
    mel = mag @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)), cfg)


def _values(m):
    return m.values if isinstance(m, MelSpectrogram) else np.asarray(m, dtype=np.float64)


def mel_cepstrum(log_mel):
    return dct(np.asarray(log_mel, dtype=np.float64), type=2, norm="ortho", axis=-1)


def mcd(a, b):
    """Mean over frames of (10 / ln 10) * sqrt(2 * sum_{d=1..13} (c_a,d - c_b,d)^2).

    Cepstra are the orthonormal DCT-II of each log-mel frame; c0 is excluded
    and no time alignment is performed.
    """
    va, vb = _values(a), _values(b)
    if va.shape != vb.shape:
        raise ContractError(f"mcd needs equal shapes, got {va.shape} and {vb.shape}")
    if isinstance(a, MelSpectrogram) and isinstance(b, MelSpectrogram) and a.config != b.config:
        raise ContractError("mcd needs spectrograms computed with the same config")
    hi = min(MCD_COEFFS, va.shape[1] - 1) + 1
    diff = mel_cepstrum(va)[:, 1:hi] - mel_cepstrum(vb)[:, 1:hi]
    per_frame = (10.0 / LN10) * np.sqrt(2.0 * np.sum(diff * diff, axis=1))
    return float(per_frame.mean())


def _normalized_autocorr(frame, lags):
    n = len(frame)
    spec = rfft(frame, n=2 * n)
    ac = np.fft.irfft(np.abs(spec) ** 2)[:n]
    energy = np.concatenate([[0.0], np.cumsum(frame * frame)])
    head = energy[n - lags]                 # sum x[0 : n-lag]^2
    tail = energy[n] - energy[lags]         # sum x[lag : n]^2
    denom = np.sqrt(head * tail)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(denom > 0, ac[lags] / denom, 0.0)
    return r


def estimate_f0(waveform, cfg=None):
    """Per-frame autocorrelation F0 in [50, 500] Hz.

    Returns (f0 [frames], voiced [frames]). The pitch lag is the shortest
    local autocorrelation peak within 90% of the best one, refined by
    parabolic interpolation; a frame is voiced if that peak exceeds 0.3.
    """
    cfg = cfg or MelConfig()
    x = np.asarray(waveform, dtype=np.float64)
    sr = cfg.sample_rate
    lo = int(math.floor(sr / F0_MAX))
    hi = int(math.ceil(sr / F0_MIN))
    frames = frame_signal(x, cfg)
    lags = np.arange(lo - 1, min(hi + 1, cfg.frame_samples - 2) + 1)
    f0 = np.zeros(len(frames))
    voiced = np.zeros(len(frames), dtype=bool)
    for i, frame in enumerate(frames):
        frame = frame - frame.mean()
        r = _normalized_autocorr(frame, lags)
        inner = np.arange(1, len(lags) - 1)
        peaks = inner[(r[inner] > r[inner - 1]) & (r[inner] >= r[inner + 1])]
        if len(peaks) == 0:
            continue
        best = r[peaks].max()
        j = peaks[r[peaks] >= 0.9 * best][0]
        if r[j] <= VOICING_THRESHOLD:
            continue
        a, b, c = r[j - 1], r[j], r[j + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
        f0[i] = sr / (lags[j] + shift)
        voiced[i] = True
    return f0, voiced


@dataclass
class F0Result:
    rmse: float
    co_voiced_frames: int
    no_voicing: bool

    def __float__(self):
        return self.rmse


def f0_rmse(a, b, cfg=None):
    """RMSE in Hz over frames voiced in both signals.

    With no co-voiced frame the result is 0 with ``no_voicing`` set.
    """
    cfg = cfg or MelConfig()
    if len(a) != len(b):
        raise ContractError(f"f0_rmse needs equal lengths, got {len(a)} and {len(b)}")
    fa, va = estimate_f0(a, cfg)
    fb, vb = estimate_f0(b, cfg)
    both = va & vb
    if not both.any():
        warnings.warn("f0_rmse: no co-voiced frames", RuntimeWarning, stacklevel=2)
        return F0Result(0.0, 0, True)
    err = fa[both] - fb[both]
    return F0Result(float(np.sqrt(np.mean(err * err))), int(both.sum()), False)


# -- file formats ------------------------------------------------------------

def read_wav(path):
    """16-bit PCM mono RIFF -> (float samples in [-1, 1), sample rate)."""
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2 or w.getnchannels() != 1:
            raise ContractError(f"{path}: only 16-bit mono PCM is supported")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, samples, sample_rate):
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())


def read_raw_f32(path):
    return np.fromfile(str(path), dtype="<f4").astype(np.float64)


def write_raw_f32(path, samples):
    np.asarray(samples, dtype="<f4").tofile(str(path))


def save_mel_csv(path, mel):
    header = ",".join(f"{k}={v}" for k, v in mel.config.to_dict().items())
    np.savetxt(str(path), mel.values, fmt="%.9g", delimiter=",", header=header, comments="# ")


def load_mel_csv(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    cfg = MelConfig()
    if first.startswith("#"):
        pairs = dict(kv.split("=", 1) for kv in first[1:].strip().split(",") if "=" in kv)
        cfg = MelConfig.from_dict(pairs)
    values = np.loadtxt(str(path), delimiter=",", comments="#", ndmin=2)
    return MelSpectrogram(values, cfg)
