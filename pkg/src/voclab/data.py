"""Audio I/O, synthetic corpus generation, and aligned batch sampling."""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import MelFilterbank, StftConfig, aligned_mel_spectrogram
from .tensor import Tensor

SAMPLE_RATE = 22050


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV files."""


@dataclass
class AudioClip:
    samples: np.ndarray  # float in [-1, 1]
    sample_rate: int = SAMPLE_RATE
    id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError(f"clip {self.id!r}: non-finite samples")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise ValueError(f"clip {self.id!r}: samples exceed [-1, 1]")

    def __len__(self):
        return self.samples.size


def read_wav(path):
    """Read a PCM-16 RIFF/WAVE file; stereo is downmixed by averaging."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    if sampwidth != 2:
        raise WavFormatError(f"{path}: only PCM 16-bit supported, got {8 * sampwidth}-bit")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if n_channels > 1:
        pcm = pcm.reshape(-1, n_channels).mean(axis=1)
    return AudioClip(pcm / 32768.0, sample_rate=rate, id=path.stem)


def write_wav(path, clip: AudioClip):
    """Write PCM-16 mono; round half away from zero, clamp to int16 range."""
    x = clip.samples * 32768.0
    pcm = np.sign(x) * np.floor(np.abs(x) + 0.5)
    pcm = np.clip(pcm, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())


@dataclass
class Corpus:
    clips: list
    train_idx: list
    test_idx: list
    provenance: str = ""

    def __post_init__(self):
        overlap = set(self.train_idx) & set(self.test_idx)
        if overlap:
            raise ValueError(f"train/test split overlaps at {sorted(overlap)}")
        if set(self.train_idx) | set(self.test_idx) != set(range(len(self.clips))):
            raise ValueError("train/test split must cover every clip exactly once")

    @property
    def train_clips(self):
        return [self.clips[i] for i in self.train_idx]

    @property
    def test_clips(self):
        return [self.clips[i] for i in self.test_idx]


def synth_corpus(seed, n_clips=72, duration_s=2.0, n_test=8, sample_rate=SAMPLE_RATE):
    """Deterministic harmonic corpus standing in for real speech.

    Each clip is a random-walk f0 contour (110-330 Hz) rendered with 3-6
    harmonics, an ADSR envelope, and -40 dB noise, peak-normalized to 0.9.
    """
    if n_test >= n_clips:
        raise ValueError("n_test must be smaller than n_clips")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    clips = []
    for ci in range(n_clips):
        # f0 control points every 256 samples, slow random walk
        n_ctrl = n // 256 + 2
        steps = rng.normal(0.0, 1.0, n_ctrl)
        f0 = np.clip(rng.uniform(110.0, 330.0) + np.cumsum(steps), 110.0, 330.0)
        f0_samples = np.interp(np.arange(n), np.arange(n_ctrl) * 256, f0)
        phase = 2.0 * np.pi * np.cumsum(f0_samples) / sample_rate
        n_harm = int(rng.integers(3, 7))
        amps = rng.uniform(0.5, 1.0, n_harm) / (np.arange(n_harm) + 1)
        sig = np.zeros(n)
        for h in range(n_harm):
            sig += amps[h] * np.sin((h + 1) * phase)
        sig *= _adsr(n)
        sig += 10 ** (-40 / 20) * rng.standard_normal(n)
        sig *= 0.9 / np.max(np.abs(sig))
        clips.append(AudioClip(sig, sample_rate, id=f"clip{ci:04d}"))
    idx = list(range(n_clips))
    return Corpus(
        clips,
        train_idx=idx[: n_clips - n_test],
        test_idx=idx[n_clips - n_test :],
        provenance=f"synthetic:seed={seed},n={n_clips},dur={duration_s}",
    )


def _adsr(n, attack=0.1, decay=0.1, sustain=0.7, release=0.2):
    env = np.ones(n) * sustain
    na, nd, nr = int(n * attack), int(n * decay), int(n * release)
    env[:na] = np.linspace(0.0, 1.0, na, endpoint=False)
    env[na : na + nd] = np.linspace(1.0, sustain, nd, endpoint=False)
    env[n - nr :] = sustain * np.linspace(1.0, 0.0, nr)
    return env


def save_corpus(corpus: Corpus, out_dir):
    """Write clips as WAVs plus a manifest carrying the split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for clip in corpus.clips:
        write_wav(out_dir / f"{clip.id}.wav", clip)
    manifest = {
        "sample_rate": corpus.clips[0].sample_rate if corpus.clips else SAMPLE_RATE,
        "provenance": corpus.provenance,
        "train": [corpus.clips[i].id for i in corpus.train_idx],
        "test": [corpus.clips[i].id for i in corpus.test_idx],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_corpus(directory):
    """Load a corpus directory (flat folder of WAVs, optional manifest split)."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        ids = manifest["train"] + manifest["test"]
        clips = [read_wav(directory / f"{cid}.wav") for cid in ids]
        train_idx = list(range(len(manifest["train"])))
        test_idx = list(range(len(manifest["train"]), len(ids)))
        provenance = manifest.get("provenance", str(directory))
    else:
        paths = sorted(directory.glob("*.wav"))
        if not paths:
            raise FileNotFoundError(f"no .wav files in {directory}")
        clips = [read_wav(p) for p in paths]
        n_test = max(1, len(clips) // 9)
        train_idx = list(range(len(clips) - n_test))
        test_idx = list(range(len(clips) - n_test, len(clips)))
        provenance = str(directory)
    return Corpus(clips, train_idx, test_idx, provenance)


@dataclass
class Batch:
    wav: Tensor  # [B, 1, L]
    mel: Tensor  # [B, n_mels, L // hop]
    clip_ids: list = field(default_factory=list)
    offsets: list = field(default_factory=list)


def sample_batch(
    corpus_clips,
    segment_len,
    batch_size,
    rng,
    fb: MelFilterbank,
    cfg: StftConfig,
    dtype=np.float32,
):
    """Uniformly sample aligned (waveform, mel) segments from the clips."""
    if segment_len % cfg.hop:
        raise ValueError(f"segment_len {segment_len} must be divisible by hop {cfg.hop}")
    shortest = min(len(c) for c in corpus_clips)
    if segment_len > shortest:
        raise ValueError(f"segment_len {segment_len} exceeds shortest clip ({shortest})")
    wavs, ids, offsets = [], [], []
    for _ in range(batch_size):
        ci = int(rng.integers(0, len(corpus_clips)))
        clip = corpus_clips[ci]
        off = int(rng.integers(0, len(clip) - segment_len + 1))
        wavs.append(clip.samples[off : off + segment_len])
        ids.append(clip.id)
        offsets.append(off)
    wav = np.stack(wavs).astype(dtype)[:, None, :]  # [B, 1, L]
    mel = aligned_mel_spectrogram(Tensor(wav[:, 0, :]), fb, cfg)
    return Batch(wav=Tensor(wav), mel=mel, clip_ids=ids, offsets=offsets)
