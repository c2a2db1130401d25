"""Objective evaluation: mel-cepstral distortion and f0 frame error."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AudioClip, read_wav
from .dsp import F0Config, StftConfig, estimate_f0, mel_cepstra, mel_spectrogram, mel_filterbank

MCD_COEFFS = 13  # coefficient 0 is excluded from the distance
GROSS_PITCH_ERROR = 0.2


def _check_pair(ref: AudioClip, syn: AudioClip):
    if ref.sample_rate != syn.sample_rate:
        raise ValueError(
            f"sample rates differ: {ref.sample_rate} vs {syn.sample_rate}"
        )
    n = min(len(ref), len(syn))
    return ref.samples[:n], syn.samples[:n], ref.sample_rate


def mcd_from_cepstra(c_ref, c_syn):
    """Mean per-frame distortion (10/ln10)*sqrt(2*sum_d diff^2) in dB.

    Inputs are [n_coeffs, frames] cepstra; coefficient 0 (overall gain) is
    excluded from the distance, frames are index-aligned and truncated to the
    shorter sequence.
    """
    n = min(c_ref.shape[1], c_syn.shape[1])
    if n < 1:
        raise ValueError("mcd: fewer than one common frame")
    diff = c_ref[1:, :n] - c_syn[1:, :n]
    per_frame = (10.0 / math.log(10.0)) * np.sqrt(2.0 * np.sum(diff**2, axis=0))
    return float(per_frame.mean())


def mcd(ref: AudioClip, syn: AudioClip):
    """Mean per-frame mel-cepstral distortion in dB over index-aligned frames."""
    r, s, sr = _check_pair(ref, syn)
    cfg = StftConfig(fft_size=1024, win_length=1024, hop=256, center_pad=True)
    fb = mel_filterbank(80, sr, 0.0, sr / 2.0, fft_size=1024)
    c_ref = mel_cepstra(mel_spectrogram(r, fb, cfg).data, MCD_COEFFS)
    c_syn = mel_cepstra(mel_spectrogram(s, fb, cfg).data, MCD_COEFFS)
    return mcd_from_cepstra(c_ref, c_syn)


def ffe(ref: AudioClip, syn: AudioClip):
    """Fraction of frames with a voicing mismatch or >20% pitch deviation."""
    r, s, sr = _check_pair(ref, syn)
    cfg = F0Config(sample_rate=sr)
    f0_ref, v_ref = estimate_f0(r, cfg)
    f0_syn, v_syn = estimate_f0(s, cfg)
    n = min(f0_ref.size, f0_syn.size)
    if n < 1:
        raise ValueError("ffe: fewer than one common frame")
    f0_ref, v_ref, f0_syn, v_syn = f0_ref[:n], v_ref[:n], f0_syn[:n], v_syn[:n]
    voicing_err = v_ref != v_syn
    both = v_ref & v_syn
    pitch_err = np.zeros(n, dtype=bool)
    pitch_err[both] = (
        np.abs(f0_syn[both] - f0_ref[both]) / f0_ref[both] > GROSS_PITCH_ERROR
    )
    return float(np.mean(voicing_err | pitch_err))


@dataclass
class EvalReport:
    pairs: list = field(default_factory=list)  # {id, mcd, ffe, frames}
    unmatched: list = field(default_factory=list)
    mcd_mean: float = 0.0
    mcd_std: float = 0.0
    ffe_mean: float = 0.0
    ffe_std: float = 0.0

    def to_json(self):
        return json.dumps(
            {
                "pairs": self.pairs,
                "unmatched": self.unmatched,
                "aggregates": {
                    "mcd_mean": self.mcd_mean,
                    "mcd_std": self.mcd_std,
                    "ffe_mean": self.ffe_mean,
                    "ffe_std": self.ffe_std,
                },
            },
            indent=2,
        )

    def write(self, out_base):
        out_base = Path(out_base)
        out_base.parent.mkdir(parents=True, exist_ok=True)
        out_base.with_suffix(".json").write_text(self.to_json())
        with open(out_base.with_suffix(".csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "mcd_db", "ffe", "frames"])
            for p in self.pairs:
                writer.writerow([p["id"], p["mcd"], p["ffe"], p["frames"]])


def evaluate_corpus(ref_dir, syn_dir):
    """Pair WAVs by stem across two directories and aggregate both metrics."""
    ref_dir, syn_dir = Path(ref_dir), Path(syn_dir)
    ref_paths = {p.stem: p for p in sorted(ref_dir.glob("*.wav"))}
    syn_paths = {p.stem: p for p in sorted(syn_dir.glob("*.wav"))}
    report = EvalReport()
    report.unmatched = sorted(set(ref_paths) ^ set(syn_paths))
    for stem in sorted(set(ref_paths) & set(syn_paths)):
        ref = read_wav(ref_paths[stem])
        syn = read_wav(syn_paths[stem])
        cfg = F0Config(sample_rate=ref.sample_rate)
        n_frames = max(0, (min(len(ref), len(syn)) - cfg.frame_length) // cfg.hop + 1)
        report.pairs.append(
            {"id": stem, "mcd": mcd(ref, syn), "ffe": ffe(ref, syn), "frames": n_frames}
        )
    if report.pairs:
        mcds = np.array([p["mcd"] for p in report.pairs])
        ffes = np.array([p["ffe"] for p in report.pairs])
        report.mcd_mean, report.mcd_std = float(mcds.mean()), float(mcds.std())
        report.ffe_mean, report.ffe_std = float(ffes.mean()), float(ffes.std())
    return report
