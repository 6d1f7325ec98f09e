"""A small synthetic speech-command corpus for tests and demos.

Each "word" is a voiced harmonic burst whose formants depend on the class
and whose pitch, timing and loudness vary per clip. Generation is seeded,
so the same arguments always give the same files.
"""

from pathlib import Path

import numpy as np

from .audio import AudioClip, save_wav
from .poisoner import DatasetManifest, ManifestEntry, write_manifest

SPC10 = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")

# Two formant centres (Hz) per class.
_FORMANTS = {
    "yes": (400, 2200), "no": (500, 900), "up": (700, 1200), "down": (600, 1000),
    "left": (550, 1800), "right": (650, 1400), "on": (600, 900), "off": (650, 1100),
    "stop": (700, 1300), "go": (450, 850),
}


def synth_word(word, rng, sample_rate=16000, duration=1.0):
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f1, f2 = _FORMANTS.get(word, (500, 1500))
    onset = rng.uniform(0.15, 0.35)
    length = rng.uniform(0.35, 0.5)
    f0 = rng.uniform(110.0, 220.0)
    contour = f0 * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t))
    phase = 2 * np.pi * np.cumsum(contour) / sample_rate
    x = np.zeros(n)
    for h in range(1, int(4000 // f0)):
        fh = h * f0
        gain = np.exp(-((fh - f1) / 180.0) ** 2) + 0.6 * np.exp(-((fh - f2) / 250.0) ** 2) + 0.02
        x += gain * np.sin(h * phase)
    env = np.clip((t - onset) / 0.04, 0, 1) * np.clip((onset + length - t) / 0.08, 0, 1)
    x *= env ** 2
    x += 0.002 * rng.standard_normal(n)
    x *= rng.uniform(0.3, 0.7) / np.max(np.abs(x))
    return AudioClip(x, sample_rate)


def make_toy_corpus(out_dir, per_class=2, classes=SPC10, seed=0, prefix=""):
    """Write ``per_class`` clips for each class under ``out_dir/<class>/`` and a
    ``manifest.csv`` beside them. Returns the manifest."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    entries = []
    for label, word in enumerate(classes):
        (out_dir / word).mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            name = f"{prefix}{word}_{i:03d}"
            rel = f"{word}/{name}.wav"
            save_wav(synth_word(word, rng), out_dir / rel)
            entries.append(ManifestEntry(f"{word}/{name}", rel, label))
    manifest = DatasetManifest(tuple(entries), len(classes), out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest
