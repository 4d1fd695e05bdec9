"""Model backends behind config-string identifiers.

``stub:`` backends are deterministic, content-derived reference
implementations that run offline: captions come from digest-seeded word
pools, event logits from coarse spectral band energies, embeddings from
projected signal statistics (audio) and keyframe digests (video). ``hf:``
identifiers lazily wrap transformers checkpoints and raise
``BackendUnavailable`` when the environment cannot load them; callers record
that per clip and continue.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import BackendUnavailable, ConfigError, DataError

ABSTAIN_TOKEN = "none"


def _digest_seed(*parts: str | bytes) -> int:
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(part.encode() if isinstance(part, str) else part)
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def _read_keyframes(paths: list[Path]) -> bytes:
    blob = hashlib.blake2b(digest_size=16)
    for p in sorted(paths, key=lambda p: p.name):
        try:
            blob.update(p.name.encode())
            blob.update(p.read_bytes())
        except OSError as e:
            raise DataError(f"cannot read keyframe {p}: {e}")
    return blob.digest()


def read_audio(path: Path) -> tuple[np.ndarray, int]:
    """Mono float64 samples; PCM16/32 and float32/64 WAV supported."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as e:
        raise DataError(f"cannot read audio {path}: {e}")
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if np.issubdtype(np.asarray(data).dtype, np.integer):
        x = x / float(np.iinfo(np.asarray(data).dtype).max)
    return x, int(rate)


def band_energies(x: np.ndarray, n_bands: int) -> np.ndarray:
    """Coarse contiguous-band spectral energies; the stub feature core."""
    spectrum = np.abs(np.fft.rfft(x)) ** 2
    usable = spectrum[1:]  # drop DC so silence maps to zeros
    edges = np.linspace(0, usable.size, n_bands + 1).astype(int)
    return np.array([usable[a:b].sum() for a, b in zip(edges, edges[1:])])


# ---------------------------------------------------------------------------
# captioner
# ---------------------------------------------------------------------------

_WORDS = {
    "Emotion": (["calm", "tense", "joyful", "weary", "focused", "uneasy"],
                "{a} faces, with a {b} undertone"),
    "Scene": (["kitchen", "street", "workshop", "office", "stairwell", "yard"],
              "a {a} in daylight, near an empty {b}"),
    "Tone": (["warm", "cold", "muted", "saturated", "dim", "harsh"],
             "{a} palette with {b} lighting"),
    "CameraFocus": (["hand", "door", "face", "radio", "window", "kettle"],
                    "the {a}, shallow depth of field over the {b}"),
}
_NOUNS = ["ceiling fan", "door", "radio", "kettle", "window", "chair",
          "phone", "sink", "clock", "cupboard"]


class StubCaptioner:
    """Digest-seeded captions, pre-normalized for the caption schema."""

    def __init__(self, model_id: str):
        self.model_id = model_id

    def caption(self, prompt: str, keyframes: list[Path], clip_id: str,
                aspect: str, family: str) -> str:
        if aspect == "SoundSources" and family == "Focused" and not keyframes:
            # no visual evidence to ground a source: abstain
            return ABSTAIN_TOKEN
        frame_digest = _read_keyframes(keyframes) if keyframes else b"none"
        rng = np.random.default_rng(
            _digest_seed(self.model_id, prompt, clip_id, aspect, family,
                         frame_digest))
        if aspect in ("Objects", "SoundSources"):
            count = int(rng.integers(2, 5))
            picks = rng.choice(len(_NOUNS), size=count, replace=False)
            return ", ".join(_NOUNS[i] for i in picks)
        pool, template = _WORDS[aspect]
        a, b = (pool[i] for i in rng.choice(len(pool), size=2, replace=False))
        return template.format(a=a, b=b)


# ---------------------------------------------------------------------------
# tagger
# ---------------------------------------------------------------------------

class StubTagger:
    """Log band energies as event logits over a fixed label space."""

    def __init__(self, model_id: str, n_classes: int):
        self.model_id = model_id
        self.n_classes = n_classes
        self.label_space = f"stubtag-{n_classes}"

    def logits(self, audio_path: Path) -> np.ndarray:
        x, _rate = read_audio(audio_path)
        return np.log(band_energies(x, self.n_classes) + 1e-12)


# ---------------------------------------------------------------------------
# embedder
# ---------------------------------------------------------------------------

class StubEmbedder:
    """Joint-space vectors: projected spectral stats (audio) and
    digest-seeded directions (video). Content-identical inputs map to
    identical vectors."""

    N_FEATURES = 16

    def __init__(self, model_id: str, dim: int):
        self.model_id = model_id
        self.dim = dim
        self.space = f"stubbind-{dim}"
        rng = np.random.default_rng(_digest_seed(self.space))
        self._proj = rng.normal(size=(dim, self.N_FEATURES)) / np.sqrt(
            self.N_FEATURES)

    def embed_audio(self, audio_path: Path) -> np.ndarray:
        x, _rate = read_audio(audio_path)
        feats = np.log1p(band_energies(x, self.N_FEATURES))
        vec = self._proj @ feats
        vec[0] += 1.0  # silence still yields a nonzero norm
        return vec / np.linalg.norm(vec)

    def embed_video(self, keyframes: list[Path]) -> np.ndarray:
        if not keyframes:
            raise DataError("no keyframes to embed")
        rng = np.random.default_rng(
            _digest_seed(self.space, _read_keyframes(keyframes)))
        vec = rng.normal(size=self.dim)
        return vec / np.linalg.norm(vec)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def _hf_unavailable(model_id: str) -> BackendUnavailable:
    try:
        import transformers  # noqa: F401
    except ImportError:
        return BackendUnavailable(
            f"{model_id}: transformers is not installed in this environment"
        )
    return BackendUnavailable(
        f"{model_id}: loading pretrained checkpoints is not wired up in this "
        f"build; use a stub: backend or extend embed_export.backends"
    )


def get_captioner(model_id: str) -> StubCaptioner:
    if model_id.startswith("stub:"):
        return StubCaptioner(model_id)
    if model_id.startswith("hf:"):
        raise _hf_unavailable(model_id)
    raise ConfigError(f"unknown captioner id {model_id!r}")


def get_tagger(model_id: str) -> StubTagger:
    if model_id.startswith("stub:"):
        tail = model_id.rsplit("-", 1)[-1]
        n = int(tail) if tail.isdigit() else 24
        return StubTagger(model_id, n)
    if model_id.startswith("hf:"):
        raise _hf_unavailable(model_id)
    raise ConfigError(f"unknown tagger id {model_id!r}")


def get_embedder(model_id: str) -> StubEmbedder:
    if model_id.startswith("stub:"):
        tail = model_id.rsplit("-", 1)[-1]
        dim = int(tail) if tail.isdigit() else 64
        return StubEmbedder(model_id, dim)
    if model_id.startswith("hf:"):
        raise _hf_unavailable(model_id)
    raise ConfigError(f"unknown embedder id {model_id!r}")
