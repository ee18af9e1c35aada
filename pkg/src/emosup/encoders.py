"""Frozen encoder abstraction plus two concrete backends.

An :class:`EncoderSuite` bundles the four frozen maps the rest of the
toolkit depends on: a visual encoder and a text encoder landing in one
shared embedding space, a tokenizer, and an identity backbone. The
synthetic backend generates a fully known linear world so every
downstream behaviour has a computable ground truth; the precomputed
backend serves externally extracted features from files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .emotions import (EMOTION_WORD_POSITION, EMOTIONS, EmotionLabel,
                       parse_emotion, prompt_for)
from .errors import ContractError, GenerationError
from .numerics import as_vector

FEATURE_MAGIC = b"PCMF"


@dataclass
class TokenSequence:
    """Ordered token vectors of uniform dimension."""

    tokens: list[np.ndarray]

    def __post_init__(self):
        if not self.tokens:
            raise ContractError("token sequence must contain at least one token")
        d = self.tokens[0].shape
        self.tokens = [as_vector(t, name=f"token {i}") for i, t in enumerate(self.tokens)]
        if any(t.shape != d for t in self.tokens):
            raise ContractError("tokens must share one dimension")

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def token_dim(self) -> int:
        return self.tokens[0].shape[0]


@dataclass(frozen=True)
class EncoderSuite:
    """Bundle of frozen encoder callables over a shared embedding space.

    ``visual_encode`` and ``text_encode`` both land in dimension ``d_e``;
    ``backbone_identity`` produces ``d_b``-dim identity features and
    ``tokenize`` produces ``d_tok``-dim token sequences. All maps are
    deterministic and never change once the suite is built.
    ``text_token_vjp(seq, i, u)`` backpropagates an upstream embedding
    gradient ``u`` onto token ``i`` of ``seq`` (the encoders are frozen;
    only prompt tokens ever receive gradients).
    """

    visual_encode: Callable[[object], np.ndarray]
    backbone_identity: Callable[[object], np.ndarray]
    tokenize: Callable[[str], TokenSequence]
    text_encode: Callable[[TokenSequence], np.ndarray]
    text_token_vjp: Callable[[TokenSequence, int, np.ndarray], np.ndarray]
    d_e: int
    d_b: int
    d_tok: int


def position_weight(i: int, length: int) -> float:
    """Weight of token ``i`` in a ``length``-token sequence: 1/(1+d) with d
    the distance from the sequence end.

    Anchoring weights at the end makes prepending purely additive: every
    existing token keeps its weight and the new front token contributes
    its own weighted image, nothing else moves.
    """
    return 1.0 / (1.0 + (length - 1 - i))


def _hash_generator(*parts: object) -> np.random.Generator:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    if rows < cols:
        raise ContractError(f"cannot draw {cols} orthonormal columns in {rows} rows")
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    # fix the gauge so the draw is unique given the Gaussian sample
    return q * np.sign(np.diag(r))


@dataclass(frozen=True)
class WorldConfig:
    """Generation parameters for a synthetic encoder world."""

    n_identities: int = 4
    d_latent: int = 16
    d_e: int = 64
    d_b: int = 32
    d_tok: int = 32
    noise_sigma: float = 0.05
    gap: float = 1.0          # norm of the constant visual-vs-text offset
    word_token_scale: float = 0.3

    def validate(self) -> None:
        dims = dict(d_latent=self.d_latent, d_e=self.d_e, d_b=self.d_b, d_tok=self.d_tok)
        for name, d in dims.items():
            if d <= 0:
                raise ContractError(f"{name} must be positive, got {d}")
        if self.n_identities < 2:
            raise ContractError("need at least 2 identities")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be >= 0")
        if self.gap < 0:
            raise ContractError("gap must be >= 0")
        if not (self.d_latent <= self.d_tok <= self.d_e and self.d_latent <= self.d_b):
            raise ContractError("dims must satisfy d_latent <= d_tok <= d_e and "
                                "d_latent <= d_b")

    def to_dict(self) -> dict:
        return {"n_identities": self.n_identities, "d_latent": self.d_latent,
                "d_e": self.d_e, "d_b": self.d_b, "d_tok": self.d_tok,
                "noise_sigma": self.noise_sigma, "gap": self.gap,
                "word_token_scale": self.word_token_scale}

    @staticmethod
    def from_dict(d: dict) -> "WorldConfig":
        return WorldConfig(**d)


@dataclass
class SyntheticWorld:
    """A deterministic linear embedding world with known ground truth.

    The latent structure: identity latents ``z_i`` on the unit sphere and
    seven orthonormal emotion prototypes ``e_k``, both in latent space.
    The visual embedding of (identity i, emotion k, replicate j) is

        visual_map @ (z_i + e_k) + offset + noise(i, k, j)

    and the plain-prompt text embedding of emotion k is exactly
    ``text_map @ e_k`` (the emotion-word tokens are solved to make the
    linear positional text encoder land there). The identity backbone
    returns ``backbone_map @ z_i``.
    """

    seed: int
    config: WorldConfig
    emotion_prototypes: np.ndarray      # 7 x d_latent, orthonormal rows
    identity_latents: np.ndarray        # n_identities x d_latent, unit rows
    modality_offset: np.ndarray         # d_e
    visual_map: np.ndarray              # d_e x d_latent
    text_map: np.ndarray                # d_e x d_latent (= token_map @ latent_to_token)
    backbone_map: np.ndarray            # d_b x d_latent
    token_map: np.ndarray               # d_e x d_tok
    latent_to_token: np.ndarray         # d_tok x d_latent
    emotion_word_tokens: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def identity_names(self) -> list[str]:
        return [f"id{i:03d}" for i in range(self.config.n_identities)]

    def identity_index(self, identity: str) -> int:
        names = self.identity_names
        try:
            return names.index(identity)
        except ValueError:
            raise KeyError(f"unknown identity {identity!r}") from None

    def image_ref(self, identity: str, emotion: EmotionLabel, replicate: int) -> str:
        return f"img:{identity}:{EmotionLabel(emotion).name}:{replicate}"

    def clean_visual(self, identity: str, emotion: EmotionLabel) -> np.ndarray:
        """Noise-free visual embedding of (identity, emotion)."""
        z = self.identity_latents[self.identity_index(identity)]
        e = self.emotion_prototypes[int(emotion)]
        return self.visual_map @ (z + e) + self.modality_offset

    def text_prototype(self, emotion: EmotionLabel) -> np.ndarray:
        """Plain-prompt text embedding of an emotion (= text_map @ prototype)."""
        return self.text_map @ self.emotion_prototypes[int(emotion)]

    def word_token(self, word: str) -> np.ndarray:
        if word in self.emotion_word_tokens:
            return self.emotion_word_tokens[word]
        rng = _hash_generator(self.seed, "word", word)
        t = rng.standard_normal(self.config.d_tok)
        return self.config.word_token_scale * t / np.linalg.norm(t)

    def _noise(self, ref: str) -> np.ndarray:
        if self.config.noise_sigma == 0:
            return np.zeros(self.config.d_e)
        rng = _hash_generator(self.seed, "noise", ref)
        return self.config.noise_sigma * rng.standard_normal(self.config.d_e)

    def visual_embedding(self, ref: str) -> np.ndarray:
        identity, emotion_name, _rep = self._parse_ref(ref)
        clean = self.clean_visual(identity, parse_emotion(emotion_name))
        return clean + self._noise(ref)

    def _parse_ref(self, ref: str) -> tuple[str, str, int]:
        parts = ref.split(":")
        if len(parts) != 4 or parts[0] != "img":
            raise KeyError(f"unknown image ref {ref!r}")
        return parts[1], parts[2], int(parts[3])


def build_synthetic_world(seed: int, config: WorldConfig | None = None) -> SyntheticWorld:
    """Build a reproducible synthetic world; same seed gives identical worlds."""
    config = config or WorldConfig()
    config.validate()
    rng = np.random.Generator(np.random.PCG64(seed))

    prototypes = _orthonormal_columns(rng, config.d_latent, len(EMOTIONS)).T
    identities = _unit_rows(rng, config.n_identities, config.d_latent)

    def draw_full_rank(rows: int, cols: int, name: str) -> np.ndarray:
        for _ in range(10):
            m = _orthonormal_columns(rng, rows, cols)
            if np.linalg.matrix_rank(m) == cols:
                return m
        raise GenerationError(f"{name} mixing map rank-deficient after 10 redraws")

    token_map = draw_full_rank(config.d_e, config.d_tok, "token")
    latent_to_token = draw_full_rank(config.d_tok, config.d_latent, "latent-to-token")
    backbone_map = draw_full_rank(config.d_b, config.d_latent, "backbone")
    text_map = token_map @ latent_to_token
    if np.linalg.matrix_rank(text_map) < config.d_latent:
        raise GenerationError("text mixing map rank-deficient")
    # The visual map must agree with the text map on the prototype span so a
    # matching emotion lands at the same place in both modalities (up to the
    # constant offset); off that span it varies freely (identity directions).
    visual_extra = draw_full_rank(config.d_e, config.d_latent, "visual")
    proto_complement = np.eye(config.d_latent) - prototypes.T @ prototypes
    visual_map = text_map + visual_extra @ proto_complement
    if np.linalg.matrix_rank(visual_map) < config.d_latent:
        raise GenerationError("visual mixing map rank-deficient")

    if config.gap > 0:
        g = rng.standard_normal(config.d_e)
        offset = config.gap * g / np.linalg.norm(g)
    else:
        offset = np.zeros(config.d_e)

    world = SyntheticWorld(seed=seed, config=config,
                           emotion_prototypes=prototypes,
                           identity_latents=identities,
                           modality_offset=offset,
                           visual_map=visual_map, text_map=text_map,
                           backbone_map=backbone_map, token_map=token_map,
                           latent_to_token=latent_to_token)

    # Solve each emotion-word token so that the positional text encoding of
    # the plain template prompt equals text_map @ prototype exactly.
    template_words = prompt_for(EMOTIONS[0]).split()
    n_words = len(template_words)
    shared = np.zeros(config.d_tok)
    for i, w in enumerate(template_words):
        if i == EMOTION_WORD_POSITION:
            continue
        shared += position_weight(i, n_words) * world.word_token(w)
    w_emotion = position_weight(EMOTION_WORD_POSITION, n_words)
    for k, emotion in enumerate(EMOTIONS):
        target = latent_to_token @ prototypes[k]
        world.emotion_word_tokens[emotion.name] = (target - shared) / w_emotion
    return world


def synthetic_suite(world: SyntheticWorld) -> EncoderSuite:
    """Wrap a synthetic world as a frozen EncoderSuite.

    ``visual_encode`` resolves string image refs through the world's
    generative model and passes raw feature vectors through unchanged
    (generated embeddings enter the supervision path this way).
    """

    def visual_encode(ref):
        if isinstance(ref, np.ndarray):
            return as_vector(ref, dim=world.config.d_e, name="visual feature")
        return world.visual_embedding(ref)

    def backbone_identity(ref):
        if isinstance(ref, np.ndarray):
            raise ContractError("identity backbone needs an image ref, not a raw vector")
        identity, _, _ = world._parse_ref(ref)
        return world.backbone_map @ world.identity_latents[world.identity_index(identity)]

    def tokenize(prompt: str) -> TokenSequence:
        words = prompt.split()
        if not words:
            raise ContractError("cannot tokenize an empty prompt")
        return TokenSequence([world.word_token(w) for w in words])

    def text_encode(seq: TokenSequence) -> np.ndarray:
        if seq.token_dim != world.config.d_tok:
            raise ContractError(f"token dim {seq.token_dim} != d_tok {world.config.d_tok}")
        acc = np.zeros(world.config.d_tok)
        for i, tok in enumerate(seq.tokens):
            acc += position_weight(i, seq.length) * tok
        return world.token_map @ acc

    def text_token_vjp(seq: TokenSequence, index: int, upstream: np.ndarray) -> np.ndarray:
        return position_weight(index, seq.length) * (world.token_map.T @ upstream)

    return EncoderSuite(visual_encode, backbone_identity, tokenize, text_encode,
                        text_token_vjp,
                        d_e=world.config.d_e, d_b=world.config.d_b,
                        d_tok=world.config.d_tok)


# ---------------------------------------------------------------------------
# precomputed-feature files
# ---------------------------------------------------------------------------

def write_feature_file(path: str | Path, vector: np.ndarray) -> None:
    """Write one feature vector: 'PCMF' magic, little-endian uint32 dim,
    then the float32 entries."""
    v = np.asarray(vector, dtype="<f4")
    if v.ndim != 1 or v.size == 0:
        raise ContractError("feature must be a non-empty 1-D vector")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<I", v.shape[0]))
        f.write(v.tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FEATURE_MAGIC:
            raise ContractError(f"{path}: bad magic {magic!r}")
        (dim,) = struct.unpack("<I", f.read(4))
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.shape[0] != dim:
        raise ContractError(f"{path}: header says dim {dim}, file holds {data.shape[0]}")
    return data.astype(np.float64)


def load_precomputed_features(manifest_path: str | Path) -> EncoderSuite:
    """Load a precomputed-feature manifest into an EncoderSuite.

    Manifest schema: ``{"dim": int, "samples": [{"id", "identity",
    "emotion", "feature_file"}], "text_embeddings": {emotion: path}}``
    with file paths relative to the manifest. Visual features are served
    by sample id; text encoding serves the stored per-emotion embedding
    table (prompts are reduced to their emotion word). The schema carries
    no identity-backbone features, so ``backbone_identity`` raises.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        spec = json.load(f)
    base = manifest_path.parent
    dim = int(spec["dim"])

    features: dict[str, np.ndarray] = {}
    for entry in spec["samples"]:
        vec = read_feature_file(base / entry["feature_file"])
        if vec.shape[0] != dim:
            raise ContractError(f"sample {entry['id']!r} has dim {vec.shape[0]}, "
                                f"manifest says {dim}")
        features[entry["id"]] = vec

    text_table: dict[str, np.ndarray] = {}
    for name, rel in spec["text_embeddings"].items():
        parse_emotion(name)
        vec = read_feature_file(base / rel)
        if vec.shape[0] != dim:
            raise ContractError(f"text embedding {name!r} has dim {vec.shape[0]}, "
                                f"manifest says {dim}")
        text_table[name] = vec

    def visual_encode(ref):
        if isinstance(ref, np.ndarray):
            return as_vector(ref, dim=dim, name="visual feature")
        try:
            return features[ref]
        except KeyError:
            raise KeyError(f"unknown sample id {ref!r}") from None

    def backbone_identity(ref):
        raise ContractError("precomputed manifests carry no identity-backbone features")

    def tokenize(prompt: str) -> TokenSequence:
        words = prompt.split()
        if not words:
            raise ContractError("cannot tokenize an empty prompt")
        for w in words:
            if w in text_table:
                return TokenSequence([text_table[w]])
        raise ContractError(f"prompt {prompt!r} names no known emotion")

    def text_encode(seq: TokenSequence) -> np.ndarray:
        acc = np.zeros(dim)
        for i, tok in enumerate(seq.tokens):
            acc += position_weight(i, seq.length) * tok
        return acc

    def text_token_vjp(seq: TokenSequence, index: int, upstream: np.ndarray) -> np.ndarray:
        return position_weight(index, seq.length) * upstream

    return EncoderSuite(visual_encode, backbone_identity, tokenize, text_encode,
                        text_token_vjp, d_e=dim, d_b=dim, d_tok=dim)
