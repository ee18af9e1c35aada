"""Difference alignment: paired embeddings, source-minus-target difference
vectors, and the regularization loss that matches the visual change to
the text change.

Working on differences rather than absolute embeddings makes the loss
exactly invariant to any constant displacement between the visual and
text distributions, and cancels identity-specific content shared by the
source and target images.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusManifest, Sample
from .emotions import EMOTIONS, EmotionLabel
from .encoders import EncoderSuite
from .errors import ContractError
from .numerics import EPS_NORM, as_vector, cosine_grads, cosine_with_flag
from .prompts import (AlignmentCheckpoint, build_personalized_prompt,
                      personalized_text_embedding, project_visual)


@dataclass
class PairEmbeddings:
    """The four embeddings of a (source, target) visual-text pair."""

    visual_source: np.ndarray
    text_source: np.ndarray
    visual_target: np.ndarray
    text_target: np.ndarray
    source_emotion: EmotionLabel
    target_emotion: EmotionLabel

    def __post_init__(self):
        self.visual_source = as_vector(self.visual_source, name="visual_source")
        d = self.visual_source.shape[0]
        self.text_source = as_vector(self.text_source, dim=d, name="text_source")
        self.visual_target = as_vector(self.visual_target, dim=d, name="visual_target")
        self.text_target = as_vector(self.text_target, dim=d, name="text_target")


@dataclass
class DifferencePair:
    """Source-minus-target differences on both modalities.

    ``degenerate`` is set when either difference has (near-)zero norm;
    the loss then falls back to its midpoint value instead of NaN.
    """

    visual_diff: np.ndarray
    text_diff: np.ndarray
    degenerate: bool


def embed_pair(ckpt: AlignmentCheckpoint, source: Sample, target_image,
               target_emotion: EmotionLabel, reference: Sample,
               suite: EncoderSuite) -> PairEmbeddings:
    """Embed source and target through the frozen checkpoint.

    ``target_image`` may be an image ref or a raw visual feature vector
    (the latter is how generator outputs enter the supervision path).
    Both prompts are personalized with the same neutral reference of the
    source identity.
    """
    ckpt.require_frozen()
    if reference.emotion != EmotionLabel.neutral:
        raise ContractError(f"reference {reference.id!r} must be neutral")
    if reference.identity != source.identity:
        raise ContractError("reference identity must match the source identity")
    target_emotion = EmotionLabel(target_emotion)

    visual_source = project_visual(ckpt.bank, suite.visual_encode(source.image_ref),
                                   source.emotion)[0]
    visual_target = project_visual(ckpt.bank, suite.visual_encode(target_image),
                                   target_emotion)[0]
    text_source = personalized_text_embedding(
        build_personalized_prompt(ckpt, reference, source.emotion, suite), suite)
    text_target = personalized_text_embedding(
        build_personalized_prompt(ckpt, reference, target_emotion, suite), suite)
    return PairEmbeddings(visual_source, text_source, visual_target, text_target,
                          source.emotion, target_emotion)


def diff_vectors(pe: PairEmbeddings) -> DifferencePair:
    """Elementwise source-minus-target differences with a degeneracy flag."""
    visual_diff = pe.visual_source - pe.visual_target
    text_diff = pe.text_source - pe.text_target
    degenerate = bool(np.linalg.norm(visual_diff) < EPS_NORM
                      or np.linalg.norm(text_diff) < EPS_NORM)
    return DifferencePair(visual_diff, text_diff, degenerate)


def difference_loss(dp: DifferencePair) -> float:
    """1 - cosine(visual_diff, text_diff), in [0, 2]; degenerate pairs give 1."""
    if dp.degenerate:
        return 1.0
    sim, degenerate = cosine_with_flag(dp.visual_diff, dp.text_diff)
    return 1.0 if degenerate else 1.0 - sim


def difference_loss_with_grads(dp: DifferencePair
                               ) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus gradients w.r.t. both difference vectors (zeros if degenerate)."""
    if dp.degenerate:
        return 1.0, np.zeros_like(dp.visual_diff), np.zeros_like(dp.text_diff)
    sim, degenerate = cosine_with_flag(dp.visual_diff, dp.text_diff)
    if degenerate:
        return 1.0, np.zeros_like(dp.visual_diff), np.zeros_like(dp.text_diff)
    d_vis, d_txt = cosine_grads(dp.visual_diff, dp.text_diff)
    return 1.0 - sim, -d_vis, -d_txt


def export_difference_rows(ckpt: AlignmentCheckpoint, manifest: CorpusManifest,
                           suite: EncoderSuite,
                           include_mismatched: bool = False) -> list[dict]:
    """Difference vectors for every (sample, target emotion) combination.

    Each row holds the identity, the source and target emotions, the
    prompt emotion used for the text difference, and the flattened
    difference vectors. With ``include_mismatched`` the export adds rows
    whose text difference targets a different emotion than the image
    difference (useful for external 2-D projections; no loss is defined
    over them).
    """
    ckpt.require_frozen()
    first_of: dict[tuple[str, EmotionLabel], Sample] = {}
    for s in sorted(manifest.samples, key=lambda s: s.id):
        first_of.setdefault((s.identity, s.emotion), s)

    rows = []
    for source in sorted(manifest.samples, key=lambda s: s.id):
        reference = manifest.by_id(source.neutral_ref)
        for target_emotion in EMOTIONS:
            if target_emotion == source.emotion:
                continue
            target = first_of.get((source.identity, target_emotion))
            if target is None:
                continue
            pe = embed_pair(ckpt, source, target.image_ref, target_emotion,
                            reference, suite)
            dp = diff_vectors(pe)
            prompt_emotions = [target_emotion]
            if include_mismatched:
                prompt_emotions += [e for e in EMOTIONS
                                    if e not in (target_emotion, source.emotion)]
            for prompt_emotion in prompt_emotions:
                if prompt_emotion == target_emotion:
                    text_diff = dp.text_diff
                else:
                    t_alt = personalized_text_embedding(
                        build_personalized_prompt(ckpt, reference, prompt_emotion,
                                                  suite), suite)
                    text_diff = pe.text_source - t_alt
                rows.append({"identity": source.identity,
                             "source_emotion": source.emotion.name,
                             "target_emotion": target_emotion.name,
                             "prompt_emotion": prompt_emotion.name,
                             "visual_diff": dp.visual_diff.copy(),
                             "text_diff": text_diff.copy()})
    return rows


def write_difference_csv(rows: list[dict], path: str | Path) -> None:
    if not rows:
        raise ContractError("no difference rows to export")
    d = rows[0]["visual_diff"].shape[0]
    header = (["identity", "source_emotion", "target_emotion", "prompt_emotion"]
              + [f"i_diff_{j}" for j in range(d)] + [f"t_diff_{j}" for j in range(d)])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row["identity"], row["source_emotion"],
                             row["target_emotion"], row["prompt_emotion"]]
                            + [repr(float(x)) for x in row["visual_diff"]]
                            + [repr(float(x)) for x in row["text_diff"]])
