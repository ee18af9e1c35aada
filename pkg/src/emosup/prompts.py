"""Personalized prompt alignment: an identity-conditioned prompt token,
per-emotion visual projectors, the contrastive objective tying them to
frozen encoder embeddings, and the pre-training loop.

The trainable pieces are deliberately small: a guider head that turns
frozen identity-backbone features into prompt tokens, and a bank of
projector MLPs that refine frozen visual-encoder outputs into
emotion-centric embeddings. Everything else stays frozen.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (ContrastiveBatch, CorpusManifest, NegativePoolTable, Sample,
                     sample_contrastive_batch, sample_pair_batch)
from .emotions import EMOTIONS, EmotionLabel, one_hot, prompt_for
from .encoders import EncoderSuite, TokenSequence
from .errors import ContractError, FrozenParameterError, NumericalError
from .numerics import (MlpGrads, MlpParams, cosine_grads, cosine_with_flag,
                       grads_zeros_like, init_mlp, mlp_backward, mlp_forward,
                       sgd_step)

MULTI = "multi"
SINGLE_CONDITIONAL = "single_conditional"


@dataclass
class EmotionProjectorBank:
    """Learnable visual projectors.

    ``multi`` mode keeps one specialized MLP per emotion; the
    ``single_conditional`` ablation shares one MLP that takes the one-hot
    emotion code appended to the visual embedding.
    """

    mode: str
    projectors: list[MlpParams]

    def __post_init__(self):
        if self.mode == MULTI:
            if len(self.projectors) != len(EMOTIONS):
                raise ContractError("multi mode needs one projector per emotion")
        elif self.mode == SINGLE_CONDITIONAL:
            if len(self.projectors) != 1:
                raise ContractError("single_conditional mode holds exactly one network")
        else:
            raise ContractError(f"unknown projector mode {self.mode!r}")

    def projector_for(self, emotion: EmotionLabel) -> MlpParams:
        if self.mode == MULTI:
            return self.projectors[int(emotion)]
        return self.projectors[0]


def projector_dims(d_e: int, mode: str) -> list[int]:
    """Hidden sizes follow the [d_e, d_e/2, d_e] shape ratio."""
    d_in = d_e + len(EMOTIONS) if mode == SINGLE_CONDITIONAL else d_e
    return [d_in, d_e, max(1, d_e // 2), d_e, d_e]


def guider_head_dims(d_b: int, d_tok: int, token_count: int) -> list[int]:
    return [d_b, d_b, token_count * d_tok]


def build_projector_bank(d_e: int, mode: str, rng: np.random.Generator) -> EmotionProjectorBank:
    if mode == MULTI:
        nets = [init_mlp(projector_dims(d_e, mode), rng) for _ in EMOTIONS]
    else:
        nets = [init_mlp(projector_dims(d_e, mode), rng)]
    return EmotionProjectorBank(mode, nets)


@dataclass
class AlignmentCheckpoint:
    """Trained guider head + projector bank with training metadata.

    Once frozen the parameter arrays are write-protected and every
    training entry point refuses the checkpoint.
    """

    guider_head: MlpParams
    bank: EmotionProjectorBank
    d_e: int
    d_b: int
    d_tok: int
    token_count: int
    metadata: dict = field(default_factory=dict)
    frozen: bool = False

    def freeze(self) -> "AlignmentCheckpoint":
        self.guider_head.set_writeable(False)
        for p in self.bank.projectors:
            p.set_writeable(False)
        self.frozen = True
        return self

    def require_frozen(self) -> None:
        if not self.frozen:
            raise ContractError("checkpoint must be frozen for inference use")

    def require_trainable(self) -> None:
        if self.frozen:
            raise FrozenParameterError("checkpoint is frozen; parameters are immutable")

    def all_params(self) -> list[MlpParams]:
        return [self.guider_head] + list(self.bank.projectors)

    def to_json_dict(self) -> dict:
        def dump(p: MlpParams):
            return [{"weights": l.weights.tolist(), "bias": l.bias.tolist(),
                     "activation": l.activation} for l in p.layers]

        return {"format_version": 1,
                "dims": {"d_e": self.d_e, "d_b": self.d_b, "d_tok": self.d_tok,
                         "token_count": self.token_count},
                "projector_mode": self.bank.mode,
                "guider_head": dump(self.guider_head),
                "projectors": [dump(p) for p in self.bank.projectors],
                "metadata": self.metadata}

    @staticmethod
    def from_json_dict(d: dict) -> "AlignmentCheckpoint":
        if d.get("format_version") != 1:
            raise ContractError(f"unsupported checkpoint format {d.get('format_version')!r}")

        def parse(layers):
            from .numerics import DenseLayer
            return MlpParams([DenseLayer(np.array(l["weights"], dtype=np.float64),
                                         np.array(l["bias"], dtype=np.float64),
                                         l["activation"]) for l in layers])

        dims = d["dims"]
        ckpt = AlignmentCheckpoint(parse(d["guider_head"]),
                                   EmotionProjectorBank(d["projector_mode"],
                                                        [parse(p) for p in d["projectors"]]),
                                   dims["d_e"], dims["d_b"], dims["d_tok"],
                                   dims["token_count"], metadata=dict(d["metadata"]))
        return ckpt.freeze()

    def canonical_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.canonical_json())

    @staticmethod
    def load(path: str | Path) -> "AlignmentCheckpoint":
        with open(path) as f:
            return AlignmentCheckpoint.from_json_dict(json.load(f))


def guider_tokens(ckpt: AlignmentCheckpoint, reference: Sample,
                  suite: EncoderSuite) -> tuple[list[np.ndarray], object]:
    """Identity prompt token(s) from the frozen backbone + learnable head."""
    id_feat = suite.backbone_identity(reference.image_ref)
    out, cache = mlp_forward(ckpt.guider_head, id_feat)
    tokens = [out[i * ckpt.d_tok:(i + 1) * ckpt.d_tok] for i in range(ckpt.token_count)]
    return tokens, cache


def build_personalized_prompt(ckpt: AlignmentCheckpoint, reference: Sample,
                              emotion: EmotionLabel, suite: EncoderSuite) -> TokenSequence:
    """Prepend the identity token(s) to the tokenized emotion prompt.

    The reference must be neutral: an emotional reference would leak its
    own expression into the identity token.
    """
    if reference.emotion != EmotionLabel.neutral:
        raise ContractError(f"reference {reference.id!r} is {reference.emotion.name}, "
                            "not neutral")
    tokens, _ = guider_tokens(ckpt, reference, suite)
    prompt = suite.tokenize(prompt_for(emotion))
    return TokenSequence(tokens + prompt.tokens)


def personalized_text_embedding(prompt: TokenSequence, suite: EncoderSuite) -> np.ndarray:
    """Frozen text encoding of a (personalized) token sequence."""
    return suite.text_encode(prompt)


def emotion_visual_embedding(bank: EmotionProjectorBank, sample: Sample,
                             suite: EncoderSuite) -> np.ndarray:
    """Project the frozen visual encoding into the emotion-centric space."""
    return project_visual(bank, suite.visual_encode(sample.image_ref), sample.emotion)[0]


def project_visual(bank: EmotionProjectorBank, visual: np.ndarray,
                   emotion: EmotionLabel) -> tuple[np.ndarray, object, MlpParams]:
    """Apply the projector for ``emotion`` to a visual embedding.

    Returns (embedding, forward cache, the projector used) so callers can
    backpropagate. In single_conditional mode the one-hot emotion code is
    appended to the input.
    """
    emotion = EmotionLabel(emotion)
    net = bank.projector_for(emotion)
    x = np.concatenate([visual, one_hot(emotion)]) if bank.mode == SINGLE_CONDITIONAL \
        else visual
    out, cache = mlp_forward(net, x)
    return out, cache, net


def contrastive_loss(t_pos: np.ndarray, t_neg: np.ndarray, i_vis: np.ndarray) -> float:
    """(1 - sim(positive text, visual)) + sim(negative text, visual).

    Ranges over [-1, 3]; zero-norm inputs make the affected similarity
    term 0 under the degenerate-input convention.
    """
    sim_pos, _ = cosine_with_flag(t_pos, i_vis)
    sim_neg, _ = cosine_with_flag(t_neg, i_vis)
    return (1.0 - sim_pos) + sim_neg


@dataclass
class TrainConfig:
    """Pre-training hyperparameters.

    The schedule starts at ``lr`` and divides by ``decay_factor`` at the
    start of each epoch in ``decay_epochs`` (epochs are 0-indexed, so the
    default divides at epochs 2, 4 and 6 of a 10-epoch run).
    """

    seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    steps_per_epoch: int = 40
    lr: float = 0.1
    decay_epochs: tuple[int, ...] = (2, 4, 6)
    decay_factor: float = 10.0
    momentum: float = 0.0
    projector_mode: str = MULTI
    guider_token_count: int = 1

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ContractError("epochs, batch_size and steps_per_epoch must be >= 1")
        if self.lr <= 0 or self.decay_factor <= 0:
            raise ContractError("lr and decay_factor must be positive")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if self.projector_mode not in (MULTI, SINGLE_CONDITIONAL):
            raise ContractError(f"unknown projector mode {self.projector_mode!r}")
        if self.guider_token_count < 1:
            raise ContractError("guider_token_count must be >= 1")

    def learning_rate_at(self, epoch: int) -> float:
        drops = sum(1 for d in self.decay_epochs if epoch >= d)
        return self.lr / self.decay_factor ** drops

    def to_dict(self) -> dict:
        return {"seed": self.seed, "epochs": self.epochs, "batch_size": self.batch_size,
                "steps_per_epoch": self.steps_per_epoch, "lr": self.lr,
                "decay_epochs": list(self.decay_epochs),
                "decay_factor": self.decay_factor, "momentum": self.momentum,
                "projector_mode": self.projector_mode,
                "guider_token_count": self.guider_token_count}

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if "decay_epochs" in d:
            d["decay_epochs"] = tuple(d["decay_epochs"])
        return TrainConfig(**d)


@dataclass
class LossCurve:
    """Per-step loss records: (epoch, step, loss, lr)."""

    records: list[tuple[int, int, float, float]]

    def epoch_means(self) -> list[float]:
        sums: dict[int, list[float]] = {}
        for epoch, _, loss, _ in self.records:
            sums.setdefault(epoch, []).append(loss)
        return [float(np.mean(sums[e])) for e in sorted(sums)]

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "step", "loss", "lr"])
            for epoch, step, loss, lr in self.records:
                writer.writerow([epoch, step, repr(loss), repr(lr)])

    @staticmethod
    def load_csv(path: str | Path) -> "LossCurve":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        return LossCurve([(int(r["epoch"]), int(r["step"]), float(r["loss"]),
                           float(r["lr"])) for r in rows])


def _fresh_checkpoint(suite: EncoderSuite, config: TrainConfig,
                      rng: np.random.Generator) -> AlignmentCheckpoint:
    head = init_mlp(guider_head_dims(suite.d_b, suite.d_tok, config.guider_token_count), rng)
    bank = build_projector_bank(suite.d_e, config.projector_mode, rng)
    return AlignmentCheckpoint(head, bank, suite.d_e, suite.d_b, suite.d_tok,
                               config.guider_token_count)


def _personalized_embedding_with_caches(ckpt: AlignmentCheckpoint, reference: Sample,
                                        emotion: EmotionLabel, suite: EncoderSuite):
    """Forward pass of one personalized prompt, keeping what backward needs."""
    id_feat = suite.backbone_identity(reference.image_ref)
    head_out, head_cache = mlp_forward(ckpt.guider_head, id_feat)
    tokens = [head_out[i * ckpt.d_tok:(i + 1) * ckpt.d_tok]
              for i in range(ckpt.token_count)]
    seq = TokenSequence(tokens + suite.tokenize(prompt_for(emotion)).tokens)
    emb = suite.text_encode(seq)
    return emb, seq, head_cache


def _text_grad_to_head(ckpt: AlignmentCheckpoint, seq: TokenSequence, head_cache,
                       upstream: np.ndarray, suite: EncoderSuite) -> MlpGrads:
    """Chain an embedding gradient through the prepended tokens into the head."""
    token_grads = [suite.text_token_vjp(seq, i, upstream)
                   for i in range(ckpt.token_count)]
    return mlp_backward(ckpt.guider_head, head_cache, np.concatenate(token_grads))


class _Sgd:
    """SGD with optional momentum over a list of MlpParams."""

    def __init__(self, params: list[MlpParams], momentum: float):
        self.momentum = momentum
        self.velocities = [grads_zeros_like(p) for p in params]

    def step(self, params: list[MlpParams], grads: list[MlpGrads],
             lr: float) -> list[MlpParams]:
        updated = []
        for i, (p, g) in enumerate(zip(params, grads)):
            if self.momentum > 0:
                v = self.velocities[i].scale(self.momentum)
                v.add_(g)
                self.velocities[i] = v
                g = v
            updated.append(sgd_step(p, g, lr))
        return updated


def _rebind(ckpt: AlignmentCheckpoint, params: list[MlpParams]) -> None:
    ckpt.guider_head = params[0]
    ckpt.bank = EmotionProjectorBank(ckpt.bank.mode, params[1:])


def contrastive_step_grads(ckpt: AlignmentCheckpoint, batch: ContrastiveBatch,
                           suite: EncoderSuite) -> tuple[float, list[MlpGrads]]:
    """Mean contrastive loss over a batch plus gradients for head and bank.

    Gradient layout matches ``ckpt.all_params()``: the guider head first,
    then the projectors in bank order.
    """
    params = ckpt.all_params()
    grads = [grads_zeros_like(p) for p in params]
    total = 0.0
    scale = 1.0 / len(batch.entries)
    for entry in batch.entries:
        t_pos, seq_pos, cache_pos = _personalized_embedding_with_caches(
            ckpt, entry.reference, entry.positive_prompt, suite)
        t_neg, seq_neg, cache_neg = _personalized_embedding_with_caches(
            ckpt, entry.reference, entry.negative_prompt, suite)
        visual = suite.visual_encode(entry.anchor.image_ref)
        i_vis, proj_cache, net = project_visual(ckpt.bank, visual, entry.anchor.emotion)

        sim_pos, d_tpos, d_ivis_pos = _sim_and_grads(t_pos, i_vis)
        sim_neg, d_tneg, d_ivis_neg = _sim_and_grads(t_neg, i_vis)
        total += (1.0 - sim_pos) + sim_neg

        # d loss / d t_pos = -d sim_pos, d loss / d t_neg = +d sim_neg
        grads[0].add_(_text_grad_to_head(ckpt, seq_pos, cache_pos,
                                         -scale * d_tpos, suite))
        grads[0].add_(_text_grad_to_head(ckpt, seq_neg, cache_neg,
                                         scale * d_tneg, suite))
        upstream_vis = scale * (d_ivis_neg - d_ivis_pos)
        proj_index = 1 + (int(entry.anchor.emotion) if ckpt.bank.mode == MULTI else 0)
        grads[proj_index].add_(mlp_backward(net, proj_cache, upstream_vis))
    return total * scale, grads


def _sim_and_grads(a: np.ndarray, b: np.ndarray):
    sim, degenerate = cosine_with_flag(a, b)
    if degenerate:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    da, db = cosine_grads(a, b)
    return sim, da, db


def difference_step_grads(ckpt: AlignmentCheckpoint, draws, suite: EncoderSuite
                          ) -> tuple[float, list[MlpGrads]]:
    """Mean difference-alignment loss over sampled pairs plus gradients.

    Used by the ablation that pre-trains with the difference objective
    instead of the contrastive one. Note the identity token cancels in
    the text difference, so under a linear text encoder the guider head
    receives exactly zero gradient here.
    """
    params = ckpt.all_params()
    grads = [grads_zeros_like(p) for p in params]
    total = 0.0
    scale = 1.0 / len(draws)
    for draw in draws:
        t_s, seq_s, cache_s = _personalized_embedding_with_caches(
            ckpt, draw.reference, draw.source.emotion, suite)
        t_t, seq_t, cache_t = _personalized_embedding_with_caches(
            ckpt, draw.reference, draw.target.emotion, suite)
        vis_s = suite.visual_encode(draw.source.image_ref)
        vis_t = suite.visual_encode(draw.target.image_ref)
        i_s, cache_is, net_s = project_visual(ckpt.bank, vis_s, draw.source.emotion)
        i_t, cache_it, net_t = project_visual(ckpt.bank, vis_t, draw.target.emotion)

        i_diff = i_s - i_t
        t_diff = t_s - t_t
        sim, degenerate = cosine_with_flag(i_diff, t_diff)
        if degenerate:
            total += 1.0
            continue
        total += 1.0 - sim
        d_idiff, d_tdiff = cosine_grads(i_diff, t_diff)
        d_idiff = -scale * d_idiff   # loss = 1 - sim
        d_tdiff = -scale * d_tdiff

        grads[0].add_(_text_grad_to_head(ckpt, seq_s, cache_s, d_tdiff, suite))
        grads[0].add_(_text_grad_to_head(ckpt, seq_t, cache_t, -d_tdiff, suite))
        idx_s = 1 + (int(draw.source.emotion) if ckpt.bank.mode == MULTI else 0)
        idx_t = 1 + (int(draw.target.emotion) if ckpt.bank.mode == MULTI else 0)
        grads[idx_s].add_(mlp_backward(net_s, cache_is, d_idiff))
        grads[idx_t].add_(mlp_backward(net_t, cache_it, -d_idiff))
    return total * scale, grads


def _run_training(manifest: CorpusManifest, pools: NegativePoolTable,
                  suite: EncoderSuite, config: TrainConfig,
                  objective: str) -> tuple[AlignmentCheckpoint, LossCurve]:
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    ckpt = _fresh_checkpoint(suite, config, rng)
    optimizer = _Sgd(ckpt.all_params(), config.momentum)
    records = []
    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        for step in range(config.steps_per_epoch):
            if objective == "contrastive":
                batch = sample_contrastive_batch(manifest, pools, config.batch_size, rng)
                loss, grads = contrastive_step_grads(ckpt, batch, suite)
            else:
                draws = sample_pair_batch(manifest, pools, config.batch_size, rng)
                loss, grads = difference_step_grads(ckpt, draws, suite)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch} step {step}")
            _rebind(ckpt, optimizer.step(ckpt.all_params(), grads, lr))
            records.append((epoch, step, float(loss), lr))
    curve = LossCurve(records)
    ckpt.metadata = {"seed": config.seed, "epochs": config.epochs,
                     "objective": objective, "config": config.to_dict(),
                     "epoch_mean_loss": curve.epoch_means(),
                     "final_loss": curve.epoch_means()[-1]}
    return ckpt.freeze(), curve


def pretrain_alignment(manifest: CorpusManifest, pools: NegativePoolTable,
                       suite: EncoderSuite,
                       config: TrainConfig) -> tuple[AlignmentCheckpoint, LossCurve]:
    """SGD pre-training of guider head + projectors on the contrastive loss."""
    return _run_training(manifest, pools, suite, config, "contrastive")


def pretrain_with_difference_objective(manifest: CorpusManifest,
                                       pools: NegativePoolTable, suite: EncoderSuite,
                                       config: TrainConfig
                                       ) -> tuple[AlignmentCheckpoint, LossCurve]:
    """Ablation: the same loop trained on the difference-alignment loss."""
    return _run_training(manifest, pools, suite, config, "difference")


def retrieval_accuracy(ckpt: AlignmentCheckpoint, manifest: CorpusManifest,
                       split: str, suite: EncoderSuite) -> float:
    """Fraction of samples whose emotion wins the 7-way personalized-prompt
    retrieval against their projected visual embedding."""
    ckpt.require_frozen()
    samples = manifest.in_split(split)
    if not samples:
        raise ContractError(f"split {split!r} is empty")
    hits = 0
    for sample in samples:
        reference = manifest.by_id(sample.neutral_ref)
        i_vis = emotion_visual_embedding(ckpt.bank, sample, suite)
        sims = []
        for candidate in EMOTIONS:
            prompt = build_personalized_prompt(ckpt, reference, candidate, suite)
            t_emb = personalized_text_embedding(prompt, suite)
            sims.append(cosine_with_flag(t_emb, i_vis)[0])
        if int(np.argmax(sims)) == int(sample.emotion):
            hits += 1
    return hits / len(samples)
