import numpy as np
import pytest

import emosup as es
import emosup.prompts as pr
from emosup.corpus import TRAIN, VAL
from emosup.encoders import position_weight
from emosup.errors import ContractError, FrozenParameterError
from emosup.numerics import identity_mlp


def fresh_checkpoint(suite, seed=0, **kwargs):
    cfg = es.TrainConfig(**kwargs)
    return pr._fresh_checkpoint(suite, cfg, np.random.Generator(np.random.PCG64(seed)))


def zero_head_checkpoint(suite):
    ckpt = fresh_checkpoint(suite)
    for layer in ckpt.guider_head.layers:
        layer.weights[:] = 0.0
        layer.bias[:] = 0.0
    return ckpt


# ---------------------------------------------------------------------------
# prompt construction
# ---------------------------------------------------------------------------

def test_prompt_length_is_word_count_plus_one(default_manifest, default_suite):
    ckpt = fresh_checkpoint(default_suite)
    sample = default_manifest.samples[0]
    reference = default_manifest.by_id(sample.neutral_ref)
    seq = es.build_personalized_prompt(ckpt, reference, es.EmotionLabel.happy,
                                       default_suite)
    assert seq.length == 7


def test_zero_guider_head_gives_zero_token_and_plain_tail(default_manifest,
                                                          default_suite):
    ckpt = zero_head_checkpoint(default_suite)
    reference = default_manifest.by_id(default_manifest.samples[0].neutral_ref)
    seq = es.build_personalized_prompt(ckpt, reference, es.EmotionLabel.sad,
                                       default_suite)
    assert np.array_equal(seq.tokens[0], np.zeros(default_suite.d_tok))
    plain = default_suite.tokenize(es.prompt_for(es.EmotionLabel.sad))
    for mine, theirs in zip(seq.tokens[1:], plain.tokens):
        assert np.array_equal(mine, theirs)


def test_different_identities_differ_only_in_first_token(default_manifest,
                                                         default_suite):
    ckpt = fresh_checkpoint(default_suite)
    refs = {}
    for s in default_manifest.samples:
        if s.emotion == es.EmotionLabel.neutral and s.identity not in refs:
            refs[s.identity] = s
    ref_a, ref_b = list(refs.values())[:2]
    seq_a = es.build_personalized_prompt(ckpt, ref_a, es.EmotionLabel.fear,
                                         default_suite)
    seq_b = es.build_personalized_prompt(ckpt, ref_b, es.EmotionLabel.fear,
                                         default_suite)
    assert not np.array_equal(seq_a.tokens[0], seq_b.tokens[0])
    for x, y in zip(seq_a.tokens[1:], seq_b.tokens[1:]):
        assert np.array_equal(x, y)


def test_emotional_reference_rejected(default_manifest, default_suite):
    ckpt = fresh_checkpoint(default_suite)
    emotional = next(s for s in default_manifest.samples
                     if s.emotion != es.EmotionLabel.neutral)
    with pytest.raises(ContractError):
        es.build_personalized_prompt(ckpt, emotional, es.EmotionLabel.happy,
                                     default_suite)


# ---------------------------------------------------------------------------
# personalized text embedding
# ---------------------------------------------------------------------------

def test_personalized_embedding_linearity(default_manifest, default_world,
                                          default_suite):
    # under the linear synthetic encoder, the personalized embedding equals
    # the plain-prompt embedding plus the weighted image of the identity token
    ckpt = fresh_checkpoint(default_suite)
    reference = default_manifest.by_id(default_manifest.samples[0].neutral_ref)
    seq = es.build_personalized_prompt(ckpt, reference, es.EmotionLabel.angry,
                                       default_suite)
    lhs = es.personalized_text_embedding(seq, default_suite)
    plain = default_suite.tokenize(es.prompt_for(es.EmotionLabel.angry))
    rhs = (default_suite.text_encode(plain)
           + position_weight(0, seq.length) * (default_world.token_map @ seq.tokens[0]))
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_personalized_embedding_deterministic(default_manifest, default_suite):
    ckpt = fresh_checkpoint(default_suite)
    reference = default_manifest.by_id(default_manifest.samples[0].neutral_ref)
    seq = es.build_personalized_prompt(ckpt, reference, es.EmotionLabel.happy,
                                       default_suite)
    assert np.array_equal(es.personalized_text_embedding(seq, default_suite),
                          es.personalized_text_embedding(seq, default_suite))


# ---------------------------------------------------------------------------
# emotion visual embedding
# ---------------------------------------------------------------------------

def test_identity_projector_passes_nonnegative_through(default_suite):
    d = default_suite.d_e
    net = identity_mlp(d, depth=3, activation="relu")
    bank = es.EmotionProjectorBank("multi", [net] * 7)
    x = np.abs(np.random.default_rng(0).standard_normal(d))
    out, _, _ = pr.project_visual(bank, x, es.EmotionLabel.happy)
    assert np.array_equal(out, x)


def test_multi_mode_uses_disjoint_parameters(default_manifest, default_suite,
                                             reference_pools):
    # a batch holding only emotion k leaves all other projectors at zero grads
    ckpt = fresh_checkpoint(default_suite)
    anchor = next(s for s in default_manifest.in_split(TRAIN)
                  if s.emotion == es.EmotionLabel.happy)
    reference = default_manifest.by_id(anchor.neutral_ref)
    entry = es.corpus.ContrastiveEntry(anchor, anchor.emotion,
                                       es.EmotionLabel.sad, reference)
    batch = es.corpus.ContrastiveBatch([entry] * 4)
    _, grads = pr.contrastive_step_grads(ckpt, batch, default_suite)
    for idx, emotion in enumerate(es.EMOTIONS):
        g = grads[1 + idx]
        magnitude = max(np.max(np.abs(w)) for w in g.weight_grads)
        if emotion == es.EmotionLabel.happy:
            assert magnitude > 0
        else:
            assert magnitude == 0.0


def test_unknown_emotion_code_rejected(default_suite):
    bank = es.EmotionProjectorBank("multi", [identity_mlp(default_suite.d_e)] * 7)
    with pytest.raises(ValueError):
        pr.project_visual(bank, np.zeros(default_suite.d_e), 9)


def test_single_conditional_mode_shapes(default_manifest, default_suite):
    ckpt = fresh_checkpoint(default_suite, projector_mode="single_conditional")
    sample = default_manifest.samples[0]
    out = es.emotion_visual_embedding(ckpt.bank, sample, default_suite)
    assert out.shape == (default_suite.d_e,)
    assert ckpt.bank.projectors[0].in_dim == default_suite.d_e + 7


# ---------------------------------------------------------------------------
# contrastive loss
# ---------------------------------------------------------------------------

def test_contrastive_loss_global_minimum():
    v = np.array([1.0, 2.0, -1.0])
    assert es.contrastive_loss(v, -v, v) == pytest.approx(-1.0)


def test_contrastive_loss_orthogonal_negative():
    v = np.array([1.0, 0.0])
    assert es.contrastive_loss(v, np.array([0.0, 1.0]), v) == pytest.approx(0.0)


def test_contrastive_loss_equal_everything():
    v = np.array([0.3, -0.7, 2.0])
    assert es.contrastive_loss(v, v, v) == pytest.approx(1.0)


def test_contrastive_loss_bounds_and_degenerates(rng):
    zero = np.zeros(5)
    for _ in range(500):
        t_pos = rng.standard_normal(5) * rng.choice([0.0, 1.0])
        t_neg = rng.standard_normal(5)
        i_vis = rng.standard_normal(5)
        for combo in [(t_pos, t_neg, i_vis), (zero, t_neg, i_vis),
                      (t_pos, zero, zero)]:
            val = es.contrastive_loss(*combo)
            assert -1.0 - 1e-12 <= val <= 3.0 + 1e-12


# ---------------------------------------------------------------------------
# gradients through the full loss path
# ---------------------------------------------------------------------------

def loss_on_batch(ckpt, batch, suite):
    return pr.contrastive_step_grads(ckpt, batch, suite)[0]


def test_full_path_gradients_match_finite_differences(default_manifest,
                                                      default_suite,
                                                      reference_pools):
    ckpt = fresh_checkpoint(default_suite, seed=5)
    rng = np.random.default_rng(5)
    batch = es.sample_contrastive_batch(default_manifest, reference_pools, 3, rng)
    _, grads = pr.contrastive_step_grads(ckpt, batch, default_suite)

    h = 1e-5
    params = ckpt.all_params()
    rng_pick = np.random.default_rng(0)
    for p_idx, (p, g) in enumerate(zip(params, grads)):
        for l_idx, layer in enumerate(p.layers):
            flat = layer.weights.reshape(-1)
            for flat_idx in rng_pick.choice(flat.size, size=min(6, flat.size),
                                            replace=False):
                idx = np.unravel_index(flat_idx, layer.weights.shape)
                orig = layer.weights[idx]
                layer.weights[idx] = orig + h
                up = loss_on_batch(ckpt, batch, default_suite)
                layer.weights[idx] = orig - h
                down = loss_on_batch(ckpt, batch, default_suite)
                layer.weights[idx] = orig
                fd = (up - down) / (2 * h)
                analytic = g.weight_grads[l_idx][idx]
                assert analytic == pytest.approx(fd, rel=1e-4, abs=1e-7), \
                    f"param {p_idx} layer {l_idx} idx {idx}"


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def test_learning_rate_schedule():
    cfg = es.TrainConfig()
    expected = [0.1, 0.1, 0.01, 0.01, 0.001, 0.001, 0.0001, 0.0001, 0.0001, 0.0001]
    assert [cfg.learning_rate_at(e) for e in range(10)] == pytest.approx(expected)


def test_pretrain_deterministic(default_manifest, default_suite, reference_pools):
    cfg = es.TrainConfig(seed=3, epochs=2, steps_per_epoch=4, batch_size=8)
    ck1, curve1 = es.pretrain_alignment(default_manifest, reference_pools,
                                        default_suite, cfg)
    ck2, curve2 = es.pretrain_alignment(default_manifest, reference_pools,
                                        default_suite, cfg)
    assert ck1.content_hash() == ck2.content_hash()
    assert curve1.records == curve2.records


def test_difference_objective_deterministic_and_same_schema(
        default_manifest, default_suite, reference_pools, tmp_path):
    cfg = es.TrainConfig(seed=3, epochs=2, steps_per_epoch=4, batch_size=8)
    ck1, curve1 = es.pretrain_with_difference_objective(
        default_manifest, reference_pools, default_suite, cfg)
    ck2, curve2 = es.pretrain_with_difference_objective(
        default_manifest, reference_pools, default_suite, cfg)
    assert ck1.content_hash() == ck2.content_hash()
    assert curve1.records == curve2.records
    path = tmp_path / "curve.csv"
    curve1.save_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "epoch,step,loss,lr"
    back = es.LossCurve.load_csv(path)
    assert back.records == curve1.records


def test_difference_objective_gives_guider_zero_gradient(
        default_manifest, default_suite, reference_pools):
    # the identity token cancels in the text difference, so the guider head
    # receives exactly zero gradient under the linear text encoder
    ckpt = fresh_checkpoint(default_suite, seed=2)
    rng = np.random.default_rng(3)
    draws = es.sample_pair_batch(default_manifest, reference_pools, 8, rng)
    _, grads = pr.difference_step_grads(ckpt, draws, default_suite)
    assert max(np.max(np.abs(w)) for w in grads[0].weight_grads) == 0.0


def test_encoder_outputs_constant_across_training(default_manifest, default_world,
                                                  default_suite, reference_pools):
    ref = default_manifest.samples[0].image_ref
    before = default_suite.visual_encode(ref).copy()
    cfg = es.TrainConfig(seed=1, epochs=1, steps_per_epoch=3, batch_size=4)
    es.pretrain_alignment(default_manifest, reference_pools, default_suite, cfg)
    assert np.array_equal(before, default_suite.visual_encode(ref))


def test_nonfinite_loss_aborts_with_context(default_manifest, default_suite,
                                            reference_pools, monkeypatch):
    def bad_loss(*args, **kwargs):
        params = args[0].all_params()
        return float("nan"), [es.numerics.grads_zeros_like(p) for p in params]

    monkeypatch.setattr(pr, "contrastive_step_grads", bad_loss)
    with pytest.raises(es.NumericalError, match="epoch 0 step 0"):
        es.pretrain_alignment(default_manifest, reference_pools, default_suite,
                              es.TrainConfig(seed=1, epochs=1, steps_per_epoch=1))


# ---------------------------------------------------------------------------
# freezing
# ---------------------------------------------------------------------------

def test_frozen_checkpoint_rejects_mutation(trained_checkpoint):
    ckpt, _ = trained_checkpoint
    with pytest.raises(ValueError):
        ckpt.guider_head.layers[0].weights[0, 0] = 5.0
    with pytest.raises(ValueError):
        ckpt.bank.projectors[0].layers[0].bias[0] = 1.0
    with pytest.raises(FrozenParameterError):
        ckpt.require_trainable()


def test_checkpoint_json_roundtrip(trained_checkpoint, tmp_path):
    ckpt, _ = trained_checkpoint
    path = tmp_path / "checkpoint.json"
    ckpt.save(path)
    back = es.AlignmentCheckpoint.load(path)
    assert back.frozen
    assert back.content_hash() == ckpt.content_hash()
    assert back.to_json_dict()["format_version"] == 1


# ---------------------------------------------------------------------------
# retrieval accuracy
# ---------------------------------------------------------------------------

def test_untrained_retrieval_is_chance_level(default_manifest, default_suite):
    # chance-level oracle: balanced classes make expected accuracy 1/7; the
    # mean over several random checkpoints must land in the binomial band
    n = len(default_manifest.samples)
    n_train = len(default_manifest.in_split(TRAIN))
    accs = []
    for seed in range(12):
        ckpt = fresh_checkpoint(default_suite, seed=seed)
        ckpt.freeze()
        acc_t = es.retrieval_accuracy(ckpt, default_manifest, TRAIN, default_suite)
        acc_v = es.retrieval_accuracy(ckpt, default_manifest, VAL, default_suite)
        accs.append((acc_t * n_train + acc_v * (n - n_train)) / n)
    mean = float(np.mean(accs))
    band = 3 * np.sqrt(n * (1 / 7) * (6 / 7)) / n
    assert abs(mean - 1 / 7) < band


def test_trained_retrieval_exceeds_095(trained_checkpoint, default_manifest,
                                       default_suite):
    ckpt, _ = trained_checkpoint
    assert es.retrieval_accuracy(ckpt, default_manifest, VAL, default_suite) > 0.95


def test_single_sample_split_scores_one(trained_checkpoint, default_manifest,
                                        default_suite):
    ckpt, _ = trained_checkpoint
    correct = next(s for s in default_manifest.in_split(VAL))
    split = {s.id: TRAIN for s in default_manifest.samples}
    split[correct.id] = VAL
    single = es.CorpusManifest(list(default_manifest.samples), split,
                               default_manifest.world_config,
                               default_manifest.world_seed)
    assert es.retrieval_accuracy(ckpt, single, VAL, default_suite) == 1.0


def test_empty_split_rejected(trained_checkpoint, default_manifest, default_suite):
    ckpt, _ = trained_checkpoint
    split = {s.id: TRAIN for s in default_manifest.samples}
    manifest = es.CorpusManifest(list(default_manifest.samples), split,
                                 default_manifest.world_config,
                                 default_manifest.world_seed)
    with pytest.raises(ContractError):
        es.retrieval_accuracy(ckpt, manifest, VAL, default_suite)


def test_identity_sensitivity_of_trained_prompts(trained_checkpoint,
                                                 default_manifest, default_suite):
    ckpt, _ = trained_checkpoint
    refs = {}
    for s in default_manifest.samples:
        if s.emotion == es.EmotionLabel.neutral and s.identity not in refs:
            refs[s.identity] = s
    ref_a, ref_b = list(refs.values())[:2]
    emb_a = es.personalized_text_embedding(
        es.build_personalized_prompt(ckpt, ref_a, es.EmotionLabel.happy,
                                     default_suite), default_suite)
    emb_b = es.personalized_text_embedding(
        es.build_personalized_prompt(ckpt, ref_b, es.EmotionLabel.happy,
                                     default_suite), default_suite)
    assert np.max(np.abs(emb_a - emb_b)) > 1e-9
