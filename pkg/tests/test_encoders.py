import json

import numpy as np
import pytest

import emosup as es
from emosup.emotions import EMOTION_WORD_POSITION
from emosup.encoders import position_weight
from emosup.errors import ContractError


def worlds_equal(a, b):
    arrays = ["emotion_prototypes", "identity_latents", "modality_offset",
              "visual_map", "text_map", "backbone_map", "token_map",
              "latent_to_token"]
    return (all(np.array_equal(getattr(a, n), getattr(b, n)) for n in arrays)
            and all(np.array_equal(a.emotion_word_tokens[k], b.emotion_word_tokens[k])
                    for k in a.emotion_word_tokens))


def test_same_seed_bitwise_identical_world():
    assert worlds_equal(es.build_synthetic_world(3), es.build_synthetic_world(3))


def test_different_seed_differs():
    assert not worlds_equal(es.build_synthetic_world(3), es.build_synthetic_world(4))


def test_world_structure(default_world):
    w = default_world
    protos = w.emotion_prototypes
    assert protos.shape[0] == 7
    for i in range(7):
        for j in range(i + 1, 7):
            assert not np.allclose(protos[i], protos[j])
    for m in (w.visual_map, w.text_map, w.backbone_map):
        assert np.linalg.matrix_rank(m) == w.config.d_latent


def test_noise_free_zero_gap_offset_is_identity_term():
    w = es.build_synthetic_world(5, es.WorldConfig(noise_sigma=0.0, gap=0.0))
    suite = es.synthetic_suite(w)
    for e in (es.EmotionLabel.happy, es.EmotionLabel.angry):
        for idx in (0, 1):
            ident = w.identity_names[idx]
            visual = suite.visual_encode(w.image_ref(ident, e, 0))
            text = suite.text_encode(suite.tokenize(es.prompt_for(e)))
            identity_term = w.visual_map @ w.identity_latents[idx]
            assert np.max(np.abs((visual - text) - identity_term)) < 1e-12


def test_mean_cross_modal_offset_matches_designed_gap():
    # Monte-Carlo oracle directly on the generative model: fresh identity
    # latents and noise, mean(visual - matching text) should estimate the
    # modality offset within 3 sigma/sqrt(N) per dimension aggregate.
    w = es.build_synthetic_world(7, es.WorldConfig(noise_sigma=0.1, gap=1.5))
    rng = np.random.default_rng(99)
    n = 20000
    offsets = np.zeros((n, w.config.d_e))
    for i in range(n):
        z = rng.standard_normal(w.config.d_latent)
        z /= np.linalg.norm(z)
        k = int(rng.integers(7))
        noise = w.config.noise_sigma * rng.standard_normal(w.config.d_e)
        visual = w.visual_map @ (z + w.emotion_prototypes[k]) + w.modality_offset + noise
        offsets[i] = visual - w.text_prototype(es.EmotionLabel(k))
    mean = offsets.mean(axis=0)
    sem = offsets.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(mean - w.modality_offset) < 3.5 * sem)


def test_generation_validation_errors():
    with pytest.raises(ContractError):
        es.build_synthetic_world(1, es.WorldConfig(n_identities=1))
    with pytest.raises(ContractError):
        es.build_synthetic_world(1, es.WorldConfig(noise_sigma=-0.1))
    with pytest.raises(ContractError):
        es.build_synthetic_world(1, es.WorldConfig(d_latent=64, d_tok=32))


# ---------------------------------------------------------------------------
# tokenizer / text encoder
# ---------------------------------------------------------------------------

def test_tokenize_word_count(default_suite):
    seq = default_suite.tokenize("a photo of a happy face")
    assert seq.length == 6


def test_tokenize_deterministic(default_suite):
    a = default_suite.tokenize("a photo of a sad face")
    b = default_suite.tokenize("a photo of a sad face")
    for x, y in zip(a.tokens, b.tokens):
        assert np.array_equal(x, y)


def test_tokenize_prompts_differ_only_at_emotion_word(default_suite):
    a = default_suite.tokenize(es.prompt_for(es.EmotionLabel.happy))
    b = default_suite.tokenize(es.prompt_for(es.EmotionLabel.sad))
    for i in range(a.length):
        same = np.array_equal(a.tokens[i], b.tokens[i])
        assert same == (i != EMOTION_WORD_POSITION)


def test_tokenize_empty_prompt(default_suite):
    with pytest.raises(ContractError):
        default_suite.tokenize("   ")


def test_text_encode_zero_token_is_zero(default_suite, default_world):
    seq = es.TokenSequence([np.zeros(default_world.config.d_tok)])
    assert np.array_equal(default_suite.text_encode(seq),
                          np.zeros(default_world.config.d_e))


def test_text_encode_deterministic(default_suite):
    seq = default_suite.tokenize("a photo of a fear face")
    assert np.array_equal(default_suite.text_encode(seq),
                          default_suite.text_encode(seq))


def test_text_encode_prepending_changes_output(default_suite, default_world, rng):
    for _ in range(5):
        base = es.TokenSequence([rng.standard_normal(default_world.config.d_tok)
                                 for _ in range(4)])
        extra = rng.standard_normal(default_world.config.d_tok)
        prepended = es.TokenSequence([extra] + base.tokens)
        assert not np.allclose(default_suite.text_encode(base),
                               default_suite.text_encode(prepended))


def test_text_encode_prepend_additivity(default_suite, default_world, rng):
    # prepending adds exactly the weighted image of the new token
    seq = default_suite.tokenize(es.prompt_for(es.EmotionLabel.happy))
    tau = rng.standard_normal(default_world.config.d_tok)
    lhs = default_suite.text_encode(es.TokenSequence([tau] + seq.tokens))
    rhs = (default_suite.text_encode(seq)
           + position_weight(0, seq.length + 1) * (default_world.token_map @ tau))
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_plain_prompt_encodings_hit_text_prototypes(default_suite, default_world):
    for e in es.EMOTIONS:
        enc = default_suite.text_encode(default_suite.tokenize(es.prompt_for(e)))
        assert np.max(np.abs(enc - default_world.text_prototype(e))) < 1e-12


def test_frozen_encoders_repeat_identically(default_world, default_suite):
    ref = default_world.image_ref("id001", es.EmotionLabel.fear, 1)
    assert np.array_equal(default_suite.visual_encode(ref),
                          default_suite.visual_encode(ref))
    assert np.array_equal(default_suite.backbone_identity(ref),
                          default_suite.backbone_identity(ref))


def test_same_identity_emotion_encode_identically_at_zero_noise(noise_free_world):
    suite = es.synthetic_suite(noise_free_world)
    a = suite.visual_encode(noise_free_world.image_ref("id000", es.EmotionLabel.sad, 0))
    b = suite.visual_encode(noise_free_world.image_ref("id000", es.EmotionLabel.sad, 1))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# feature files / precomputed suite
# ---------------------------------------------------------------------------

def test_feature_file_roundtrip(tmp_path, rng):
    vec = rng.standard_normal(17).astype(np.float32).astype(np.float64)
    path = tmp_path / "x.f32"
    es.write_feature_file(path, vec)
    back = es.read_feature_file(path)
    assert np.array_equal(back, vec)  # float32-exact values survive bitwise
    raw = path.read_bytes()
    assert raw[:4] == b"PCMF" and len(raw) == 8 + 4 * 17


def write_precomputed(tmp_path, dim=12, n=3):
    rng = np.random.default_rng(5)
    samples = []
    for i in range(n):
        vec = rng.standard_normal(dim).astype(np.float32)
        es.write_feature_file(tmp_path / f"s{i}.f32", vec)
        samples.append({"id": f"s{i}", "identity": "idA", "emotion": "happy",
                        "feature_file": f"s{i}.f32"})
    text = {}
    for e in es.EMOTIONS:
        es.write_feature_file(tmp_path / f"t_{e.name}.f32",
                              rng.standard_normal(dim).astype(np.float32))
        text[e.name] = f"t_{e.name}.f32"
    manifest = {"dim": dim, "samples": samples, "text_embeddings": text}
    path = tmp_path / "features.json"
    path.write_text(json.dumps(manifest))
    return path


def test_precomputed_suite_dims_and_roundtrip(tmp_path):
    path = write_precomputed(tmp_path, dim=12)
    suite = es.load_precomputed_features(path)
    assert suite.d_e == 12
    served = suite.visual_encode("s0")
    direct = es.read_feature_file(tmp_path / "s0.f32")
    assert np.array_equal(served, direct)


def test_precomputed_unknown_id_names_sample(tmp_path):
    suite = es.load_precomputed_features(write_precomputed(tmp_path))
    with pytest.raises(KeyError, match="nope"):
        suite.visual_encode("nope")


def test_precomputed_dim_inconsistency_rejected(tmp_path):
    path = write_precomputed(tmp_path, dim=12)
    es.write_feature_file(tmp_path / "s0.f32", np.zeros(9, dtype=np.float32))
    with pytest.raises(ContractError):
        es.load_precomputed_features(path)


def test_precomputed_text_encoding_serves_table(tmp_path):
    path = write_precomputed(tmp_path)
    suite = es.load_precomputed_features(path)
    seq = suite.tokenize(es.prompt_for(es.EmotionLabel.angry))
    assert seq.length == 1
    enc = suite.text_encode(seq)
    assert np.array_equal(enc, es.read_feature_file(tmp_path / "t_angry.f32"))
