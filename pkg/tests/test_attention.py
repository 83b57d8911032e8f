import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskedit import (
    AttentionControlConfig,
    BackgroundPolicy,
    InvalidInputError,
    MaskSpec,
    PackedConditioning,
    Role,
    biased_attention,
    boost_schedule,
    build_cross_bias,
    build_pyramid,
    build_self_bias,
    composite,
    concat_prompts,
    encode_prompts,
    install_hooks,
)
from maskedit.attention import ablation_arms, row_softmax
from maskedit.backends import ToyTextEncoder, create_toy_backend, probe_attention

B = 1.0e4


def tiny_packed(n, span_len=3, dim=4):
    """Hand-built packing with short spans: [SOT, CONTENT..., EOT] per prompt."""
    roles = []
    for _ in range(n):
        roles += [Role.SOT] + [Role.CONTENT] * (span_len - 2) + [Role.EOT]
    rng = np.random.default_rng(0)
    return PackedConditioning(
        matrix=rng.standard_normal((span_len * n, dim)),
        spans=[(span_len * i, span_len * (i + 1)) for i in range(n)],
        roles=np.array(roles, dtype=np.int8),
    )


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def oracle_cross_bias(labels_flat, packed, cfg, boosts):
    """Rule-by-rule per (pixel, token) construction."""
    token_prompt = np.zeros(packed.length, dtype=int)
    for i, (a, b) in enumerate(packed.spans, start=1):
        token_prompt[a:b] = i
    P = len(labels_flat)
    out = np.zeros((P, packed.length))
    if not cfg.enable_cross:
        return out
    for p in range(P):
        k = labels_flat[p]
        for j in range(packed.length):
            sotpad = packed.roles[j] in (Role.SOT, Role.PAD)
            if k == 0:
                if cfg.background_policy is BackgroundPolicy.SOT_PAD_ONLY:
                    out[p, j] = 0.0 if sotpad else -cfg.neg_bias
                else:
                    out[p, j] = 0.0
            elif token_prompt[j] == k:
                if sotpad or not cfg.enable_boost:
                    out[p, j] = 0.0
                else:
                    out[p, j] = max(0.0, boosts.get(k, 0.0))
            else:
                out[p, j] = -cfg.neg_bias
    return out


def oracle_self_bias(groups_flat, cfg):
    P = len(groups_flat)
    out = np.zeros((P, P))
    if not cfg.enable_self:
        return out
    for i in range(P):
        for j in range(P):
            gi, gj = groups_flat[i], groups_flat[j]
            if gi > 0 and gj > 0 and gi != gj:
                out[i, j] = -cfg.neg_bias
    return out


def oracle_masked_attention(Q, K, V, bias, block_threshold=-B / 2):
    """Softmax over only the allowed keys, renormalized, then weighted values."""
    P, dk = Q.shape
    out = np.zeros((P, V.shape[1]))
    logits = Q @ K.T / math.sqrt(dk)
    for p in range(P):
        allowed = np.flatnonzero(bias[p] > block_threshold)
        row = logits[p, allowed] + bias[p, allowed]
        e = np.exp(row - row.max())
        w = e / e.sum()
        out[p] = w @ V[allowed]
    return out


# ---------------------------------------------------------------------------
# boost_schedule
# ---------------------------------------------------------------------------

def test_boost_zero_weight():
    assert boost_schedule(0.0, 3.7, 12.0) == 0.0


def test_boost_zero_sigma():
    assert boost_schedule(0.5, 0.0, 12.0) == 0.0


def test_boost_formula_value():
    # 0.5 * log(1 + (e - 1)) * 2 = 0.5 * 1 * 2
    assert boost_schedule(0.5, math.e - 1.0, 2.0) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# build_cross_bias
# ---------------------------------------------------------------------------

def test_cross_bias_hand_example():
    packed = tiny_packed(2)
    cfg = AttentionControlConfig()
    got = build_cross_bias(np.array([[1, 2]]), packed, cfg, boost=0.7).matrix
    expected = np.array(
        [
            [0.0, 0.7, 0.7, -B, -B, -B],
            [-B, -B, -B, 0.0, 0.7, 0.7],
        ]
    )
    np.testing.assert_array_equal(got, expected)


def test_cross_bias_disabled_is_zero():
    packed = tiny_packed(2)
    cfg = AttentionControlConfig(enable_cross=False)
    got = build_cross_bias(np.array([[1, 2]]), packed, cfg, boost=5.0).matrix
    assert (got == 0).all()


def test_cross_bias_single_full_region_zero_boost():
    packed = tiny_packed(1)
    got = build_cross_bias(np.ones((2, 2), int), packed, AttentionControlConfig(), boost=0.0).matrix
    assert (got == 0).all()


def test_cross_bias_background_policies():
    packed = tiny_packed(2)
    labels = np.array([[0]])
    restricted = build_cross_bias(labels, packed, AttentionControlConfig(), boost=1.0).matrix
    np.testing.assert_array_equal(restricted[0], [0.0, -B, -B, 0.0, -B, -B])
    free = build_cross_bias(
        labels,
        packed,
        AttentionControlConfig(background_policy=BackgroundPolicy.UNRESTRICTED),
        boost=1.0,
    ).matrix
    assert (free == 0).all()


def test_cross_bias_no_boost_collapses_to_block_only():
    packed = tiny_packed(2)
    cfg = AttentionControlConfig(enable_boost=False)
    got = build_cross_bias(np.array([[1, 2]]), packed, cfg, boost=3.0).matrix
    assert set(np.unique(got)) == {-B, 0.0}


def test_cross_bias_negative_boost_clamped():
    packed = tiny_packed(1)
    got = build_cross_bias(np.array([[1]]), packed, AttentionControlConfig(), boost=-2.0).matrix
    assert (got >= 0).all()


def test_cross_bias_per_region_boost_mapping():
    packed = tiny_packed(2)
    got = build_cross_bias(
        np.array([[1, 2]]), packed, AttentionControlConfig(), boost={1: 0.25, 2: 0.5}
    ).matrix
    assert got[0, 1] == 0.25 and got[1, 4] == 0.5


def test_cross_bias_rejects_label_out_of_range():
    packed = tiny_packed(2)
    with pytest.raises(InvalidInputError):
        build_cross_bias(np.array([[3]]), packed, AttentionControlConfig(), boost=0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.floats(0, 5))
def test_cross_bias_matches_oracle(seed, n, boost):
    rng = np.random.default_rng(seed)
    packed = tiny_packed(n, span_len=4)
    labels = rng.integers(0, n + 1, size=(3, 3))
    cfg = AttentionControlConfig(
        enable_boost=bool(rng.integers(0, 2)),
        background_policy=(
            BackgroundPolicy.SOT_PAD_ONLY if rng.integers(0, 2) else BackgroundPolicy.UNRESTRICTED
        ),
    )
    got = build_cross_bias(labels, packed, cfg, boost=boost).matrix
    want = oracle_cross_bias(labels.ravel(), packed, cfg, {k: boost for k in range(1, n + 1)})
    np.testing.assert_allclose(got, want)


def test_sot_pad_exclusion_exact_zero_for_all_weights():
    # 77-token packing through the real encoder; the invariant is exact equality
    enc = ToyTextEncoder(dim=8, seed=0)
    packed = concat_prompts(encode_prompts(["red door", "blue sky"], enc))
    labels = np.array([[1, 2]])
    for w in (0.0, 0.3, 1.0):
        cfg = AttentionControlConfig(boost_weight=w)
        boost = boost_schedule(w, 1.5, 7.0)
        m = build_cross_bias(labels, packed, cfg, boost=boost).matrix
        for p, k in ((0, 1), (1, 2)):
            span = packed.span_slice(k)
            roles = packed.roles[span]
            own = m[p, span]
            assert (own[(roles == Role.SOT) | (roles == Role.PAD)] == 0.0).all()


# ---------------------------------------------------------------------------
# build_self_bias
# ---------------------------------------------------------------------------

def test_self_bias_uniform_group_is_zero():
    got = build_self_bias(np.full((2, 2), 3), AttentionControlConfig()).matrix
    assert (got == 0).all()


def test_self_bias_hand_example():
    got = build_self_bias(np.array([[1, 2, 0]]), AttentionControlConfig()).matrix
    expected = np.array([[0.0, -B, 0.0], [-B, 0.0, 0.0], [0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(got, expected)


def test_self_bias_shared_group_not_blocked():
    got = build_self_bias(np.array([[1, 1, 2]]), AttentionControlConfig()).matrix
    assert got[0, 1] == 0.0 and got[1, 0] == 0.0
    assert got[0, 2] == -B


def test_self_bias_disabled_is_zero():
    cfg = AttentionControlConfig(enable_self=False)
    got = build_self_bias(np.array([[1, 2, 3]]), cfg).matrix
    assert (got == 0).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_self_bias_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    groups = rng.integers(0, 4, size=(3, 4))
    got = build_self_bias(groups, AttentionControlConfig()).matrix
    np.testing.assert_array_equal(got, oracle_self_bias(groups.ravel(), AttentionControlConfig()))


def test_group_merge_removes_exactly_those_blocks():
    groups = np.array([1, 1, 2, 0, 3])
    before = build_self_bias(groups, AttentionControlConfig()).matrix
    merged = groups.copy()
    merged[merged == 2] = 1
    after = build_self_bias(merged, AttentionControlConfig()).matrix
    changed = before != after
    # only pairs between old group 1 and old group 2 flip, from -B to 0
    expect = np.zeros_like(changed)
    g1 = np.flatnonzero(groups == 1)
    g2 = np.flatnonzero(groups == 2)
    expect[np.ix_(g1, g2)] = True
    expect[np.ix_(g2, g1)] = True
    np.testing.assert_array_equal(changed, expect)
    assert (after[np.ix_(g1, g2)] == 0).all()


# ---------------------------------------------------------------------------
# biased_attention
# ---------------------------------------------------------------------------

def test_zero_bias_equals_plain_attention(rng):
    Q, K, V = rng.standard_normal((3, 5)), rng.standard_normal((4, 5)), rng.standard_normal((4, 2))
    got = biased_attention(Q, K, V, np.zeros((3, 4)))
    plain = row_softmax(Q @ K.T / math.sqrt(5)) @ V
    np.testing.assert_allclose(got, plain, atol=1e-12)


def test_single_surviving_key(rng):
    Q, K, V = rng.standard_normal((2, 4)), rng.standard_normal((5, 4)), rng.standard_normal((5, 3))
    bias = np.full((2, 5), -B)
    bias[0, 2] = 0.0
    bias[1, 4] = 0.0
    got = biased_attention(Q, K, V, bias)
    np.testing.assert_allclose(got[0], V[2], atol=1e-6)
    np.testing.assert_allclose(got[1], V[4], atol=1e-6)


def test_biased_attention_matches_masked_oracle(rng):
    for _ in range(25):
        P, M, dk, dv = rng.integers(2, 9, size=4)
        Q = rng.standard_normal((P, dk))
        K = rng.standard_normal((M, dk))
        V = rng.standard_normal((M, dv))
        bias = np.where(rng.random((P, M)) < 0.4, -B, rng.uniform(0, 2, (P, M)))
        bias[:, 0] = 0.0  # keep at least one key allowed per row
        got = biased_attention(Q, K, V, bias)
        np.testing.assert_allclose(got, oracle_masked_attention(Q, K, V, bias), atol=1e-6)


def test_biased_attention_shape_checks(rng):
    Q, K, V = rng.standard_normal((2, 3)), rng.standard_normal((4, 3)), rng.standard_normal((4, 2))
    with pytest.raises(InvalidInputError):
        biased_attention(Q, K, V, np.zeros((3, 4)))
    with pytest.raises(InvalidInputError):
        biased_attention(Q, K, rng.standard_normal((5, 2)), np.zeros((2, 4)))
    with pytest.raises(InvalidInputError):
        biased_attention(Q, K, V, np.full((2, 4), np.inf))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((4, 6)) * rng.uniform(0.1, 30)
    bias = np.where(rng.random((4, 6)) < 0.3, -B, 0.0)
    bias[:, 0] = 0.0
    probs = row_softmax(logits + bias)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)


# ---------------------------------------------------------------------------
# install_hooks on the toy backend
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def hooked_setup():
    backend = create_toy_backend((64, 64))
    enc = backend.encoder
    packed = concat_prompts(encode_prompts(["a red barn", "a green tree"], enc))
    m1 = np.zeros((64, 64), np.uint8)
    m1[0:32, 0:32] = 1
    m2 = np.zeros((64, 64), np.uint8)
    m2[32:64, 32:64] = 1
    clm = composite(
        [
            MaskSpec(m1, order=1, group_id=1, prompt_index=1),
            MaskSpec(m2, order=2, group_id=2, prompt_index=2),
        ]
    )
    resolutions = [(64, 64), (8, 8)] + [s.resolution for s in backend.denoiser.attention_sites]
    pyramid = build_pyramid(clm, resolutions)
    rng = np.random.default_rng(5)
    z_t = rng.standard_normal((8, 8, 192))
    return backend, packed, pyramid, clm, z_t


def test_noop_config_is_bit_exact(hooked_setup):
    backend, packed, pyramid, _clm, z_t = hooked_setup
    cfg = AttentionControlConfig(
        enable_cross=False, enable_self=False, enable_boost=False, boost_weight=0.0
    )
    hooked = install_hooks(backend.denoiser, pyramid, packed, cfg)
    plain = backend.denoiser.predict(z_t, 3, None, packed)
    via_hooks = hooked.predict(z_t, 3, None, packed)
    np.testing.assert_array_equal(plain, via_hooks)


def test_full_image_single_prompt_zero_weight_reduces_to_baseline(hooked_setup):
    # n=1, full-image mask, w=0, controls ACTIVE: both biases are identically
    # zero, so the hooked forward pass must match the raw one bit for bit
    backend, _packed, _pyramid, _clm, z_t = hooked_setup
    enc = backend.encoder
    packed1 = concat_prompts(encode_prompts(["one prompt only"], enc))
    full = MaskSpec(np.ones((64, 64), np.uint8), order=1, group_id=1, prompt_index=1)
    pyramid = build_pyramid(
        composite([full]), [s.resolution for s in backend.denoiser.attention_sites]
    )
    cfg = AttentionControlConfig(boost_weight=0.0)
    hooked = install_hooks(backend.denoiser, pyramid, packed1, cfg, sigma_of_t=lambda t: 1.3)
    for t in (1, 5):
        plain = backend.denoiser.predict(z_t, t, None, packed1)
        via_hooks = hooked.predict(z_t, t, None, packed1)
        np.testing.assert_array_equal(plain, via_hooks)


def test_cross_leakage_blocked_at_every_site(hooked_setup):
    backend, packed, pyramid, _clm, z_t = hooked_setup
    cfg = AttentionControlConfig(boost_weight=0.3)
    hooked = install_hooks(backend.denoiser, pyramid, packed, cfg, sigma_of_t=lambda t: 1.0)
    for site in backend.denoiser.attention_sites:
        if site.kind != "cross":
            continue
        probs = probe_attention(hooked, site.site_id, z_t, 3, None, packed)
        assert probs.shape[1] == packed.length
        labels = pyramid.level(site.resolution).labels.ravel()
        for k in (1, 2):
            other = packed.span_slice(3 - k)
            leak = probs[labels == k][:, other]
            assert leak.max() <= 1e-6


def test_self_attention_blocked_between_groups(hooked_setup):
    backend, packed, pyramid, _clm, z_t = hooked_setup
    cfg = AttentionControlConfig()
    hooked = install_hooks(backend.denoiser, pyramid, packed, cfg)
    for site in backend.denoiser.attention_sites:
        if site.kind != "self":
            continue
        probs = probe_attention(hooked, site.site_id, z_t, 3, None, packed)
        groups = pyramid.level(site.resolution).groups.ravel()
        blocked = (groups[:, None] > 0) & (groups[None, :] > 0) & (
            groups[:, None] != groups[None, :]
        )
        assert probs[blocked].max() <= 1e-6
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)


def test_shared_group_keeps_self_attention_open(hooked_setup):
    backend, packed, pyramid_unused, _clm, z_t = hooked_setup
    m1 = np.zeros((64, 64), np.uint8)
    m1[0:32, 0:32] = 1
    m2 = np.zeros((64, 64), np.uint8)
    m2[32:64, 32:64] = 1
    clm = composite(
        [
            MaskSpec(m1, order=1, group_id=7, prompt_index=1),
            MaskSpec(m2, order=2, group_id=7, prompt_index=2),
        ]
    )
    pyramid = build_pyramid(clm, [s.resolution for s in backend.denoiser.attention_sites])
    hooked = install_hooks(backend.denoiser, pyramid, packed, AttentionControlConfig())
    probs = probe_attention(hooked, "down.self", z_t, 3, None, packed)
    labels = pyramid.level((8, 8)).labels.ravel()
    across = probs[labels == 1][:, labels == 2]
    assert across.max() > 1e-6  # mass does flow between same-group regions


def test_install_rejects_missing_level(hooked_setup):
    backend, packed, _pyramid, clm, _z_t = hooked_setup
    bad = build_pyramid(clm, [(8, 8)])  # missing the 4x4 level
    with pytest.raises(InvalidInputError):
        install_hooks(backend.denoiser, bad, packed, AttentionControlConfig())


def test_resolution_filter_skips_sites(hooked_setup):
    backend, packed, pyramid, _clm, z_t = hooked_setup
    cfg = AttentionControlConfig(resolution_filter=frozenset({(8, 8)}))
    hooked = install_hooks(backend.denoiser, pyramid, packed, cfg)
    labels8 = pyramid.level((8, 8)).labels.ravel()
    probs_8 = probe_attention(hooked, "down.cross", z_t, 3, None, packed)
    assert probs_8[labels8 == 1][:, packed.span_slice(2)].max() <= 1e-6
    # the 4x4 site carries no bias: cross-region mass keeps flowing there
    labels4 = pyramid.level((4, 4)).labels.ravel()
    probs_4 = probe_attention(hooked, "mid.cross", z_t, 3, None, packed)
    assert probs_4[labels4 == 1][:, packed.span_slice(2)].max() > 1e-6


def test_ablation_toggles_are_independent(hooked_setup):
    backend, packed, pyramid, _clm, z_t = hooked_setup
    arms = ablation_arms(AttentionControlConfig(boost_weight=0.3))
    labels = pyramid.level((8, 8)).labels.ravel()
    groups = pyramid.level((8, 8)).groups.ravel()
    blocked = (groups[:, None] > 0) & (groups[None, :] > 0) & (groups[:, None] != groups[None, :])

    no_cross = install_hooks(backend.denoiser, pyramid, packed, arms["no-cross"])
    cross_probs = probe_attention(no_cross, "down.cross", z_t, 3, None, packed)
    assert cross_probs[labels == 1][:, packed.span_slice(2)].max() > 1e-6  # unrestricted
    self_probs = probe_attention(no_cross, "down.self", z_t, 3, None, packed)
    assert self_probs[blocked].max() <= 1e-6  # self control still on

    no_self = install_hooks(backend.denoiser, pyramid, packed, arms["no-self"])
    self_probs2 = probe_attention(no_self, "down.self", z_t, 3, None, packed)
    assert self_probs2[blocked].max() > 1e-6  # unrestricted
    cross_probs2 = probe_attention(no_self, "down.cross", z_t, 3, None, packed)
    assert cross_probs2[labels == 1][:, packed.span_slice(2)].max() <= 1e-6  # cross still on


def test_attention_dump_recorder(hooked_setup, tmp_path):
    import json

    backend, packed, pyramid, _clm, z_t = hooked_setup
    path = tmp_path / "attn.jsonl"
    from maskedit.attention import AttentionDumpRecorder

    with AttentionDumpRecorder(path) as rec:
        hooked = install_hooks(
            backend.denoiser, pyramid, packed, AttentionControlConfig(), recorder=rec
        )
        hooked.predict(z_t, 3, None, packed)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == len(backend.denoiser.attention_sites)
    assert all(l["leak_mass_max"] <= 1e-6 for l in lines)
