import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskedit import (
    SEQ_LEN,
    EncoderError,
    InvalidInputError,
    PromptEmbedding,
    Role,
    concat_prompts,
    encode_prompts,
    unconditional_packing,
)
from maskedit.backends import ToyTextEncoder

words = st.lists(
    st.text(alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd")), min_size=1, max_size=8),
    min_size=0,
    max_size=10,
)


def oracle_roles(text):
    """Independent re-tokenization: SOT, one CONTENT per whitespace word, EOT, PADs."""
    n_words = min(len(text.split()), SEQ_LEN - 2)
    roles = [Role.SOT] + [Role.CONTENT] * n_words + [Role.EOT]
    roles += [Role.PAD] * (SEQ_LEN - len(roles))
    return np.array(roles, dtype=np.int8)


@pytest.fixture(scope="module")
def encoder():
    return ToyTextEncoder(dim=16, seed=3)


# ---------------------------------------------------------------------------
# encode_prompts
# ---------------------------------------------------------------------------

def test_joint_vs_solo_encoding_identical(encoder):
    joint = encode_prompts(["a", "b"], encoder)
    solo = encode_prompts(["a"], encoder)
    np.testing.assert_array_equal(joint[0].matrix, solo[0].matrix)
    np.testing.assert_array_equal(joint[0].roles, solo[0].roles)


def test_empty_prompt_is_valid(encoder):
    emb = encode_prompts([""], encoder)[0]
    assert emb.roles[0] == Role.SOT
    assert emb.roles[1] == Role.EOT
    assert (emb.roles[2:] == Role.PAD).all()


def test_roles_match_retokenization_oracle(encoder):
    for text in ["", "one", "two words", "a b c d e", "  padded   spacing "]:
        emb = encoder.encode(text)
        np.testing.assert_array_equal(emb.roles, oracle_roles(text))


def test_identical_words_identical_embeddings(encoder):
    emb = encoder.encode("dog dog cat")
    np.testing.assert_array_equal(emb.matrix[1], emb.matrix[2])
    assert not np.array_equal(emb.matrix[1], emb.matrix[3])


def test_overlong_prompt_truncates_with_warning(encoder):
    text = " ".join(f"w{i}" for i in range(100))
    with pytest.warns(UserWarning, match="truncat"):
        emb = encoder.encode(text)
    assert (emb.roles == Role.CONTENT).sum() == SEQ_LEN - 2
    assert (emb.roles == Role.EOT).sum() == 1


def test_empty_prompt_list_rejected(encoder):
    with pytest.raises(InvalidInputError):
        encode_prompts([], encoder)


def test_encoder_failure_carries_prompt_index(encoder):
    class Broken:
        dim = 16

        def encode(self, text):
            if text == "boom":
                raise RuntimeError("no tokens")
            return encoder.encode(text)

    with pytest.raises(EncoderError) as exc:
        encode_prompts(["fine", "boom"], Broken())
    assert exc.value.prompt_index == 1


@settings(max_examples=50, deadline=None)
@given(words)
def test_isolation_property(ws):
    enc = ToyTextEncoder(dim=8, seed=0)
    prompts = [" ".join(ws), "unrelated neighbor"]
    joint = encode_prompts(prompts, enc)
    solo = enc.encode(prompts[0])
    np.testing.assert_array_equal(joint[0].matrix, solo.matrix)


# ---------------------------------------------------------------------------
# concat_prompts
# ---------------------------------------------------------------------------

def test_single_prompt_packing_is_identity(encoder):
    emb = encoder.encode("hello world")
    packed = concat_prompts([emb])
    np.testing.assert_array_equal(packed.matrix, emb.matrix)
    assert packed.spans == [(0, SEQ_LEN)]


def test_three_prompt_packing_spans(encoder):
    packed = concat_prompts(encode_prompts(["a", "b", "c"], encoder))
    assert packed.length == 3 * SEQ_LEN == 231
    assert packed.spans[1] == (77, 154)


def test_packing_row_indexing_oracle(encoder):
    embs = encode_prompts(["first thing", "second thing"], encoder)
    packed = concat_prompts(embs)
    for r in range(packed.length):
        np.testing.assert_array_equal(packed.matrix[r], embs[r // SEQ_LEN].matrix[r % SEQ_LEN])
        assert packed.roles[r] == embs[r // SEQ_LEN].roles[r % SEQ_LEN]


def test_mixed_widths_rejected(encoder):
    wide = ToyTextEncoder(dim=32, seed=3)
    with pytest.raises(InvalidInputError):
        concat_prompts([encoder.encode("a"), wide.encode("b")])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5))
def test_length_and_role_count_laws(n):
    enc = ToyTextEncoder(dim=8, seed=0)
    packed = concat_prompts(encode_prompts([f"prompt {i}" for i in range(n)], enc))
    assert packed.length == SEQ_LEN * n
    assert (packed.roles == Role.SOT).sum() == n
    assert (packed.roles == Role.EOT).sum() == n


# ---------------------------------------------------------------------------
# unconditional_packing
# ---------------------------------------------------------------------------

def test_unconditional_single(encoder):
    packed = unconditional_packing(1, encoder)
    np.testing.assert_array_equal(packed.matrix, encoder.encode("").matrix)


def test_unconditional_spans_are_copies(encoder):
    packed = unconditional_packing(2, encoder)
    np.testing.assert_array_equal(
        packed.matrix[packed.span_slice(1)], packed.matrix[packed.span_slice(2)]
    )


def test_unconditional_roles_have_sot_at_local_zero(encoder):
    packed = unconditional_packing(3, encoder)
    for start, _end in packed.spans:
        assert packed.roles[start] == Role.SOT


def test_unconditional_rejects_nonpositive(encoder):
    with pytest.raises(InvalidInputError):
        unconditional_packing(0, encoder)


# ---------------------------------------------------------------------------
# PromptEmbedding invariants
# ---------------------------------------------------------------------------

def test_embedding_invariant_enforcement():
    ok_roles = oracle_roles("x")
    PromptEmbedding(np.zeros((SEQ_LEN, 4)), ok_roles)
    bad = ok_roles.copy()
    bad[0] = Role.CONTENT
    with pytest.raises(InvalidInputError):
        PromptEmbedding(np.zeros((SEQ_LEN, 4)), bad)
    two_eot = ok_roles.copy()
    two_eot[5] = Role.EOT
    with pytest.raises(InvalidInputError):
        PromptEmbedding(np.zeros((SEQ_LEN, 4)), two_eot)
