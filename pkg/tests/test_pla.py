import numpy as np
import pytest
import torch

from hsigen import pla


TAB_ROWS = {
    "head": {"head up", "head down", "head left", "head right"},
    "torso": {"sit", "sit down", "lean", "lie", "lie down"},
    "arm": {"stretch", "bend", "straight", "supported", "raise", "put"},
    "hand": {"touch", "use", "hold", "support", "supported", "type", "write", "open"},
    "lower": {"stand", "stand up", "step", "step up", "step down", "step back",
              "walk", "run", "move", "crouch", "turn around", "raise", "put"},
}


def test_vocab_matches_action_table():
    expected = set().union(*TAB_ROWS.values())
    assert set(pla.action_vocab()) == expected


def test_crouch_maps_to_lower_body():
    assert pla.part_of("crouch") == {"left_lower", "right_lower"}


def test_sit_maps_to_torso():
    assert pla.part_of("sit") == {"torso"}


def test_touch_left_hand():
    assert pla.part_of("touch", "left") == {"left_hand"}


def test_duplicate_rows_resolve_to_union():
    assert pla.part_of("raise") == {"left_arm", "right_arm", "left_lower", "right_lower"}
    assert pla.part_of("supported") == {"left_arm", "right_arm", "left_hand", "right_hand"}
    assert pla.part_of("supported", "left") == {"left_arm", "left_hand"}


def test_part_of_total_and_nonempty():
    for action in pla.action_vocab():
        parts = pla.part_of(action)
        assert parts
        assert parts <= set(pla.PARTS)


def test_part_of_unknown_action():
    with pytest.raises(pla.UnknownActionError):
        pla.part_of("fly")


def test_tokens_one_hot():
    tokens = pla.action_tokens([("crouch", None), ("touch", "left")])
    for tok in tokens:
        assert tok.e_a.sum() == 1.0
        assert tok.e_bp.sum() == 1.0
    assert [t.part for t in tokens] == ["left_lower", "right_lower", "left_hand"]


def test_tool_actions_default_right_side():
    tokens = pla.action_tokens([("touch", None)])
    assert [t.part for t in tokens] == ["right_hand"]
    tokens = pla.action_tokens([("stand", None)])
    assert {t.part for t in tokens} == {"left_lower", "right_lower"}


# ---------------------------------------------------------------------------
# masks

def test_mask_crouch_only_lower_columns():
    tokens = pla.action_tokens([("crouch", None)])
    mask = pla.build_attention_mask(tokens)
    lower = {pla.PART_INDEX["left_lower"], pla.PART_INDEX["right_lower"]}
    for row in mask:
        assert set(np.flatnonzero(row)) == lower


def test_mask_empty_actions_rejected():
    with pytest.raises(ValueError):
        pla.build_attention_mask([])
    enc = pla.ActionEncoder()
    with pytest.raises(ValueError):
        enc([])


def test_mask_sit_touch_left():
    tokens = pla.action_tokens([("sit", None), ("touch", "left")])
    mask = pla.build_attention_mask(tokens)
    assert mask.shape == (2, 8)
    assert set(np.flatnonzero(mask[0])) == {pla.PART_INDEX["torso"]}
    assert set(np.flatnonzero(mask[1])) == {pla.PART_INDEX["left_hand"]}


def test_mask_deterministic_weight_free():
    tokens = pla.action_tokens([("sit", None), ("walk", None)])
    m1 = pla.build_attention_mask(tokens)
    m2 = pla.build_attention_mask(tokens)
    np.testing.assert_array_equal(m1, m2)


# ---------------------------------------------------------------------------
# action encoding

@pytest.fixture(scope="module")
def encoder():
    torch.manual_seed(1)
    enc = pla.ActionEncoder()
    return enc.double()


def test_encode_actions_dimension(encoder):
    for actions in ([("sit", None)], [("sit", None), ("touch", "left"), ("walk", None)]):
        f = pla.encode_actions(pla.action_tokens(actions), encoder)
        assert f.shape == (64,)


def test_encode_actions_order_invariant(encoder):
    tokens = pla.action_tokens([("sit", None), ("touch", "left"), ("walk", None)])
    f1 = pla.encode_actions(tokens, encoder)
    f2 = pla.encode_actions(tokens[::-1], encoder)
    assert torch.equal(f1, f2)


def test_encode_actions_distinguishes_actions(encoder):
    f_sit = pla.encode_actions(pla.action_tokens([("sit", None)]), encoder)
    f_lie = pla.encode_actions(pla.action_tokens([("lie", None)]), encoder)
    assert not torch.allclose(f_sit, f_lie)


# ---------------------------------------------------------------------------
# realized attention through the decoder

def test_masked_attention_exactly_zero_in_decoder():
    from hsigen import generator as gen
    torch.manual_seed(2)
    model = gen.InteractionVAE(gen.ModelConfig(d_model=64, heads=2,
                                               enc_layers=1, dec_layers=2, d_z=8))
    tokens = pla.action_tokens([("crouch", None), ("touch", "left")])
    mask = pla.build_attention_mask(tokens)
    z = torch.zeros(8, dtype=torch.float64)
    f_ce = torch.zeros(gen.CONDITION_DIM, dtype=torch.float64)
    beta = torch.ones(10, dtype=torch.float64)
    model.decode(z, f_ce, beta, tokens)

    part0, act0 = 2, 2 + len(pla.PARTS)
    for attn in model.decoder_attention():           # (heads, S, S)
        a = attn.numpy()
        for i in range(len(tokens)):
            for j in range(len(pla.PARTS)):
                if not mask[i, j]:
                    assert np.all(a[:, act0 + i, part0 + j] == 0.0)
                    assert np.all(a[:, part0 + j, act0 + i] == 0.0)
        # softmax rows are exact distributions over allowed entries
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-12)
