"""Network forward tests: shapes, decode round trips, NMS, attention
normalization, greedy decoding, and gradient flow through each head."""

import numpy as np
import pytest

from textspot import autodiff as ad
from textspot.autodiff import Tensor
from textspot.bezier import region_to_polygon
from textspot.errors import ConfigError
from textspot.gradcheck import check_gradients
from textspot.model import (
    EOS,
    N_CLASSES,
    DetectionCandidate,
    DetectionOutput,
    ModelConfig,
    backbone_forward,
    build_params,
    decode_detections,
    decode_region_offsets,
    detection_forward,
    discriminator_forward,
    encode_region_offsets,
    greedy_decode,
    infer_model_config,
    recognition_forward,
    word_embedding_forward,
)
from textspot.font import CHARSET
from textspot.rng import Xoshiro256

CFG = ModelConfig(backbone_channels=8, head_channels=12, we_fc_hidden=16, embed_dim=6,
                  align_h=4, align_w=10, rec_hidden=12, rec_att=10, rec_char_emb=8)


@pytest.fixture(scope="module")
def params():
    return build_params(CFG, seed=5)


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    return Xoshiro256(seed).uniform_array(shape, lo, hi)


# ---------------------------------------------------------------------------
# backbone


def test_backbone_output_shape(params):
    out = backbone_forward(params, Tensor(rand((1, 1, 64, 128), seed=1, lo=0.0, hi=1.0)))
    assert out.shape == (1, CFG.backbone_channels, 16, 32)


def test_backbone_rejects_indivisible_dims(params):
    with pytest.raises(ConfigError):
        backbone_forward(params, Tensor(np.zeros((1, 1, 62, 128))))


def test_backbone_zero_image_zero_biases(params):
    out = backbone_forward(params, Tensor(np.zeros((1, 1, 32, 32))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_backbone_gradients_match_fd():
    cfg = ModelConfig(backbone_channels=3)
    small = build_params(cfg, seed=9)
    image = rand((1, 1, 8, 8), seed=2, lo=0.0, hi=1.0)
    names = [f"backbone.conv{i}.{s}" for i in range(1, 5) for s in ("w", "b")]

    def fn(tensors):
        probe = ParamsProbe(small, dict(zip(names, tensors)))
        return backbone_forward(probe, Tensor(image))

    err = check_gradients(fn, [small[n].data.copy() for n in names])
    assert err < 1e-4


class ParamsProbe:
    """ParameterSet stand-in that overrides a few tensors."""

    def __init__(self, base, overrides):
        self._base = base
        self._overrides = overrides

    def __getitem__(self, name):
        return self._overrides.get(name, self._base[name])


# ---------------------------------------------------------------------------
# detection head and decoding


def test_detection_output_spatial_dims(params):
    feats = backbone_forward(params, Tensor(rand((1, 1, 32, 64), seed=3, lo=0.0, hi=1.0)))
    det = detection_forward(params, feats)
    assert det.score_map.shape == (1, 1, 8, 16)
    assert det.offset_map.shape == (1, 16, 8, 16)


def test_detection_zero_weights_give_half_confidence():
    cfg = ModelConfig(backbone_channels=4)
    p = build_params(cfg, seed=1)
    for name in ("det.score1.w", "det.score1.b", "det.score2.w", "det.score2.b"):
        p[name].data = np.zeros_like(p[name].data)
    feats = Tensor(rand((1, 4, 6, 6), seed=4))
    det = detection_forward(p, feats)
    np.testing.assert_array_equal(det.score_map.data, 0.0)
    from textspot.model import np_sigmoid

    np.testing.assert_array_equal(np_sigmoid(det.score_map.data), 0.5)


def test_offset_encode_decode_round_trip():
    # encode(decode(offsets)) and decode(encode(region)) are both identities
    stream = Xoshiro256(17)
    from textspot.bezier import BezierRegion

    for k in range(20):
        offs = stream.uniform_array((16,), -12.0, 12.0)
        region = decode_region_offsets(offs, 3, 7)
        np.testing.assert_allclose(encode_region_offsets(region, 3, 7), offs, atol=1e-9)

        flat = stream.uniform_array((16,), 0.0, 90.0)
        region = BezierRegion.from_flat(flat)
        back = decode_region_offsets(encode_region_offsets(region, 2, 5), 2, 5)
        np.testing.assert_allclose(np.asarray(back.to_flat()), flat, atol=1e-9)


def _det_output(scores, offsets):
    return DetectionOutput(score_map=Tensor(scores), offset_map=Tensor(offsets))


def test_decode_all_below_threshold():
    det = _det_output(np.full((1, 1, 4, 4), -9.0), np.zeros((1, 16, 4, 4)))
    assert decode_detections(det, 0.5, 0.5, 10) == []


def test_decode_single_hot_cell():
    scores = np.full((1, 1, 4, 4), -9.0)
    scores[0, 0, 2, 1] = 5.0
    offsets = np.zeros((1, 16, 4, 4))
    offsets[:, :, 2, 1] = encode_region_offsets(
        decode_region_offsets(np.arange(16, dtype=float) / 4, 2, 1), 2, 1)
    cands = decode_detections(_det_output(scores, offsets), 0.5, 0.5, 10)
    assert len(cands) == 1
    assert (cands[0].row, cands[0].col) == (2, 1)
    expected = decode_region_offsets(offsets[0, :, 2, 1], 2, 1)
    np.testing.assert_allclose(np.asarray(cands[0].region.to_flat()),
                               np.asarray(expected.to_flat()), atol=1e-12)


def test_decode_nms_suppresses_duplicate():
    # two hot cells decoding to near-identical regions: higher confidence wins
    scores = np.full((1, 1, 4, 4), -9.0)
    scores[0, 0, 1, 1] = 3.0
    scores[0, 0, 1, 2] = 2.0
    target = decode_region_offsets(np.array([2.0, 2.0, 5.0, 2.0, 8.0, 2.0, 11.0, 2.0,
                                             2.0, 8.0, 5.0, 8.0, 8.0, 8.0, 11.0, 8.0]) * 4, 0, 0)
    offsets = np.zeros((1, 16, 4, 4))
    offsets[:, :, 1, 1] = encode_region_offsets(target, 1, 1)
    offsets[:, :, 1, 2] = encode_region_offsets(target.translated(1.0, 0.0), 1, 2)
    cands = decode_detections(_det_output(scores, offsets), 0.5, 0.5, 10)
    assert len(cands) == 1
    assert (cands[0].row, cands[0].col) == (1, 1)

    # pairwise-IoU oracle: the suppressed pair really does overlap past 0.5
    from textspot.bezier import polygon_iou

    iou = polygon_iou(region_to_polygon(target), region_to_polygon(target.translated(1.0, 0.0)))
    assert iou > 0.5


def test_decode_respects_max_det_and_ordering():
    scores = rand((1, 1, 6, 6), seed=8, lo=-1.0, hi=4.0)
    offsets = np.zeros((1, 16, 6, 6))
    spread = encode_region_offsets(decode_region_offsets(np.arange(16.0), 0, 0), 0, 0)
    for r in range(6):
        for c in range(6):
            offsets[0, :, r, c] = spread + (r * 6 + c) * 40.0  # far apart, no NMS overlap
    cands = decode_detections(_det_output(scores, offsets), 0.4, 0.5, 7)
    assert len(cands) <= 7
    confs = [c.confidence for c in cands]
    assert confs == sorted(confs, reverse=True)


# ---------------------------------------------------------------------------
# recognition


def test_recognition_output_shape(params):
    aligned = Tensor(rand((CFG.backbone_channels, CFG.align_h, CFG.align_w), seed=6))
    logits, att = recognition_forward(params, aligned, CFG, max_steps=9)
    assert logits.shape == (9, N_CLASSES)
    assert N_CLASSES == 37
    assert att.shape == (9, CFG.align_w)


def test_recognition_attention_rows_sum_to_one(params):
    aligned = Tensor(rand((CFG.backbone_channels, CFG.align_h, CFG.align_w), seed=7))
    _, att = recognition_forward(params, aligned, CFG, max_steps=6)
    assert np.all(att >= 0)
    np.testing.assert_allclose(att.sum(axis=1), 1.0, atol=1e-12)


def test_recognition_teacher_forcing_step_count(params):
    aligned = Tensor(rand((CFG.backbone_channels, CFG.align_h, CFG.align_w), seed=8))
    logits, _ = recognition_forward(params, aligned, CFG, target="cafe")
    assert logits.shape == (5, N_CLASSES)


def test_recognition_full_path_gradient(params):
    aligned_np = rand((CFG.backbone_channels, CFG.align_h, CFG.align_w), seed=9)

    def fn(tensors):
        logits, _ = recognition_forward(params, tensors[0], CFG, target="ab")
        return logits

    err = check_gradients(fn, [aligned_np])
    assert err < 1e-4


def test_greedy_decode_basic():
    logits = np.full((4, N_CLASSES), -5.0)
    for i, ch in enumerate("cat"):
        logits[i, CHARSET.index(ch)] = 5.0
    logits[3, EOS] = 5.0
    assert greedy_decode(logits) == "cat"


def test_greedy_decode_immediate_eos():
    logits = np.zeros((3, N_CLASSES))
    logits[0, EOS] = 9.0
    assert greedy_decode(logits) == ""


def test_greedy_decode_matches_argmax_oracle():
    stream = Xoshiro256(31)
    logits = stream.uniform_array((6, N_CLASSES), -1.0, 1.0)
    expected = []
    for row in logits:
        idx = int(np.argmax(row))
        if idx == EOS:
            break
        expected.append(CHARSET[idx])
    assert greedy_decode(logits) == "".join(expected)


def test_greedy_decode_tie_breaks_lowest_index():
    logits = np.zeros((1, N_CLASSES))
    assert greedy_decode(logits) == "a"  # all equal: argmax -> index 0


# ---------------------------------------------------------------------------
# word-embedding head


def test_word_embedding_output_shape_and_sign(params):
    aligned = Tensor(rand((3, CFG.backbone_channels, CFG.align_h, CFG.align_w), seed=10))
    out = word_embedding_forward(params, aligned, CFG)
    assert out.shape == (3, CFG.embed_dim)
    assert np.all(out.data >= 0)  # terminal relu


def test_word_embedding_reference_sizes():
    # reference configuration: 256-channel convs, 300-d output
    cfg = ModelConfig(backbone_channels=4, head_channels=256, we_fc_hidden=64,
                      embed_dim=300, align_h=2, align_w=4)
    p = build_params(cfg, seed=3)
    aligned = Tensor(rand((2, 4, 2, 4), seed=11))
    out = word_embedding_forward(p, aligned, cfg)
    assert out.shape == (2, 300)


def test_word_embedding_first_conv_gradient(params):
    aligned = rand((1, CFG.backbone_channels, CFG.align_h, CFG.align_w), seed=12)

    def fn(tensors):
        probe = ParamsProbe(params, {"wehead.conv1.w": tensors[0]})
        return word_embedding_forward(probe, Tensor(aligned), CFG)

    err = check_gradients(fn, [params["wehead.conv1.w"].data.copy()])
    assert err < 1e-4


# ---------------------------------------------------------------------------
# discriminator


def test_discriminator_output_range(params):
    out = discriminator_forward(params, Tensor(rand((5, CFG.embed_dim), seed=13)))
    assert out.shape == (5,)
    assert np.all((out.data > 0) & (out.data < 1))


def test_discriminator_zero_weights_half():
    cfg = ModelConfig(embed_dim=4)
    p = build_params(cfg, seed=2)
    for name in ("disc.fc1", "disc.fc2", "disc.fc3"):
        p[f"{name}.w"].data = np.zeros_like(p[f"{name}.w"].data)
        p[f"{name}.b"].data = np.zeros_like(p[f"{name}.b"].data)
    out = discriminator_forward(p, Tensor(rand((3, 4), seed=14)))
    np.testing.assert_array_equal(out.data, 0.5)


def test_discriminator_all_layer_gradients(params):
    v = rand((2, CFG.embed_dim), seed=15)
    names = [f"disc.fc{i}.{s}" for i in (1, 2, 3) for s in ("w", "b")]
    values = [params[n].data.copy() for n in names]
    # nudge hidden biases so no relu pre-activation sits on the kink the
    # central difference would straddle
    values[1] = values[1] + 0.05
    values[3] = values[3] + 0.05

    def fn(tensors):
        probe = ParamsProbe(params, dict(zip(names, tensors)))
        return discriminator_forward(probe, Tensor(v))

    err = check_gradients(fn, values)
    assert err < 1e-4


# ---------------------------------------------------------------------------
# parameter set structure


def test_prefixes_disjoint(params):
    names = params.names()
    prefixes = ("backbone.", "det.", "rec.", "wehead.", "disc.")
    for name in names:
        assert sum(name.startswith(p) for p in prefixes) == 1
    disc = {n for n in names if n.startswith("disc.")}
    gen = {n for n in names if not n.startswith("disc.")}
    assert not disc & gen


def test_infer_model_config_round_trip(params):
    got = infer_model_config(params, align_h=CFG.align_h)
    assert got == CFG or (got.backbone_channels == CFG.backbone_channels
                          and got.embed_dim == CFG.embed_dim
                          and got.align_w == CFG.align_w
                          and got.head_channels == CFG.head_channels)


def test_word_embedding_dim_must_match_table():
    from textspot.embed import load_table
    from pathlib import Path
    from textspot.train import TrainConfig

    table = load_table(Path(__file__).resolve().parents[1] / "data" / "embeddings_16d.txt")
    cfg = TrainConfig(dataset_dir="x", table_path="x").model_config(table.dim)
    assert cfg.embed_dim == table.dim
