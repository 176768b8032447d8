"""Network forward passes: backbone, detection head, attention recognizer,
word-embedding head, and discriminator.

All parameters live in one ParameterSet under disjoint name prefixes
(``backbone.``, ``det.``, ``rec.``, ``wehead.``, ``disc.``); the
discriminator's isolation from the rest is what makes alternating
adversarial updates possible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .bezier import BezierRegion, bezier_align, iou_upper_bound, polygon_iou, region_to_polygon
from .errors import ConfigError
from .font import CHARSET
from .rng import Xoshiro256

N_CLASSES = len(CHARSET) + 1  # charset + EOS
EOS = len(CHARSET)
START = N_CLASSES  # extra embedding row fed at the first decode step
SPATIAL_SCALE = 0.25  # backbone downsamples by 4
GEN_PREFIXES = ("backbone.", "det.", "rec.", "wehead.")
DISC_PREFIX = "disc."


@dataclass
class ModelConfig:
    backbone_channels: int = 64
    head_channels: int = 128  # word-embedding head convs (reference value 256)
    we_fc_hidden: int = 256
    embed_dim: int = 16
    align_h: int = 8
    align_w: int = 32
    rec_hidden: int = 64
    rec_att: int = 64
    rec_char_emb: int = 32
    max_steps: int = 14


@dataclass
class DetectionOutput:
    score_map: Tensor  # [1,1,h',w'] text-ness logits
    offset_map: Tensor  # [1,16,h',w'] control-point offsets in cell units


@dataclass
class DetectionCandidate:
    region: BezierRegion
    confidence: float
    row: int = -1
    col: int = -1
    aligned: Tensor | None = None
    text: str | None = None
    pred_embedding: np.ndarray | None = None
    polygon: np.ndarray = field(default=None, repr=False)


def np_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# parameter construction


def _init_conv(params, stream, name, cout, cin, k):
    lim = np.sqrt(6.0 / (cin * k * k))
    params.add(f"{name}.w", Tensor(stream.uniform_array((cout, cin, k, k), -lim, lim)))
    params.add(f"{name}.b", Tensor(np.zeros(cout)))


def _init_fc(params, stream, name, out_dim, in_dim):
    lim = np.sqrt(6.0 / in_dim)
    params.add(f"{name}.w", Tensor(stream.uniform_array((out_dim, in_dim), -lim, lim)))
    params.add(f"{name}.b", Tensor(np.zeros(out_dim)))


def build_params(cfg: ModelConfig, seed: int) -> ParameterSet:
    stream = Xoshiro256(seed)
    p = ParameterSet()
    c = cfg.backbone_channels
    _init_conv(p, stream, "backbone.conv1", c, 1, 4)
    _init_conv(p, stream, "backbone.conv2", c, c, 4)
    _init_conv(p, stream, "backbone.conv3", c, c, 3)
    _init_conv(p, stream, "backbone.conv4", c, c, 3)

    _init_conv(p, stream, "det.score1", c, c, 3)
    _init_conv(p, stream, "det.score2", 1, c, 3)
    _init_conv(p, stream, "det.offset1", c, c, 3)
    _init_conv(p, stream, "det.offset2", 16, c, 3)

    a, h, e = cfg.rec_att, cfg.rec_hidden, cfg.rec_char_emb
    _init_fc(p, stream, "rec.att_w1", a, c)
    lim = np.sqrt(6.0 / h)
    p.add("rec.att_w2", Tensor(stream.uniform_array((h, a), -lim, lim)))
    # wide scoring vector: spreads the initial attention logits so the
    # softmax is not stuck near uniform (slow symmetry breaking otherwise)
    p.add("rec.att_v", Tensor(stream.uniform_array((a, 1), -3.0, 3.0)))
    # near-zero character embeddings: the previous-character shortcut must
    # not outrun the visual context path early in training
    p.add("rec.char_emb", Tensor(stream.uniform_array((N_CLASSES + 1, e), -0.05, 0.05)))
    # learned initial decoder state: step 0 needs a query that can address
    # the word start; a zero state would make the first attention blind
    p.add("rec.state0", Tensor(stream.uniform_array((1, h), -0.5, 0.5)))
    _init_fc(p, stream, "rec.cell_z", h, c + e + h)
    p["rec.cell_z.b"].data -= 1.0  # open the update gate early
    _init_fc(p, stream, "rec.cell_c", h, c + e + h)
    # classifier reads the attentional hidden state [state; context]: the
    # visual context keeps a direct linear path to the logits
    _init_fc(p, stream, "rec.out", N_CLASSES, h + c)

    hc = cfg.head_channels
    _init_conv(p, stream, "wehead.conv1", hc, c, 3)
    _init_conv(p, stream, "wehead.conv2", hc, hc, 3)
    _init_fc(p, stream, "wehead.fc1", cfg.we_fc_hidden, hc * cfg.align_w)
    _init_fc(p, stream, "wehead.fc2", cfg.embed_dim, cfg.we_fc_hidden)
    # positive output bias: embedding targets are non-negative and the head
    # ends in a relu; starting inside the live region avoids dead units
    p["wehead.fc2.b"].data = p["wehead.fc2.b"].data + 0.4

    _init_fc(p, stream, "disc.fc1", 256, cfg.embed_dim)
    _init_fc(p, stream, "disc.fc2", 64, 256)
    _init_fc(p, stream, "disc.fc3", 1, 64)
    return p


def infer_model_config(params: ParameterSet, align_h: int = 8, max_steps: int = 14) -> ModelConfig:
    """Reconstruct layer sizes from checkpoint shapes.

    The align grid height is pooled away inside the word-embedding head and
    cannot be recovered from parameter shapes; callers that trained with a
    non-default value must pass it explicitly.
    """
    hc = params["wehead.conv1.w"].shape[0]
    return ModelConfig(
        backbone_channels=params["backbone.conv1.w"].shape[0],
        head_channels=hc,
        we_fc_hidden=params["wehead.fc1.w"].shape[0],
        embed_dim=params["wehead.fc2.w"].shape[0],
        align_h=align_h,
        align_w=params["wehead.fc1.w"].shape[1] // hc,
        rec_hidden=params["rec.cell_z.w"].shape[0],
        rec_att=params["rec.att_w1.w"].shape[0],
        rec_char_emb=params["rec.char_emb"].shape[1],
        max_steps=max_steps,
    )


# ---------------------------------------------------------------------------
# forward passes


def _conv_relu(params, name, x, stride=1, pad=1):
    return ad.relu(ad.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], stride=stride, pad=pad))


def backbone_forward(params: ParameterSet, image: Tensor) -> Tensor:
    """[1,1,H,W] image in [0,1] -> [1,c,H/4,W/4] features."""
    _, _, h, w = image.shape
    if h % 4 or w % 4:
        raise ConfigError(f"image dims {h}x{w} must be divisible by 4")
    x = _conv_relu(params, "backbone.conv1", image, stride=2, pad=1)
    x = _conv_relu(params, "backbone.conv2", x, stride=2, pad=1)
    x = _conv_relu(params, "backbone.conv3", x)
    x = _conv_relu(params, "backbone.conv4", x)
    return x


def detection_forward(params: ParameterSet, features: Tensor) -> DetectionOutput:
    s = _conv_relu(params, "det.score1", features)
    score = ad.conv2d(s, params["det.score2.w"], params["det.score2.b"], stride=1, pad=1)
    o = _conv_relu(params, "det.offset1", features)
    offset = ad.conv2d(o, params["det.offset2.w"], params["det.offset2.b"], stride=1, pad=1)
    return DetectionOutput(score_map=score, offset_map=offset)


def encode_region_offsets(region: BezierRegion, row: int, col: int,
                          spatial_scale: float = SPATIAL_SCALE) -> np.ndarray:
    """Control points -> offsets from the cell center, in feature-cell units."""
    cell = 1.0 / spatial_scale
    cx = (col + 0.5) * cell
    cy = (row + 0.5) * cell
    flat = np.asarray(region.to_flat())
    out = np.empty(16)
    out[0::2] = (flat[0::2] - cx) / cell
    out[1::2] = (flat[1::2] - cy) / cell
    return out


def decode_region_offsets(offsets: np.ndarray, row: int, col: int,
                          spatial_scale: float = SPATIAL_SCALE) -> BezierRegion:
    cell = 1.0 / spatial_scale
    cx = (col + 0.5) * cell
    cy = (row + 0.5) * cell
    flat = np.empty(16)
    flat[0::2] = offsets[0::2] * cell + cx
    flat[1::2] = offsets[1::2] * cell + cy
    return BezierRegion.from_flat(flat)


def decode_detections(det: DetectionOutput, score_thresh: float, iou_nms: float,
                      max_det: int, spatial_scale: float = SPATIAL_SCALE,
                      pre_topk: int = 64, nms_raster_scale: int = 4) -> list[DetectionCandidate]:
    """Threshold, decode and greedy polygon-NMS the dense predictions.

    Candidates come out sorted by confidence descending with a deterministic
    (row, col) tie-break; at most max_det survive.
    """
    if not 0.0 < score_thresh < 1.0:
        raise ConfigError("score_thresh must lie in (0,1)")
    probs = np_sigmoid(det.score_map.data[0, 0])
    offsets = det.offset_map.data[0]
    rows, cols = np.nonzero(probs >= score_thresh)
    if rows.size == 0:
        return []
    confs = probs[rows, cols]
    order = np.lexsort((cols, rows, -confs))[:pre_topk]
    survivors: list[DetectionCandidate] = []
    for i in order:
        r, c = int(rows[i]), int(cols[i])
        region = decode_region_offsets(offsets[:, r, c], r, c, spatial_scale)
        poly = region_to_polygon(region)
        if any(iou_upper_bound(poly, s.polygon) > iou_nms
               and polygon_iou(poly, s.polygon, raster_scale=nms_raster_scale) > iou_nms
               for s in survivors):
            continue
        survivors.append(DetectionCandidate(
            region=region, confidence=float(confs[i]), row=r, col=c, polygon=poly))
        if len(survivors) == max_det:
            break
    return survivors


def align_region(params_features: Tensor, region: BezierRegion, cfg: ModelConfig,
                 spatial_scale: float = SPATIAL_SCALE) -> Tensor:
    """BezierAlign one region out of [1,c,h,w] backbone features -> [c,oh,ow]."""
    fmap = ad.reshape(params_features, params_features.shape[1:])
    return bezier_align(fmap, region, cfg.align_h, cfg.align_w, spatial_scale)


def recognition_forward(params: ParameterSet, aligned: Tensor, cfg: ModelConfig,
                        max_steps: int | None = None,
                        target: str | None = None) -> tuple[Tensor, np.ndarray]:
    """Attention decoder over the aligned features.

    Teacher forcing when ``target`` is given (steps = len(target)+1),
    greedy feedback otherwise.  Returns (logits [T, n_classes], attention
    weights [T, out_w] as plain arrays).
    """
    c, oh, ow = aligned.shape
    enc = ad.mean_pool_height(ad.reshape(aligned, (1, c, oh, ow)))  # [1,c,1,ow]
    enc_seq = ad.transpose2d(ad.reshape(enc, (c, ow)))  # [ow, c]
    # unit-RMS columns: raw aligned features are dominated by a few
    # common-mode channels, which cripples both the additive attention and
    # the context path (ill-conditioned for SGD at this scale)
    sq_mean = ad.matmul(ad.mul(enc_seq, enc_seq), Tensor(np.full((c, 1), 1.0 / c)))
    inv_rms = ad.matmul(ad.rsqrt(sq_mean, eps=1e-9), Tensor(np.ones((1, c))))
    enc_seq = ad.mul(enc_seq, inv_rms)
    w1enc = ad.linear(enc_seq, params["rec.att_w1.w"], params["rec.att_w1.b"])  # [ow, a]

    h = cfg.rec_hidden
    state = params["rec.state0"]
    ones_h = Tensor(np.ones((1, h)))
    steps = len(target) + 1 if target is not None else (max_steps or cfg.max_steps)
    prev_idx = START
    logits_rows = []
    att_rows = []
    for t in range(steps):
        q = ad.matmul(state, params["rec.att_w2"])  # [1, a]
        scores = ad.matmul(ad.tanh(ad.add(w1enc, q)), params["rec.att_v"])  # [ow,1]
        att = ad.softmax(ad.reshape(scores, (1, ow)))  # [1, ow]
        ctx = ad.matmul(att, enc_seq)  # [1, c]
        onehot = np.zeros((1, N_CLASSES + 1))
        onehot[0, prev_idx] = 1.0
        emb = ad.matmul(Tensor(onehot), params["rec.char_emb"])  # [1, e]
        xs = ad.concat([ctx, emb, state], axis=1)
        z = ad.sigmoid(ad.linear(xs, params["rec.cell_z.w"], params["rec.cell_z.b"]))
        cand = ad.tanh(ad.linear(xs, params["rec.cell_c.w"], params["rec.cell_c.b"]))
        state = ad.add(ad.mul(z, state), ad.mul(ad.sub(ones_h, z), cand))
        row = ad.linear(ad.concat([state, ctx], axis=1),
                        params["rec.out.w"], params["rec.out.b"])  # [1, n_classes]
        logits_rows.append(row)
        att_rows.append(att.data[0].copy())
        if target is not None:
            prev_idx = CHARSET.index(target[t]) if t < len(target) else EOS
        else:
            prev_idx = int(np.argmax(row.data[0]))
    return ad.concat(logits_rows, axis=0), np.stack(att_rows)


def greedy_decode(logits: np.ndarray) -> str:
    """Per-step argmax, truncated at the first EOS; ties go to the lowest index."""
    chars = []
    for row in np.asarray(logits):
        idx = int(np.argmax(row))
        if idx == EOS:
            break
        chars.append(CHARSET[idx])
    return "".join(chars)


def word_embedding_forward(params: ParameterSet, aligned: Tensor, cfg: ModelConfig) -> Tensor:
    """Aligned candidate features [n,c,oh,ow] -> predicted semantic vectors [n,d]."""
    x = _conv_relu(params, "wehead.conv1", aligned)
    x = _conv_relu(params, "wehead.conv2", x)
    x = ad.mean_pool_height(x)  # [n, hc, 1, ow]
    n = aligned.shape[0]
    x = ad.reshape(x, (n, cfg.head_channels * cfg.align_w))
    x = ad.relu(ad.linear(x, params["wehead.fc1.w"], params["wehead.fc1.b"]))
    x = ad.relu(ad.linear(x, params["wehead.fc2.w"], params["wehead.fc2.b"]))
    return x


def discriminator_forward(params: ParameterSet, v: Tensor) -> Tensor:
    """Semantic vectors [n,d] -> probability of pre-trained origin [n]."""
    x = ad.relu(ad.linear(v, params["disc.fc1.w"], params["disc.fc1.b"]))
    x = ad.relu(ad.linear(x, params["disc.fc2.w"], params["disc.fc2.b"]))
    x = ad.linear(x, params["disc.fc3.w"], params["disc.fc3.b"])  # [n,1]
    return ad.reshape(ad.sigmoid(x), (v.shape[0],))


def spot_image(params: ParameterSet, cfg: ModelConfig, image: np.ndarray,
               score_thresh: float = 0.5, iou_nms: float = 0.5,
               max_det: int = 20) -> list[DetectionCandidate]:
    """Full inference pass: detect, align, and greedily transcribe one image.

    Runs outside any tape.  Candidates come back with ``text`` filled and
    ``polygon`` cached.
    """
    img = Tensor(image[None, None].astype(np.float64) / 255.0)
    feats = backbone_forward(params, img)
    det = detection_forward(params, feats)
    candidates = decode_detections(det, score_thresh, iou_nms, max_det)
    for cand in candidates:
        aligned = align_region(feats, cand.region, cfg)
        logits, _ = recognition_forward(params, aligned, cfg, max_steps=cfg.max_steps)
        cand.aligned = aligned
        cand.text = greedy_decode(logits.data)
    return candidates
