"""Target assignment, loss terms, and the alternating adversarial loop.

Loss aggregation is total = alpha*L_det + beta*L_rec + gamma*L_adv with
defaults alpha=1, beta=1, gamma=0.6.  ``loss_mode`` selects how predicted
semantic vectors are pulled toward the fixed embeddings: ``adversarial``
(non-saturating GAN objective), ``l1``/``l2`` (direct distances), or
``none`` (pure detection+recognition baseline).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tape, Tensor, backward, sgd_step
from .bezier import iou_upper_bound, polygon_iou, region_to_polygon, points_in_polygon
from .checkpoint import load_checkpoint, save_checkpoint
from .embed import EmbeddingTable, embed_text, load_table, zero_vector
from .errors import ConfigError, SpotError, UsageError
from .model import (
    DISC_PREFIX,
    GEN_PREFIXES,
    SPATIAL_SCALE,
    DetectionCandidate,
    DetectionOutput,
    ModelConfig,
    align_region,
    backbone_forward,
    build_params,
    decode_detections,
    detection_forward,
    discriminator_forward,
    encode_region_offsets,
    recognition_forward,
    word_embedding_forward,
)
from .rng import Xoshiro256, substream
from .synth import SceneSample, load_dataset
from .font import CHARSET

FALSE_POSITIVE = -1
LOSS_MODES = ("adversarial", "l1", "l2", "none")
_SHUFFLE_STREAM = 91
_JITTER_STREAM = 57

EOS = len(CHARSET)


class TrainingError(SpotError):
    """Non-finite loss or an unrecoverable training-state problem."""


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.6

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    loss_mode: str = "adversarial"
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.6
    lr: float = 1e-2
    lr_schedule: list = field(default_factory=list)  # [(iteration, lr)...]
    rec_lr_scale: float = 1.0  # recognition-head lr multiplier (SGD param group)
    disc_lr_scale: float = 1.0  # discriminator lr multiplier (keeps the game balanced)
    iterations: int = 100
    batch_size: int = 2
    seed: int = 0
    score_thresh: float = 0.5
    iou_match: float = 0.5
    iou_nms: float = 0.5
    max_det_train: int = 8
    rec_jitter: int = 1  # extra jittered recognition samples per matched region
    jitter_px: float = 1.5
    dataset_dir: str = ""
    table_path: str = ""
    checkpoint_dir: str = "checkpoints"
    checkpoint_interval: int = 0  # 0 = final checkpoint only
    resume: str = ""
    # model shape
    backbone_channels: int = 64
    head_channels: int = 128
    we_fc_hidden: int = 256
    align_h: int = 8
    align_w: int = 32
    rec_hidden: int = 64
    rec_att: int = 64
    rec_char_emb: int = 32
    max_steps: int = 14

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        its = [it for it, _ in self.lr_schedule]
        if its != sorted(set(its)):
            raise ConfigError("lr_schedule iterations must be strictly increasing")
        if not 0 < self.iou_match < 1:
            raise ConfigError("iou_match must lie in (0,1)")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma)

    def model_config(self, embed_dim: int) -> ModelConfig:
        return ModelConfig(
            backbone_channels=self.backbone_channels,
            head_channels=self.head_channels,
            we_fc_hidden=self.we_fc_hidden,
            embed_dim=embed_dim,
            align_h=self.align_h,
            align_w=self.align_w,
            rec_hidden=self.rec_hidden,
            rec_att=self.rec_att,
            rec_char_emb=self.rec_char_emb,
            max_steps=self.max_steps,
        )


def _parse_schedule(text: str) -> list:
    sched = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        it, _, lr = part.partition(":")
        sched.append((int(it), float(lr)))
    return sched


def format_schedule(sched) -> str:
    return ",".join(f"{it}:{lr:g}" for it, lr in sched)


def parse_config(text: str) -> TrainConfig:
    """Flat key=value config; keys are TrainConfig field names."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not sep:
            raise ConfigError(f"config line {line_no}: expected key=value, got {line!r}")
        if key not in fields:
            raise ConfigError(f"unknown config key: {key}")
        f = fields[key]
        try:
            if key == "lr_schedule":
                values[key] = _parse_schedule(raw)
            elif f.type == "int":
                values[key] = int(raw)
            elif f.type == "float":
                values[key] = float(raw)
            else:
                values[key] = raw
        except ValueError as e:
            raise ConfigError(f"config line {line_no}: bad value for {key}: {raw!r}") from e
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def schedule_lr(cfg: TrainConfig, iteration: int) -> float:
    """Learning rate for a 1-based iteration index."""
    lr = cfg.lr
    for it, value in cfg.lr_schedule:
        if iteration >= it:
            lr = value
    return lr


# ---------------------------------------------------------------------------
# target assignment and loss terms


def candidate_gt_iou(candidates: list[DetectionCandidate], gt_polygons: list[np.ndarray],
                     raster_scale: int = 8, prune_below: float = 0.0) -> np.ndarray:
    """[n_candidates, n_gt] polygon IoU matrix.

    A candidate whose cached polygon IS a ground-truth polygon (the training
    pseudo-candidates) scores 1.0 against it without rasterizing; pairs whose
    cheap upper bound falls below ``prune_below`` are reported as 0.
    """
    ious = np.zeros((len(candidates), len(gt_polygons)))
    for i, cand in enumerate(candidates):
        poly = cand.polygon if cand.polygon is not None else region_to_polygon(cand.region)
        for j, gt_poly in enumerate(gt_polygons):
            if poly is gt_poly:
                ious[i, j] = 1.0
            elif prune_below and iou_upper_bound(poly, gt_poly) < prune_below:
                ious[i, j] = 0.0
            else:
                ious[i, j] = polygon_iou(poly, gt_poly, raster_scale)
    return ious


def match_candidates_to_gt(candidates: list[DetectionCandidate], gt_polygons: list[np.ndarray],
                           iou_match: float, iou_matrix: np.ndarray | None = None) -> list[int]:
    """Greedy confidence-descending matching; unmatched candidates are FPs.

    Returns, per candidate (input order), the matched ground-truth index or
    FALSE_POSITIVE.  Each ground truth is taken at most once; IoU ties break
    to the lowest ground-truth index.
    """
    if not 0 < iou_match < 1:
        raise ConfigError("iou_match must lie in (0,1)")
    if iou_matrix is None:
        iou_matrix = candidate_gt_iou(candidates, gt_polygons)
    assign = [FALSE_POSITIVE] * len(candidates)
    taken = [False] * len(gt_polygons)
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].confidence, i))
    for i in order:
        best_j, best_iou = FALSE_POSITIVE, 0.0
        for j in range(len(gt_polygons)):
            if taken[j]:
                continue
            iou = iou_matrix[i, j]
            if iou >= iou_match and iou > best_iou:
                best_j, best_iou = j, iou
        if best_j != FALSE_POSITIVE:
            assign[i] = best_j
            taken[best_j] = True
    return assign


@dataclass(frozen=True)
class DetectionTargets:
    """Static per-sample supervision for the dense head (cacheable)."""

    labels: np.ndarray  # [hf*wf] cell-center positivity
    offsets: np.ndarray  # [16, hf*wf], defined on positive cells
    mask: np.ndarray  # [16, hf*wf]
    n_pos: int


def detection_targets(instances, hf: int, wf: int,
                      spatial_scale: float = SPATIAL_SCALE) -> DetectionTargets:
    """A cell is positive iff its center lies inside a ground-truth polygon
    (ties to the lowest instance index); positives regress that instance's
    control-point offsets."""
    cell = 1.0 / spatial_scale
    cx, cy = np.meshgrid((np.arange(wf) + 0.5) * cell, (np.arange(hf) + 0.5) * cell)
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
    owner = np.full(hf * wf, -1, dtype=np.int64)
    for j, inst in enumerate(instances):
        inside = points_in_polygon(centers, region_to_polygon(inst.region))
        owner[(owner == -1) & inside] = j
    target = np.zeros((16, hf * wf))
    mask = np.zeros((16, hf * wf))
    pos = np.nonzero(owner >= 0)[0]
    for flat_idx in pos:
        r, c = divmod(int(flat_idx), wf)
        target[:, flat_idx] = encode_region_offsets(instances[owner[flat_idx]].region, r, c,
                                                    spatial_scale)
        mask[:, flat_idx] = 1.0
    return DetectionTargets(labels=(owner >= 0).astype(np.float64), offsets=target,
                            mask=mask, n_pos=int(pos.size))


def detection_loss(det: DetectionOutput, instances, spatial_scale: float = SPATIAL_SCALE,
                   targets: DetectionTargets | None = None) -> Tensor:
    """Score BCE against cell-center positivity plus offset MAE over positive cells."""
    _, _, hf, wf = det.score_map.shape
    if targets is None:
        targets = detection_targets(instances, hf, wf, spatial_scale)

    probs = ad.sigmoid(ad.reshape(det.score_map, (hf * wf,)))
    loss = ad.binary_cross_entropy(probs, targets.labels)

    if targets.n_pos:
        pred = ad.reshape(det.offset_map, (16, hf * wf))
        diff = ad.abs_(ad.sub(pred, Tensor(targets.offsets)))
        # summed over the 16 components, averaged over positive cells: keeps
        # the regression gradient strong enough to move far-away control points
        mae = ad.scale(ad.sum_all(ad.mul(diff, Tensor(targets.mask))), 1.0 / targets.n_pos)
        loss = ad.add(loss, mae)
    return loss


def recognition_loss(logits: Tensor, target_text: str) -> Tensor:
    """Character cross-entropy including the terminal EOS, mean over steps."""
    if len(target_text) + 1 > logits.shape[0]:
        raise UsageError(f"target {target_text!r} longer than decoded steps")
    idx = [CHARSET.index(ch) for ch in target_text] + [EOS]
    return ad.softmax_cross_entropy(logits, idx)


def adversarial_step_losses(params: ParameterSet, pred: Tensor, targets: np.ndarray,
                            loss_mode: str) -> tuple[Tensor, Tensor, float]:
    """Per-mode (d_loss, g_loss, discriminator accuracy).

    adversarial: d_loss = BCE(D(pred detached), 0) + BCE(D(targets), 1) and
    the non-saturating g_loss = BCE(D(pred), 1).  l1/l2 replace g_loss with
    the mean element distance and keep d_loss at zero.
    """
    n, d = pred.shape
    if targets.shape != (n, d):
        raise ConfigError(f"targets shape {targets.shape} != predictions {pred.shape}")
    if loss_mode == "adversarial":
        d_fake = discriminator_forward(params, pred.detach())
        d_real = discriminator_forward(params, Tensor(targets))
        d_loss = ad.add(ad.binary_cross_entropy(d_fake, np.zeros(n)),
                        ad.binary_cross_entropy(d_real, np.ones(n)))
        g_loss = ad.binary_cross_entropy(discriminator_forward(params, pred), np.ones(n))
        d_acc = float((np.count_nonzero(d_fake.data < 0.5)
                       + np.count_nonzero(d_real.data >= 0.5)) / (2 * n))
        return d_loss, g_loss, d_acc
    diff = ad.sub(pred, Tensor(targets))
    if loss_mode == "l1":
        return Tensor(0.0), ad.mean_all(ad.abs_(diff)), 0.0
    if loss_mode == "l2":
        return Tensor(0.0), ad.mean_all(ad.mul(diff, diff)), 0.0
    raise ConfigError(f"unsupported loss_mode {loss_mode!r}")


def total_loss(l_det: Tensor, l_rec: Tensor, l_adv: Tensor, w: LossWeights) -> Tensor:
    return ad.add(ad.add(ad.scale(l_det, w.alpha), ad.scale(l_rec, w.beta)),
                  ad.scale(l_adv, w.gamma))


def _mean_terms(terms: list[Tensor]) -> Tensor:
    if not terms:
        return Tensor(0.0)
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.scale(acc, 1.0 / len(terms))


def _check_finite(name: str, value: float, batch_ids: list[str]) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {name} ({value}) on batch {batch_ids}")


def train_step(batch: list[SceneSample], params: ParameterSet, mcfg: ModelConfig,
               tcfg: TrainConfig, table: EmbeddingTable | None, lr: float,
               target_cache: dict | None = None,
               jitter_rng: Xoshiro256 | None = None) -> dict:
    """One alternating optimization step over a batch of images.

    Recognition and the semantic branch run on ground-truth regions (the
    base framework's training recipe) plus decoded candidates; decoded
    candidates that merely duplicate a matched ground truth are kept out of
    the false-positive pool so the zero-vector target only marks regions
    without text.  Matched regions additionally contribute ``rec_jitter``
    perturbed recognition samples, closing the gap to imperfect regions at
    inference time.
    """
    semantic = tcfg.loss_mode != "none" and tcfg.gamma > 0
    batch_ids = [s.id for s in batch]
    tape = Tape()
    with tape:
        det_terms: list[Tensor] = []
        rec_terms: list[Tensor] = []
        sem_aligned: list[Tensor] = []
        sem_targets: list[np.ndarray] = []
        for sample in batch:
            image = Tensor(sample.image[None, None].astype(np.float64) / 255.0)
            feats = backbone_forward(params, image)
            det = detection_forward(params, feats)
            _, _, hf, wf = det.score_map.shape
            if target_cache is not None:
                key = (sample.id, hf, wf)
                if key not in target_cache:
                    target_cache[key] = detection_targets(sample.instances, hf, wf)
                det_targets = target_cache[key]
            else:
                det_targets = None
            det_terms.append(detection_loss(det, sample.instances, targets=det_targets))

            gt_polys = [region_to_polygon(inst.region) for inst in sample.instances]
            candidates = [
                DetectionCandidate(region=inst.region, confidence=1.0, polygon=poly)
                for inst, poly in zip(sample.instances, gt_polys)
            ]
            candidates += decode_detections(det, tcfg.score_thresh, tcfg.iou_nms,
                                            tcfg.max_det_train, pre_topk=16, nms_raster_scale=2)
            ious = candidate_gt_iou(candidates, gt_polys, raster_scale=2,
                                    prune_below=tcfg.iou_match)
            assign = match_candidates_to_gt(candidates, gt_polys, tcfg.iou_match, iou_matrix=ious)
            for idx, (cand, gt_idx) in enumerate(zip(candidates, assign)):
                if gt_idx != FALSE_POSITIVE:
                    text = sample.instances[gt_idx].text
                    aligned = align_region(feats, cand.region, mcfg)
                    logits, _ = recognition_forward(params, aligned, mcfg, target=text)
                    rec_terms.append(recognition_loss(logits, text))
                    if jitter_rng is not None:
                        from .bezier import BezierRegion

                        for _ in range(tcfg.rec_jitter):
                            noise = jitter_rng.uniform_array((8, 2), -tcfg.jitter_px,
                                                             tcfg.jitter_px)
                            moved = BezierRegion(top=cand.region.top + noise[:4],
                                                 bottom=cand.region.bottom + noise[4:])
                            j_aligned = align_region(feats, moved, mcfg)
                            j_logits, _ = recognition_forward(params, j_aligned, mcfg, target=text)
                            rec_terms.append(recognition_loss(j_logits, text))
                    if semantic:
                        sem_aligned.append(aligned)
                        sem_targets.append(embed_text(table, text))
                elif semantic and ious[idx].max(initial=0.0) < tcfg.iou_match:
                    # true false alarm, not a duplicate of a matched ground truth
                    sem_aligned.append(align_region(feats, cand.region, mcfg))
                    sem_targets.append(zero_vector(mcfg.embed_dim))

        l_det = _mean_terms(det_terms)
        l_rec = _mean_terms(rec_terms)
        _check_finite("l_det", l_det.item(), batch_ids)
        _check_finite("l_rec", l_rec.item(), batch_ids)

        d_acc = 0.0
        d_loss = Tensor(0.0)
        g_loss = Tensor(0.0)
        if semantic and sem_aligned:
            stacked = ad.concat([ad.reshape(a, (1,) + a.shape) for a in sem_aligned], axis=0)
            pred = word_embedding_forward(params, stacked, mcfg)
            targets = np.stack(sem_targets)
            d_loss, g_loss, d_acc = adversarial_step_losses(params, pred, targets, tcfg.loss_mode)
            _check_finite("d_loss", d_loss.item(), batch_ids)
            if tcfg.loss_mode == "adversarial":
                backward(d_loss, tape)
                sgd_step(params.subset(DISC_PREFIX), lr * tcfg.disc_lr_scale)
                # generator loss against the freshly updated discriminator
                g_loss = ad.binary_cross_entropy(
                    discriminator_forward(params, pred), np.ones(pred.shape[0]))
            _check_finite("l_adv", g_loss.item(), batch_ids)

        total = total_loss(l_det, l_rec, g_loss, tcfg.weights)
        _check_finite("total", total.item(), batch_ids)
        backward(total, tape)
        gen = params.subset(*GEN_PREFIXES) if semantic else params.subset("backbone.", "det.", "rec.")
        gen.ensure_grads()
        if tcfg.rec_lr_scale != 1.0:
            sgd_step(gen.subset("rec."), lr * tcfg.rec_lr_scale)
            sgd_step(gen.exclude("rec."), lr)
        else:
            sgd_step(gen, lr)
        params.zero_grads()

    return {
        "l_det": l_det.item(),
        "l_rec": l_rec.item(),
        "l_adv": g_loss.item(),
        "d_loss": d_loss.item(),
        "d_acc": d_acc,
        "n_semantic": len(sem_aligned),
    }


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: ParameterSet
    metrics: list[dict]
    final_checkpoint: Path


def _batch_indices(seed: int, n: int, batch_size: int):
    """Endless deterministic batch iterator (seeded epoch reshuffles)."""
    epoch = 0
    while True:
        order = list(range(n))
        substream(seed, _SHUFFLE_STREAM, epoch).shuffle(order)
        for lo in range(0, n - batch_size + 1, batch_size):
            yield order[lo : lo + batch_size]
        epoch += 1


def _sidecar(path: Path) -> Path:
    return Path(str(path) + ".meta.json")


def _write_checkpoint(params: ParameterSet, directory: Path, iteration: int, final: bool) -> Path:
    name = "ckpt_final.a3s" if final else f"ckpt_{iteration:06d}.a3s"
    path = directory / name
    save_checkpoint(path, params)
    _sidecar(path).write_text(json.dumps({"iteration": iteration}) + "\n", encoding="utf-8")
    return path


def _verify_resume(params: ParameterSet, template: ParameterSet) -> None:
    problems = []
    loaded = dict(params.items())
    fresh = dict(template.items())
    for name in sorted(set(loaded) | set(fresh)):
        if name not in loaded:
            problems.append(f"missing parameter {name}")
        elif name not in fresh:
            problems.append(f"unexpected parameter {name}")
        elif loaded[name].shape != fresh[name].shape:
            problems.append(f"{name}: shape {loaded[name].shape} != {fresh[name].shape}")
    if problems:
        raise UsageError("incompatible checkpoint: " + "; ".join(problems))


def validate_vocab_coverage(samples: list[SceneSample], table: EmbeddingTable) -> None:
    missing = sorted({inst.text for s in samples for inst in s.instances if inst.text not in table})
    if missing:
        raise ConfigError("transcriptions missing from embedding table: " + ", ".join(missing))


def train_loop(tcfg: TrainConfig, dataset: list[SceneSample] | None = None,
               table: EmbeddingTable | None = None, metrics_path=None,
               quiet: bool = True) -> TrainResult:
    """Run the full seeded loop: shuffled batches, lr schedule, checkpoints.

    Batch order is derived statelessly from (seed, epoch), so resuming from
    a checkpoint at iteration k reproduces the uninterrupted trajectory.
    """
    if dataset is None:
        dataset = load_dataset(tcfg.dataset_dir)
    if table is None:
        table = load_table(tcfg.table_path)
    if tcfg.loss_mode != "none":
        validate_vocab_coverage(dataset, table)
    if tcfg.batch_size > len(dataset):
        raise ConfigError("batch_size exceeds dataset size")
    mcfg = tcfg.model_config(table.dim)

    ckpt_dir = Path(tcfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = Path(metrics_path) if metrics_path else ckpt_dir / "metrics.jsonl"

    start_iter = 0
    if tcfg.resume:
        params = load_checkpoint(tcfg.resume)
        _verify_resume(params, build_params(mcfg, tcfg.seed))
        meta = _sidecar(Path(tcfg.resume))
        if not meta.is_file():
            raise UsageError(f"cannot resume: missing {meta}")
        start_iter = json.loads(meta.read_text())["iteration"]
    else:
        params = build_params(mcfg, tcfg.seed)

    batches = _batch_indices(tcfg.seed, len(dataset), tcfg.batch_size)
    for _ in range(start_iter):
        next(batches)

    metrics_log = []
    target_cache: dict = {}
    with metrics_path.open("a", encoding="utf-8") as mf:
        for it in range(start_iter + 1, tcfg.iterations + 1):
            lr = schedule_lr(tcfg, it)
            batch = [dataset[i] for i in next(batches)]
            jitter_rng = substream(tcfg.seed, _JITTER_STREAM, it) if tcfg.rec_jitter else None
            record = train_step(batch, params, mcfg, tcfg, table, lr,
                                target_cache=target_cache, jitter_rng=jitter_rng)
            record = {"iter": it, "l_det": record["l_det"], "l_rec": record["l_rec"],
                      "l_adv": record["l_adv"], "d_loss": record["d_loss"],
                      "d_acc": record["d_acc"], "lr": lr}
            metrics_log.append(record)
            mf.write(json.dumps(record) + "\n")
            if not quiet and (it % 20 == 0 or it == tcfg.iterations):
                import sys
                print(f"iter {it}/{tcfg.iterations} l_det={record['l_det']:.4f} "
                      f"l_rec={record['l_rec']:.4f} l_adv={record['l_adv']:.4f}", file=sys.stderr)
            if tcfg.checkpoint_interval and it % tcfg.checkpoint_interval == 0 and it != tcfg.iterations:
                _write_checkpoint(params, ckpt_dir, it, final=False)
    final = _write_checkpoint(params, ckpt_dir, tcfg.iterations, final=True)
    return TrainResult(params=params, metrics=metrics_log, final_checkpoint=final)
