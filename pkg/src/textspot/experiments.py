"""Loss-mode comparison experiment: train every mode over several seeds on
one synthetic dataset and compare end-to-end F-measures.

Runs are independent seeded processes, so they execute in parallel without
touching the single-threaded-per-run training contract.
"""

from __future__ import annotations

import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .bezier import region_to_polygon
from .evaluate import GroundTruth, LexiconMode, Prediction, evaluate_end_to_end
from .model import infer_model_config, spot_image
from .synth import generate_dataset, load_dataset, load_lexicon
from .train import TrainConfig, train_loop

MODES = ("none", "l1", "l2", "adversarial")


@dataclass
class RunResult:
    mode: str
    seed: int
    f_none: float
    f_full: float
    precision: float
    recall: float
    train_seconds: float
    metrics_tail: dict = field(default_factory=dict)


@dataclass
class TrendReport:
    runs: list[RunResult]
    mean_f_none: dict[str, float]
    mean_f_full: dict[str, float]
    total_seconds: float

    def ordering(self) -> list[str]:
        return sorted(self.mean_f_none, key=self.mean_f_none.get, reverse=True)

    def render(self) -> str:
        lines = ["mode         mean F (None)  mean F (Full)  per-seed F (None)"]
        for mode in MODES:
            per_seed = [f"{r.f_none:.3f}" for r in self.runs if r.mode == mode]
            lines.append(f"{mode:<12s} {self.mean_f_none[mode]:<14.3f} "
                         f"{self.mean_f_full[mode]:<14.3f} {' '.join(per_seed)}")
        lines.append("ordering by mean None F-measure: " + " > ".join(self.ordering()))
        return "\n".join(lines)


def _run_one(payload: dict) -> dict:
    (workdir, mode, seed) = payload["workdir"], payload["mode"], payload["seed"]
    overrides = payload["overrides"]
    t0 = time.time()
    cfg = TrainConfig(
        loss_mode=mode,
        seed=seed,
        dataset_dir=str(Path(workdir) / "train"),
        table_path=payload["table_path"],
        checkpoint_dir=str(Path(workdir) / f"ckpt_{mode}_s{seed}"),
        **overrides,
    )
    result = train_loop(cfg)
    train_seconds = time.time() - t0

    params = result.params
    mcfg = infer_model_config(params, align_h=cfg.align_h, max_steps=cfg.max_steps)
    lexicon = load_lexicon(payload["lexicon_path"])
    preds, gts = [], []
    for sample in load_dataset(Path(workdir) / "test"):
        cands = spot_image(params, mcfg, sample.image, score_thresh=cfg.score_thresh,
                           iou_nms=payload["eval_iou_nms"])
        preds.append([Prediction(c.polygon, c.text or "", c.confidence) for c in cands])
        gts.append([GroundTruth(region_to_polygon(i.region), i.text) for i in sample.instances])
    r_none = evaluate_end_to_end(preds, gts, LexiconMode.none(), iou_match=cfg.iou_match)
    r_full = evaluate_end_to_end(preds, gts, LexiconMode.full(lexicon), iou_match=cfg.iou_match)
    return {
        "mode": mode, "seed": seed,
        "f_none": r_none.f_measure, "f_full": r_full.f_measure,
        "precision": r_none.precision, "recall": r_none.recall,
        "train_seconds": train_seconds,
        "metrics_tail": result.metrics[-1] if result.metrics else {},
    }


def run_trend_experiment(workdir, lexicon_path, table_path,
                         n_train: int = 200, n_test: int = 50,
                         image_size: tuple[int, int] = (96, 192),
                         seeds: tuple[int, ...] = (1, 2, 3),
                         modes: tuple[str, ...] = MODES,
                         n_workers: int | None = None,
                         eval_iou_nms: float = 0.4,
                         log=sys.stderr,
                         **overrides) -> TrendReport:
    """Generate data once, then train/evaluate every (mode, seed) pair."""
    t0 = time.time()
    workdir = Path(workdir)
    lexicon = load_lexicon(lexicon_path)
    if not (workdir / "train" / "annotations.jsonl").is_file():
        generate_dataset(workdir / "train", lexicon, n_train, image_size, seed=11)
    if not (workdir / "test" / "annotations.jsonl").is_file():
        generate_dataset(workdir / "test", lexicon, n_test, image_size, seed=12)

    if n_workers is None:
        n_workers = max(1, min(3, os.cpu_count() or 1))
    payloads = [
        {"workdir": str(workdir), "mode": mode, "seed": seed,
         "table_path": str(table_path), "lexicon_path": str(lexicon_path),
         "eval_iou_nms": eval_iou_nms, "overrides": overrides}
        for mode in modes for seed in seeds
    ]
    results = []
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for out in pool.map(_run_one, payloads):
                results.append(out)
                print(f"  {out['mode']:<12s} seed {out['seed']}: F_none={out['f_none']:.3f} "
                      f"F_full={out['f_full']:.3f} ({out['train_seconds']:.0f}s)",
                      file=log, flush=True)
    else:
        for payload in payloads:
            out = _run_one(payload)
            results.append(out)
            print(f"  {out['mode']:<12s} seed {out['seed']}: F_none={out['f_none']:.3f} "
                  f"F_full={out['f_full']:.3f} ({out['train_seconds']:.0f}s)",
                  file=log, flush=True)

    runs = [RunResult(**r) for r in results]
    mean_none = {m: sum(r.f_none for r in runs if r.mode == m) / len(seeds) for m in modes}
    mean_full = {m: sum(r.f_full for r in runs if r.mode == m) / len(seeds) for m in modes}
    report = TrendReport(runs=runs, mean_f_none=mean_none, mean_f_full=mean_full,
                         total_seconds=time.time() - t0)
    (workdir / "trend_report.json").write_text(
        json.dumps({"mean_f_none": mean_none, "mean_f_full": mean_full,
                    "runs": results, "total_seconds": report.total_seconds}, indent=2))
    return report
