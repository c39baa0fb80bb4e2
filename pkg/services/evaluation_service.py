from pathlib import Path
from typing import List, Optional, Sequence, Union
import logging
import numpy as np
from core.exceptions import EmptyData, MissingDecision, MissingGroundTruth
from schemas.config import RunConfig
from schemas.enums import Connectivity
from schemas.evaluation import DEFAULT_THRESHOLD_GRID, EvalReport, EvalSummary
from services.metrics_service import ap_from_pixels, fpr95_from_pixels, summarize_components
from utils.run_files import list_decision_ids, list_gt_ids, report_name, write_run_config
from workers.evaluation.worker import EvaluationWorker

logger = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def format_report_table(summary: EvalSummary) -> str:
    """Aligned plain-text rendering: one row per image, the pooled row, then the F1 table."""
    header = f"{'image':>8}  {'AP':>7}  {'FPR95':>8}  {'sIoU_gt':>7}  {'PPV':>7}  {'mean_F1':>7}"
    lines = [header, "-" * len(header)]
    rows = [(f"{r.image_id:05d}", r) for r in summary.images] + [("all", summary.aggregate)]
    for name, report in rows:
        fpr = _fmt(report.fpr95.value) + ("" if report.fpr95.attained else "*")
        lines.append(
            f"{name:>8}  {report.ap:>7.4f}  {fpr:>8}  {_fmt(report.siou_gt):>7}  "
            f"{_fmt(report.ppv):>7}  {report.mean_f1:>7.4f}"
        )
    lines.append("")
    lines.append("* FPR95 unattainable above the uncovered-pixel floor ('-' = no positive pixels)")
    lines.append("")
    lines.append(f"{'tau':>6}  {'TP':>5}  {'FN':>5}  {'FP':>5}  {'F1':>7}")
    for row in summary.aggregate.f1_table:
        lines.append(f"{row.threshold:>6.2f}  {row.tp:>5d}  {row.fn:>5d}  {row.fp:>5d}  {row.f1:>7.4f}")
    return "\n".join(lines) + "\n"


class EvaluationService:
    @staticmethod
    def cmd_eval(
        pred_dir: Union[str, Path],
        gt_dir: Union[str, Path],
        out_dir: Optional[Union[str, Path]] = None,
        thresholds: Optional[Sequence[float]] = None,
        connectivity: Connectivity = Connectivity.EIGHT,
        run_config: Optional[RunConfig] = None,
        threads: Optional[int] = None,
    ) -> EvalSummary:
        """
        Evaluate every predicted image against its ground truth.

        Pixel metrics of the aggregate pool all non-ignore pixels; component
        metrics pool all components, summing TP/FN/FP per threshold.

        Raises:
            MissingGroundTruth: a prediction without a ground-truth map
            MissingDecision: a ground-truth map without a prediction
            ShapeMismatch: prediction and ground truth differ in size
        """
        pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
        out_dir = Path(out_dir) if out_dir is not None else pred_dir / "eval"
        thresholds = DEFAULT_THRESHOLD_GRID if thresholds is None else list(thresholds)

        pred_ids, gt_ids = list_decision_ids(pred_dir), list_gt_ids(gt_dir)
        missing_gt = sorted(set(pred_ids) - set(gt_ids))
        if missing_gt:
            raise MissingGroundTruth(f"No ground truth in {gt_dir} for images {missing_gt[:10]}")
        missing_pred = sorted(set(gt_ids) - set(pred_ids))
        if missing_pred:
            raise MissingDecision(f"No prediction in {pred_dir} for images {missing_pred[:10]}")
        if not pred_ids:
            raise EmptyData(f"No predictions found in {pred_dir}")

        worker = EvaluationWorker(pred_dir, gt_dir, thresholds, connectivity, threads=threads)
        pieces = worker.run([{"image_id": image_id} for image_id in pred_ids])

        scores = np.concatenate([p["scores"] for p in pieces])
        labels = np.concatenate([p["labels"] for p in pieces])
        floor = pieces[0]["floor"]
        siou_values: List[float] = [v for p in pieces for v in p["siou_values"]]
        ppv_values: List[float] = [v for p in pieces for v in p["ppv_values"]]
        components = summarize_components(siou_values, ppv_values, thresholds)
        positives = int(np.count_nonzero(labels))
        aggregate = EvalReport(
            ap=ap_from_pixels(scores, labels),
            fpr95=fpr95_from_pixels(scores, labels, floor),
            siou_gt=components.siou_gt,
            ppv=components.ppv,
            mean_f1=components.mean_f1,
            f1_table=components.f1_table,
            num_gt_components=len(siou_values),
            num_pred_components=len(ppv_values),
            num_positive_pixels=positives,
            num_negative_pixels=int(labels.size - positives),
            empty_eval=positives == 0,
        )
        if aggregate.empty_eval:
            logger.warning("Ground truth has no positive pixels; AP is reported as 0")
        summary = EvalSummary(aggregate=aggregate, images=[p["report"] for p in pieces])

        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            for report in summary.images:
                (out_dir / report_name(report.image_id)).write_text(report.model_dump_json(indent=2))
            (out_dir / REPORT_JSON).write_text(summary.model_dump_json(indent=2))
            (out_dir / REPORT_TEXT).write_text(format_report_table(summary))
            if run_config is not None:
                write_run_config(out_dir, run_config)
        except OSError as e:
            logger.error(f"Failed to write evaluation reports to {out_dir}: {str(e)}")
            raise

        logger.info(
            f"Evaluated {len(pred_ids)} images: AP={aggregate.ap:.4f}, "
            f"FPR95={_fmt(aggregate.fpr95.value)}{'' if aggregate.fpr95.attained else ' (unattainable)'}, "
            f"sIoU_gt={_fmt(aggregate.siou_gt)}, PPV={_fmt(aggregate.ppv)}, mean F1={aggregate.mean_f1:.4f}"
        )
        return summary
