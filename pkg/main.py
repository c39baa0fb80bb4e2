"""
Command-line entry point: ``python -m main {fit,predict,eval,synth,report}``.
"""
from pathlib import Path
from typing import List, Optional
import argparse
import logging
import sys
from pydantic import ValidationError
from core.config import settings
from core.exceptions import LrsegError
from schemas.config import EstimatorConfig, FlowConfig, GmmConfig, KnnConfig, RunConfig, SynthConfig
from schemas.enums import Connectivity, EstimatorKind, Scenario
from schemas.evaluation import DEFAULT_THRESHOLD_GRID
from schemas.pipeline import FilterConfig
from services.evaluation_service import EvaluationService
from services.fit_service import FitService
from services.prediction_service import PredictionService
from services.report_service import ReportService
from services.synth_service import SynthService
from utils.label_map import read_mask
from utils.run_files import list_gt_ids

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.LRSEG_LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

logger = logging.getLogger(__name__)

USAGE_EXIT_CODE = 2


def _threshold_grid(value: str) -> List[float]:
    try:
        grid = [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold grid must be comma-separated numbers, got {value!r}")
    if not grid or any(not 0.0 <= t <= 1.0 for t in grid):
        raise argparse.ArgumentTypeError(f"threshold grid values must lie in [0, 1], got {value!r}")
    return grid


def _add_estimator_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("estimator hyperparameters")
    group.add_argument("--K", type=int, default=None, help="GMM components")
    group.add_argument("--k", type=int, default=None, help="k-NN neighbours")
    group.add_argument("--epochs", type=int, default=None, help="flow training epochs")
    group.add_argument("--batch-size", type=int, default=None, help="flow minibatch size")
    group.add_argument("--step-size", type=float, default=None, help="flow Adam step size")
    group.add_argument("--blocks", type=int, default=None, help="flow blocks")
    group.add_argument("--hidden-width", type=int, default=None, help="flow conditioner width")
    group.add_argument("--hidden-layers", type=int, default=None, help="flow conditioner depth")
    group.add_argument("--bins", type=int, default=None, help="flow spline bins")
    group.add_argument("--normalize", action="store_true", help="L2-normalize features for gmm/flow too")
    group.add_argument("--threshold", type=float, default=None, help="decision threshold (default 0, knn 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrseg", description="Likelihood-ratio road obstacle segment classifier")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help=f"per-image parallelism (default LRSEG_THREADS={settings.LRSEG_THREADS})")
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", parents=[common], help="fit a free/obstacle estimator pair")
    fit.add_argument("--kind", required=True, choices=EstimatorKind.get_all_values())
    fit.add_argument("--free", required=True, type=Path, help="free-space reference container")
    fit.add_argument("--obstacle", required=True, type=Path, help="obstacle reference container")
    fit.add_argument("--out", required=True, type=Path, help="model directory")
    _add_estimator_arguments(fit)

    predict = commands.add_parser("predict", parents=[common], help="classify segments and write decision/score maps")
    predict.add_argument("--manifest", required=True, type=Path)
    predict.add_argument("--segments", required=True, type=Path)
    predict.add_argument("--out", required=True, type=Path)
    predict.add_argument("--roi", type=Path, default=None, help="PGM region of interest (non-zero = inside)")
    predict.add_argument("--gt-dir", type=Path, default=None, help="also predict images that have ground truth but no segments")
    predict.add_argument("--min-predicted-iou", type=float, default=None)
    predict.add_argument("--min-stability", type=float, default=None)
    predict.add_argument("--dedup-iou", type=float, default=None)

    evaluate = commands.add_parser("eval", parents=[common], help="score predictions against ground truth")
    evaluate.add_argument("--pred-dir", required=True, type=Path)
    evaluate.add_argument("--gt-dir", required=True, type=Path)
    evaluate.add_argument("--out", type=Path, default=None, help="report directory (default <pred-dir>/eval)")
    evaluate.add_argument("--threshold-grid", type=_threshold_grid, default=None, help="comma-separated IoU/PPV thresholds")
    evaluate.add_argument("--connectivity", type=int, choices=[c.value for c in Connectivity], default=Connectivity.EIGHT.value)

    synth = commands.add_parser("synth", parents=[common], help="generate seeded synthetic data")
    synth.add_argument("--scenario", required=True, help=f"one of {Scenario.get_all_values()}")
    synth.add_argument("--out", required=True, type=Path)
    synth.add_argument("--dim", type=int, default=2)
    synth.add_argument("--n-reference", type=int, default=1000)
    synth.add_argument("--n-images", type=int, default=8)
    synth.add_argument("--height", type=int, default=48)
    synth.add_argument("--width", type=int, default=64)
    synth.add_argument("--separation", type=float, default=10.0)
    synth.add_argument("--offset", type=float, default=20.0)
    synth.add_argument("--obstacles-per-image", type=int, default=1)

    report = commands.add_parser("report", parents=[common], help="render 2-d density and ratio heatmaps")
    report.add_argument("--free", required=True, type=Path)
    report.add_argument("--obstacle", required=True, type=Path)
    report.add_argument("--out", required=True, type=Path)
    report.add_argument("--kind", action="append", choices=EstimatorKind.get_all_values(), default=None, help="repeatable; default all kinds")
    report.add_argument("--manifest", action="append", type=Path, default=None, help="use fitted pairs instead of fitting")
    report.add_argument("--grid-size", type=int, default=150)
    _add_estimator_arguments(report)
    return parser


def estimator_config(args: argparse.Namespace) -> EstimatorConfig:
    def overrides(**values):
        return {key: value for key, value in values.items() if value is not None}

    return EstimatorConfig(
        seed=args.seed,
        gmm=GmmConfig(**overrides(components=args.K), normalize=args.normalize),
        flow=FlowConfig(**overrides(
            epochs=args.epochs,
            batch_size=args.batch_size,
            step_size=args.step_size,
            blocks=args.blocks,
            hidden_width=args.hidden_width,
            hidden_layers=args.hidden_layers,
            spline_bins=args.bins,
        ), normalize=args.normalize),
        knn=KnnConfig(**overrides(k=args.k)),
        threshold=args.threshold,
    )


def _paths(args: argparse.Namespace, *names: str) -> dict:
    paths = {}
    for name in names:
        value = getattr(args, name)
        if isinstance(value, list):
            paths[name] = [str(v) for v in value]
        elif value is not None:
            paths[name] = str(value)
    return paths


def run_fit(args: argparse.Namespace) -> None:
    config = estimator_config(args)
    run_config = RunConfig(
        command="fit",
        seed=args.seed,
        kind=EstimatorKind(args.kind),
        estimator=config,
        paths=_paths(args, "free", "obstacle", "out"),
    )
    FitService.cmd_fit(args.kind, args.free, args.obstacle, args.out, config, run_config)


def run_predict(args: argparse.Namespace) -> None:
    filter_values = {
        "min_predicted_iou": args.min_predicted_iou,
        "min_stability": args.min_stability,
        "dedup_iou_threshold": args.dedup_iou,
    }
    filter_config = FilterConfig(
        **{key: value for key, value in filter_values.items() if value is not None},
        roi=read_mask(args.roi) if args.roi is not None else None,
    )
    run_config = RunConfig(
        command="predict",
        seed=args.seed,
        min_predicted_iou=filter_config.min_predicted_iou,
        min_stability=filter_config.min_stability,
        dedup_iou_threshold=filter_config.dedup_iou_threshold,
        paths=_paths(args, "manifest", "segments", "out", "roi", "gt_dir"),
    )
    image_ids = list_gt_ids(args.gt_dir) if args.gt_dir is not None else None
    PredictionService.cmd_predict(
        args.manifest, args.segments, args.out, filter_config, image_ids, run_config, threads=args.threads
    )


def run_eval(args: argparse.Namespace) -> None:
    thresholds = args.threshold_grid or DEFAULT_THRESHOLD_GRID
    run_config = RunConfig(
        command="eval",
        seed=args.seed,
        threshold_grid=thresholds,
        paths=_paths(args, "pred_dir", "gt_dir", "out"),
    )
    EvaluationService.cmd_eval(
        args.pred_dir,
        args.gt_dir,
        args.out,
        thresholds,
        Connectivity(args.connectivity),
        run_config,
        threads=args.threads,
    )


def run_synth(args: argparse.Namespace) -> None:
    config = SynthConfig(
        seed=args.seed,
        dim=args.dim,
        n_reference=args.n_reference,
        n_images=args.n_images,
        height=args.height,
        width=args.width,
        separation=args.separation,
        offset=args.offset,
        obstacles_per_image=args.obstacles_per_image,
    )
    if Scenario.is_valid(args.scenario):
        config = config.model_copy(update={"scenario": Scenario(args.scenario)})
    run_config = RunConfig(command="synth", seed=args.seed, synth=config, paths=_paths(args, "out"))
    SynthService.cmd_synth(args.scenario, args.seed, args.out, config, run_config)


def run_report(args: argparse.Namespace) -> None:
    config = estimator_config(args)
    run_config = RunConfig(
        command="report",
        seed=args.seed,
        estimator=config,
        paths=_paths(args, "free", "obstacle", "out", "manifest"),
    )
    ReportService.cmd_report(
        args.free,
        args.obstacle,
        args.out,
        kinds=args.kind,
        config=config,
        manifests=args.manifest,
        grid_size=args.grid_size,
        run_config=run_config,
    )


COMMANDS = {
    "fit": run_fit,
    "predict": run_predict,
    "eval": run_eval,
    "synth": run_synth,
    "report": run_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except LrsegError as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {str(e)}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"{args.command}: invalid configuration: {str(e)}")
        return USAGE_EXIT_CODE
    except OSError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
