"""
Two-dimensional density report: free-space, obstacle and log-ratio heatmaps
per estimator with the reference points overlaid, plus the single-model versus
ratio AUROC comparison on the reference points.
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
import json
import logging
import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from sklearn.metrics import roc_auc_score  # noqa: E402
from core.exceptions import DimMismatch  # noqa: E402
from schemas.config import EstimatorConfig, RunConfig  # noqa: E402
from schemas.enums import EstimatorKind, ReferenceKind  # noqa: E402
from schemas.segment import ReferenceSet  # noqa: E402
from services.classifier_service import (  # noqa: E402
    EstimatorPair,
    fit_pair,
    load_pair,
    lr_score,
    single_density_score,
    to_log_scale,
)
from utils.run_files import write_run_config  # noqa: E402

logger = logging.getLogger(__name__)

ABLATION_FILE = "ablation.json"
GRID_MARGIN = 0.1
# matplotlib stamps a date and random ids into SVG output unless told otherwise
SVG_METADATA = {"Date": None}
SVG_HASHSALT = "lrseg"


def _grid(points: np.ndarray, size: int):
    low, high = points.min(axis=0), points.max(axis=0)
    pad = (high - low) * GRID_MARGIN + 1e-6
    xs = np.linspace(low[0] - pad[0], high[0] + pad[0], size)
    ys = np.linspace(low[1] - pad[1], high[1] + pad[1], size)
    gx, gy = np.meshgrid(xs, ys)
    extent = (xs[0], xs[-1], ys[0], ys[-1])
    return np.stack([gx.ravel(), gy.ravel()], axis=1), extent


def _grid_values(pair: EstimatorPair, grid: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Free score, obstacle score and log ratio at every grid point (NaN where
    undefined). k-NN single-model panels show one minus the average top-k
    similarity so that low values mean close to the reference set.
    """
    values = {name: np.full(len(grid), np.nan) for name in ("free", "obstacle", "ratio")}
    usable = np.ones(len(grid), dtype=bool)
    if pair.free_model.normalized:
        usable = np.linalg.norm(grid, axis=1) > 0
    points = grid[usable]
    values["free"][usable] = pair.free_model.score(points)
    values["obstacle"][usable] = pair.obstacle_model.score(points)
    values["ratio"][usable] = to_log_scale(pair.kind, lr_score(pair, points))
    if pair.kind == EstimatorKind.KNN:
        values["free"] = 1.0 - values["free"]
        values["obstacle"] = 1.0 - values["obstacle"]
    return values


def _heatmap(path: Path, image: np.ndarray, extent, title: str, free: np.ndarray, obstacle: np.ndarray, cmap: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    try:
        finite = image[np.isfinite(image)]
        vmax = float(finite.max()) if finite.size else 1.0
        vmin = float(finite.min()) if finite.size else 0.0
        if cmap == "RdBu_r":
            bound = max(abs(vmin), abs(vmax), 1e-12)
            vmin, vmax = -bound, bound
        shown = ax.imshow(image, extent=extent, origin="lower", interpolation="nearest", cmap=cmap, vmin=vmin, vmax=vmax, aspect="auto")
        fig.colorbar(shown, ax=ax)
        ax.scatter(free[:, 0], free[:, 1], s=2, c="tab:green", alpha=0.5, label="free")
        ax.scatter(obstacle[:, 0], obstacle[:, 1], s=2, c="tab:red", alpha=0.5, label="obstacle")
        ax.set_title(title)
        ax.legend(loc="upper right", markerscale=4, fontsize="small")
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    finally:
        plt.close(fig)


def ablation_scores(pair: EstimatorPair, free: np.ndarray, obstacle: np.ndarray) -> Dict[str, float]:
    """AUROC of the ratio and of each single model, obstacle rows as positives."""
    points = np.concatenate([free, obstacle])
    labels = np.concatenate([np.zeros(len(free)), np.ones(len(obstacle))])
    return {
        "lr": float(roc_auc_score(labels, to_log_scale(pair.kind, lr_score(pair, points)))),
        "neg_log_p_free": float(roc_auc_score(labels, single_density_score(pair, points, ReferenceKind.FREE))),
        "log_p_obstacle": float(roc_auc_score(labels, single_density_score(pair, points, ReferenceKind.OBSTACLE))),
    }


class ReportService:
    @staticmethod
    def cmd_report(
        free_container: Union[str, Path],
        obstacle_container: Union[str, Path],
        out_dir: Union[str, Path],
        kinds: Optional[Sequence[Union[str, EstimatorKind]]] = None,
        config: Optional[EstimatorConfig] = None,
        manifests: Optional[Sequence[Union[str, Path]]] = None,
        grid_size: int = 150,
        run_config: Optional[RunConfig] = None,
    ) -> Dict[str, Dict[str, float]]:
        """
        Render ``{kind}_free.svg``, ``{kind}_obstacle.svg`` and ``{kind}_ratio.svg``
        for every estimator and write ``ablation.json``.

        Pairs come from ``manifests`` when given, otherwise each kind in
        ``kinds`` (default: all) is fitted on the two containers.

        Raises:
            DimMismatch: the reference features are not 2-D
        """
        out_dir = Path(out_dir)
        config = config or EstimatorConfig()
        refset_free = ReferenceSet.from_container(free_container, ReferenceKind.FREE)
        refset_obstacle = ReferenceSet.from_container(obstacle_container, ReferenceKind.OBSTACLE)
        if refset_free.dim != 2 or refset_obstacle.dim != 2:
            raise DimMismatch(f"The density report needs 2-d features, got C={refset_free.dim}")
        free, obstacle = refset_free.features, refset_obstacle.features

        pairs: List[EstimatorPair] = []
        if manifests:
            pairs = [load_pair(manifest) for manifest in manifests]
        else:
            for kind in kinds or EstimatorKind.get_all_values():
                pairs.append(fit_pair(EstimatorKind(kind), refset_free, refset_obstacle, config))

        out_dir.mkdir(parents=True, exist_ok=True)
        matplotlib.rcParams["svg.hashsalt"] = SVG_HASHSALT
        grid, extent = _grid(np.concatenate([free, obstacle]), grid_size)
        ablation: Dict[str, Dict[str, float]] = {}
        for pair in pairs:
            name = pair.kind.value
            values = _grid_values(pair, grid)
            score_label = "one minus average top-k similarity" if pair.kind == EstimatorKind.KNN else "log-density"
            panels = (
                ("free", f"{name}: free-space {score_label}", "viridis"),
                ("obstacle", f"{name}: obstacle {score_label}", "viridis"),
                ("ratio", f"{name}: log likelihood ratio", "RdBu_r"),
            )
            for key, title, cmap in panels:
                image = values[key].reshape(grid_size, grid_size)
                _heatmap(out_dir / f"{name}_{key}.svg", image, extent, title, free, obstacle, cmap)
            ablation[name] = ablation_scores(pair, free, obstacle)
            scores = ablation[name]
            logger.info(
                f"{name}: AUROC lr={scores['lr']:.4f}, -log p_free={scores['neg_log_p_free']:.4f}, "
                f"log p_obstacle={scores['log_p_obstacle']:.4f}"
            )

        (out_dir / ABLATION_FILE).write_text(json.dumps(ablation, indent=2, sort_keys=True))
        if run_config is None:
            run_config = RunConfig(command="report", seed=config.seed, estimator=config)
        write_run_config(out_dir, run_config)
        return ablation
