from pathlib import Path
from typing import Optional, Union
import logging
from schemas.config import EstimatorConfig, RunConfig
from schemas.enums import EstimatorKind, ReferenceKind
from schemas.segment import ReferenceSet
from services.classifier_service import EstimatorPair, fit_pair, save_pair, summarize_model
from utils.run_files import write_run_config

logger = logging.getLogger(__name__)


class FitService:
    @staticmethod
    def cmd_fit(
        kind: Union[str, EstimatorKind],
        free_container: Union[str, Path],
        obstacle_container: Union[str, Path],
        out_dir: Union[str, Path],
        config: Optional[EstimatorConfig] = None,
        run_config: Optional[RunConfig] = None,
    ) -> EstimatorPair:
        """
        Fit a free/obstacle estimator pair on two reference containers and
        write the manifest, both model files and the run config to ``out_dir``.

        Raises:
            DimMismatch: the containers disagree on C
            TooFewPoints, KTooLarge, EmptyReferenceSet, NonFiniteValue: from fitting
        """
        kind = EstimatorKind(kind)
        config = config or EstimatorConfig()
        out_dir = Path(out_dir)

        refset_free = ReferenceSet.from_container(free_container, ReferenceKind.FREE)
        refset_obstacle = ReferenceSet.from_container(obstacle_container, ReferenceKind.OBSTACLE)
        pair = fit_pair(kind, refset_free, refset_obstacle, config)

        summary = {}
        for role, model, refset in (
            ("free", pair.free_model, refset_free),
            ("obstacle", pair.obstacle_model, refset_obstacle),
        ):
            for name, value in summarize_model(model, refset).items():
                summary[f"{role}_{name}"] = value
        manifest = save_pair(pair, out_dir, summary)

        if run_config is None:
            run_config = RunConfig(command="fit", seed=config.seed, kind=kind, estimator=config)
        write_run_config(out_dir, run_config)

        details = ", ".join(f"{key}={value:.4f}" for key, value in sorted(summary.items()))
        logger.info(f"Fitted {kind.value} pair -> {manifest} ({details})")
        return pair
