"""
Segment extraction with Segment Anything: a grid of point prompts per image,
every multimask output kept as a raw segment, and a feature vector read from
the mask decoder through a forward hook.
"""
from pathlib import Path
from typing import Dict, List, Optional, Union
import logging
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError
from segment_anything import SamPredictor, sam_model_registry
from segment_anything.utils.amg import build_point_grid, calculate_stability_score
from core.exceptions import ImageDecodeError, ModelLoadError, NonFiniteValue
from schemas.segment import SegmentRecord
from utils.rle import rle_encode
from workers.sam_extractor.schemas.extraction import POOLED_SIDE, ExtractionConfig, TapPoint

logger = logging.getLogger(__name__)

# decoder token layout: [iou token, 4 mask tokens, prompt tokens]; multimask outputs use mask tokens 1..3
FIRST_MULTIMASK_TOKEN = 2
WEIGHT_EPS = 1e-6


def load_image(path: Union[str, Path]) -> np.ndarray:
    """Decode an image file to an H x W x 3 uint8 RGB array."""
    try:
        with Image.open(path) as image:
            return np.array(image.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, Image.DecompressionBombError) as e:
        logger.error(f"Failed to decode image {path}: {str(e)}")
        raise ImageDecodeError(f"Cannot decode image {path}: {str(e)}")


def load_predictor(config: ExtractionConfig) -> SamPredictor:
    if config.checkpoint is None:
        raise ModelLoadError("No model checkpoint configured")
    try:
        sam = sam_model_registry[config.model_type](checkpoint=config.checkpoint)
        sam.to(device=config.device)
        sam.eval()
    except KeyError:
        raise ModelLoadError(f"Unknown model variant {config.model_type!r}; expected one of {sorted(sam_model_registry)}")
    except Exception as e:
        logger.error(f"Failed to load {config.model_type} weights from {config.checkpoint}: {str(e)}")
        raise ModelLoadError(f"Cannot load model weights {config.checkpoint}: {str(e)}")
    logger.info(f"Loaded {config.model_type} from {config.checkpoint} on {config.device}")
    return SamPredictor(sam)


class SegmentExtractor:
    """Runs grid prompting on one image at a time and captures decoder activations."""

    def __init__(self, config: ExtractionConfig, predictor: Optional[SamPredictor] = None):
        self.config = config
        self.predictor = predictor or load_predictor(config)
        self._captured: Dict[str, torch.Tensor] = {}
        decoder = self.predictor.model.mask_decoder
        self._hooks = [
            decoder.output_upscaling.register_forward_hook(self._capture("upscaled")),
            decoder.transformer.register_forward_hook(self._capture("tokens")),
        ]

    def _capture(self, name: str):
        def hook(module, inputs, output):
            # the two-way transformer returns (queries, keys)
            self._captured[name] = output[0] if isinstance(output, tuple) else output
        return hook

    def close(self) -> None:
        for handle in self._hooks:
            handle.remove()
        self._hooks = []

    def _features(self, low_res_logits: torch.Tensor) -> torch.Tensor:
        """B x 3 x D features for the multimask outputs of the last decoder call."""
        if self.config.tap_point == TapPoint.MASK_TOKEN:
            tokens = self._captured["tokens"]
            return tokens[:, FIRST_MULTIMASK_TOKEN:FIRST_MULTIMASK_TOKEN + low_res_logits.shape[1], :]

        upscaled = self._captured["upscaled"]  # B x 32 x 256 x 256
        weights = torch.sigmoid(low_res_logits)  # B x 3 x 256 x 256
        features = []
        for j in range(weights.shape[1]):
            w = weights[:, j:j + 1]
            pooled = F.adaptive_avg_pool2d(upscaled * w, POOLED_SIDE)
            mass = F.adaptive_avg_pool2d(w, POOLED_SIDE)
            features.append((pooled / (mass + WEIGHT_EPS)).flatten(start_dim=1))
        return torch.stack(features, dim=1)

    def extract(self, image: np.ndarray, image_id: int = 0) -> List[SegmentRecord]:
        """
        One record per non-empty mask generated from the prompt grid.

        Masks are not filtered here; quality and duplicate filtering happen
        at prediction time.
        """
        predictor = self.predictor
        height, width = image.shape[:2]
        predictor.set_image(image)
        points = build_point_grid(self.config.grid_points_per_side) * np.array([[width, height]])
        threshold = predictor.model.mask_threshold

        records: List[SegmentRecord] = []
        for start in range(0, len(points), self.config.points_per_batch):
            batch = points[start:start + self.config.points_per_batch]
            coords = predictor.transform.apply_coords(batch, (height, width))
            in_points = torch.as_tensor(coords, dtype=torch.float, device=predictor.device)[:, None, :]
            in_labels = torch.ones(in_points.shape[:2], dtype=torch.int, device=predictor.device)
            with torch.no_grad():
                masks, iou_predictions, low_res = predictor.predict_torch(
                    in_points, in_labels, multimask_output=True, return_logits=True
                )
                features = self._features(low_res)
                stability = calculate_stability_score(masks, threshold, self.config.stability_offset)

            binary = (masks > threshold).cpu().numpy()
            iou = iou_predictions.float().cpu().numpy()
            stability = stability.float().cpu().numpy()
            features = features.double().cpu().numpy()
            if not np.all(np.isfinite(features)):
                raise NonFiniteValue(f"Decoder features for image {image_id} contain non-finite values")

            for b, (x, y) in enumerate(batch):
                prompt = (min(int(round(x)), width - 1), min(int(round(y)), height - 1))
                for j in range(binary.shape[1]):
                    if not binary[b, j].any():
                        continue
                    records.append(SegmentRecord(
                        image_id=image_id,
                        segment_id=len(records),
                        feature=features[b, j],
                        mask=rle_encode(binary[b, j]),
                        predicted_iou=float(np.clip(iou[b, j], 0.0, 1.0)),
                        stability_score=float(np.clip(stability[b, j], 0.0, 1.0)),
                        prompt_xy=prompt,
                        tap_point=self.config.tap_point.value,
                    ))
        predictor.reset_image()
        logger.info(f"Image {image_id}: {len(records)} masks from {len(points)} prompts ({height}x{width})")
        return records


def extract_segments(
    image_path: Union[str, Path],
    config: ExtractionConfig,
    image_id: int = 0,
    extractor: Optional[SegmentExtractor] = None,
) -> List[SegmentRecord]:
    """
    Raises:
        ImageDecodeError: unreadable image
        ModelLoadError: weights missing or incompatible
    """
    image = load_image(image_path)
    owned = extractor is None
    extractor = extractor or SegmentExtractor(config)
    try:
        return extractor.extract(image, image_id)
    finally:
        if owned:
            extractor.close()
