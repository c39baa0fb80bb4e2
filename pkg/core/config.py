from pydantic import field_validator
from pydantic_settings import BaseSettings
import logging

logger = logging.getLogger(__name__)

class Settings(BaseSettings):
    # Runtime settings
    LRSEG_THREADS: int = 1  # per-image parallelism cap
    LRSEG_LOG_LEVEL: str = "INFO"

    # Gaussian mixture settings
    DEFAULT_GMM_COMPONENTS: int = 50
    GMM_VARIANCE_FLOOR: float = 1e-6
    GMM_MAX_ITER: int = 200
    GMM_REL_TOL: float = 1e-6
    KMEANS_MAX_ITER: int = 100

    # Normalizing flow settings
    FLOW_BLOCKS: int = 3
    FLOW_HIDDEN_WIDTH: int = 64
    FLOW_HIDDEN_LAYERS: int = 4
    FLOW_SPLINE_BINS: int = 8
    FLOW_TAIL_BOUND: float = 3.0
    FLOW_EPOCHS: int = 100
    FLOW_BATCH_SIZE: int = 256
    FLOW_STEP_SIZE: float = 1e-3

    # Nearest neighbour settings
    DEFAULT_KNN_K: int = 5

    # Score maps
    SCORE_FLOOR: float = -50.0
    LOG_RATIO_CLAMP: float = 50.0

    # Segment filtering
    MIN_PREDICTED_IOU: float = 0.88
    MIN_STABILITY: float = 0.90
    DEDUP_IOU_THRESHOLD: float = 0.90

    # Batch workers
    WORKER_MAX_RETRIES: int = 0

    @field_validator("LRSEG_THREADS")
    @classmethod
    def validate_threads(cls, v):
        if v < 1:
            raise ValueError(f"LRSEG_THREADS must be >= 1, got {v}")
        return v

    class Config:
        env_file = ".env"
        env_file_encoding = 'utf-8'
        case_sensitive = True
        extra = "allow"

settings = Settings()
logger.debug(f"Loaded settings: threads={settings.LRSEG_THREADS}, log_level={settings.LRSEG_LOG_LEVEL}")
