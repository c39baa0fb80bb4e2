import enum


class EstimatorKind(str, enum.Enum):
    """Density estimator families that can back a likelihood-ratio classifier."""

    GMM = "gmm"
    FLOW = "flow"
    KNN = "knn"

    @classmethod
    def get_all_values(cls):
        """Get all enum values as a list."""
        return [kind.value for kind in cls]

    @classmethod
    def is_valid(cls, value: str) -> bool:
        """Check if a value is a valid estimator kind."""
        return value in cls.get_all_values()


class ReferenceKind(str, enum.Enum):
    FREE = "free"
    OBSTACLE = "obstacle"


class Scenario(str, enum.Enum):
    """Synthetic two-distribution scenarios."""

    BLOBS = "blobs"
    RINGS = "rings"
    MOONS = "moons"

    @classmethod
    def get_all_values(cls):
        return [scenario.value for scenario in cls]

    @classmethod
    def is_valid(cls, value: str) -> bool:
        return value in cls.get_all_values()


class Connectivity(int, enum.Enum):
    FOUR = 4
    EIGHT = 8


class LabelValue(int, enum.Enum):
    FREE = 0
    OBSTACLE = 1
    IGNORE = 255
