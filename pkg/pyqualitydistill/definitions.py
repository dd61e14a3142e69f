from enum import Enum


class QualityToken(str, Enum):
    """Discrete quality words the teacher chooses from, best first."""
    EXCELLENT = "Excellent"
    GOOD = "Good"
    FAIR = "Fair"
    POOR = "Poor"
    BAD = "Bad"

    @property
    def score(self) -> int:
        return QUALITY_SCORES[self]


QUALITY_TOKENS = (
    QualityToken.EXCELLENT,
    QualityToken.GOOD,
    QualityToken.FAIR,
    QualityToken.POOR,
    QualityToken.BAD,
)

QUALITY_SCORES = {
    QualityToken.EXCELLENT: 5,
    QualityToken.GOOD: 4,
    QualityToken.FAIR: 3,
    QualityToken.POOR: 2,
    QualityToken.BAD: 1,
}


class PairToken(str, Enum):
    """Decision tokens of the pair-wise prompt."""
    A = "A"
    B = "B"


class Split(str, Enum):
    """Dataset partitions."""
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class CheckpointMode(str, Enum):
    """How the distillation stage picks its checkpoint."""
    MOS_FREE = "mos_free"
    FEW_SHOT = "few_shot"


class TeacherBias(str, Enum):
    """Monotone maps the synthetic teacher applies to latent quality."""
    IDENTITY = "identity"
    COMPRESSIVE = "compressive"
    AFFINE = "affine"


class AblationMode(str, Enum):
    """Supervision variants of the ablation grid."""
    POINT = "point"
    PAIR = "pair"
    PAIR_CONF = "pair_conf"
    ALL = "all"
    CALIBRATION_ONLY = "cft_only"


class ExitCode(int, Enum):
    """Process exit status of the command-line tool."""
    OK = 0
    GENERIC = 1
    USAGE = 2
    CONFIGURATION = 3
    FORMAT = 4
    MISSING_ARTIFACT = 5
    DIVERGENCE = 6
    HARVEST = 7
    DATA = 8
