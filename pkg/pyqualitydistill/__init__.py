from .pyqualitydistill import create_file_engine, create_synthetic_engine, file_engine, synthetic_engine
from .config import SynthConfig, TrainConfig

__all__ = [
    'synthetic_engine',
    'file_engine',
    'create_synthetic_engine',
    'create_file_engine',
    'SynthConfig',
    'TrainConfig',
]
