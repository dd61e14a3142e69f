from .synth import SyntheticBenchmark, make_benchmark, resample_pairs
from .teacher_client import HarvestManifest, HarvestReport, TeacherEndpointClient
