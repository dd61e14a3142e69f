"""In-memory dataset: features, split tags, optional MOS and latent quality."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from pyqualitydistill.definitions import Split
from pyqualitydistill.exceptions import ConfigurationError, MissingLabelsError, ShapeError
from pyqualitydistill.signals import SupervisionPair, TeacherPointSignal

logger = logging.getLogger(__name__)


class FeatureDataset:
    """
    Images as fixed-length feature rows with split tags and a partially labeled MOS column.

    MOS values are only reachable through ``labels()``, which counts every call in
    ``mos_reads`` so callers can prove a code path never touched them.
    """

    def __init__(
        self,
        ids: Sequence[Hashable],
        features: np.ndarray,
        split: Mapping[Hashable, Split],
        mos: Optional[Mapping[Hashable, float]] = None,
        latent: Optional[Mapping[Hashable, float]] = None,
    ):
        self.ids = tuple(ids)
        if len(set(self.ids)) != len(self.ids):
            raise ConfigurationError("dataset ids must be unique")
        self.features = np.asarray(features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != len(self.ids):
            raise ShapeError(f"expected {len(self.ids)} feature rows, got array of shape {self.features.shape}")
        self._index = {image_id: row for row, image_id in enumerate(self.ids)}
        missing = [i for i in self.ids if i not in split]
        if missing:
            raise ConfigurationError(f"{len(missing)} ids have no split tag, e.g. {missing[0]!r}")
        self.split = {i: Split(split[i]) for i in self.ids}
        self._mos = {i: float(v) for i, v in (mos or {}).items() if i in self._index}
        self.latent = None if latent is None else {i: float(latent[i]) for i in self.ids if i in latent}
        self.mos_reads = 0

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, image_id: Hashable) -> bool:
        return image_id in self._index

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def row(self, image_id: Hashable) -> int:
        return self._index[image_id]

    def ids_in(self, split: Split) -> List[Hashable]:
        split = Split(split)
        return [i for i in self.ids if self.split[i] == split]

    def features_of(self, ids: Iterable[Hashable]) -> np.ndarray:
        rows = [self._index[i] for i in ids]
        return self.features[rows]

    def has_label(self, image_id: Hashable) -> bool:
        return image_id in self._mos

    def labeled_ids(self, split: Optional[Split] = None) -> List[Hashable]:
        return [i for i in self.ids if i in self._mos and (split is None or self.split[i] == Split(split))]

    def labels(self, ids: Sequence[Hashable]) -> np.ndarray:
        """
        MOS of the given ids.

        Raises:
            MissingLabelsError: If any id has no MOS.
        """
        self.mos_reads += 1
        missing = [i for i in ids if i not in self._mos]
        if missing:
            raise MissingLabelsError(f"{len(missing)} ids have no MOS, e.g. {missing[0]!r}")
        return np.array([self._mos[i] for i in ids], dtype=np.float64)

    def mos_items(self) -> Dict[Hashable, float]:
        """All MOS values, for serialization."""
        self.mos_reads += 1
        return dict(self._mos)

    def latent_of(self, ids: Sequence[Hashable]) -> np.ndarray:
        if self.latent is None:
            raise MissingLabelsError("dataset carries no latent quality")
        return np.array([self.latent[i] for i in ids], dtype=np.float64)


@dataclass
class DatasetBundle:
    """Dataset plus the teacher signals that supervise it."""
    dataset: FeatureDataset
    point_signals: Dict[Hashable, TeacherPointSignal]
    pairs: List[SupervisionPair] = field(default_factory=list)

    def teacher_scores(self, ids: Iterable[Hashable]) -> np.ndarray:
        return np.array([self.point_signals[i].soft_score for i in ids], dtype=np.float64)
