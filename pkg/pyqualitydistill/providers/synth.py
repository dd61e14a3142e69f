"""
Synthetic benchmark and simulated teacher.

Images are latent qualities q on [1, 5]; features are noisy monotone views of q;
the teacher sees q through a monotone but biased map g, so it ranks well while
sitting off the MOS scale. It is also swayed by image content: its belief leans
on the last feature column, a distractor as far as MOS is concerned, by
content_bias. A student can copy that lean from the teacher and only MOS labels
can take it out again.

Every random draw comes from its own named stream of the config seed, so
changing one stream (pairs, say) leaves the others intact.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple, Union

import numpy as np

from pyqualitydistill.config import SynthConfig
from pyqualitydistill.dataset import DatasetBundle, FeatureDataset
from pyqualitydistill.definitions import Split, TeacherBias
from pyqualitydistill.exceptions import ConfigurationError
from pyqualitydistill.signals import TOKEN_VALUES, SupervisionPair, make_pair, make_point_signal, sample_pairs
from pyqualitydistill.utils import stream_rng, stream_seed

logger = logging.getLogger(__name__)

Q_MIN = 1.0
Q_MAX = 5.0
MIN_GAP = 0.25

# Named random streams of one seed.
_LATENT = 0
_FEATURES = 1
_TEACHER_POINT = 2
_PAIR_DRAW = 3
_TEACHER_PAIR = 4
_MOS = 5
_SPLIT = 6

ArrayLike = Union[float, Sequence[float], np.ndarray]

_FEATURE_MAPS: Tuple[Callable[[np.ndarray], np.ndarray], ...] = (
    lambda q: q,
    lambda q: 2.0 * np.log(q),
    lambda q: 3.0 + 2.0 * np.tanh(q - 3.0),
    lambda q: 2.0 * np.sqrt(q),
    lambda q: q * q / 5.0,
)


def gen_latent(n: int, seed: int) -> np.ndarray:
    """
    Latent qualities drawn i.i.d. uniform on [1, 5].

    Raises:
        ConfigurationError: If n < 1.
    """
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    return stream_rng(seed, _LATENT).uniform(Q_MIN, Q_MAX, size=n)


def gen_features(q: ArrayLike, config: SynthConfig, informative_dims: Optional[int] = None) -> np.ndarray:
    """
    Feature matrix whose first columns are smooth increasing functions of q.

    Column 0 is q itself, further informative columns cycle through fixed monotone
    maps, and every informative column carries Gaussian noise of sd feature_noise.
    The remaining columns are standard normal distractors.

    Args:
        q: Latent qualities.
        config: Benchmark config; d, informative_dims, feature_noise and seed are used.
        informative_dims: Override of config.informative_dims; 0 gives pure distractors.

    Returns:
        np.ndarray: Matrix of shape (len(q), d).
    """
    q = np.asarray(q, dtype=np.float64).ravel()
    k = config.informative_dims if informative_dims is None else int(informative_dims)
    if not 0 <= k <= config.d:
        raise ConfigurationError(f"informative_dims must lie in [0, d={config.d}], got {k}")
    rng = stream_rng(config.seed, _FEATURES)
    noise = rng.standard_normal((q.size, config.d))
    features = noise.copy()
    for j in range(k):
        features[:, j] = _FEATURE_MAPS[j % len(_FEATURE_MAPS)](q) + config.feature_noise * noise[:, j]
    return features


def teacher_bias_map(q: ArrayLike, config: SynthConfig) -> np.ndarray:
    """The teacher's monotone distortion g of the latent quality."""
    q = np.asarray(q, dtype=np.float64)
    if config.teacher_bias == TeacherBias.IDENTITY:
        return q.copy()
    if config.teacher_bias == TeacherBias.COMPRESSIVE:
        base = np.clip((q - Q_MIN) / (Q_MAX - Q_MIN), 0.0, 1.0)
        return Q_MIN + (Q_MAX - Q_MIN) * base ** config.gamma
    return config.affine_alpha * q + config.affine_beta


def content_column(features: np.ndarray, config: SynthConfig) -> np.ndarray:
    """The feature column the teacher's judgments lean on."""
    return np.asarray(features, dtype=np.float64)[:, config.d - 1]


def teacher_belief(q: ArrayLike, config: SynthConfig, content: Optional[ArrayLike] = None) -> np.ndarray:
    """Noise-free teacher belief g(q) + content_bias * content; content defaults to 0."""
    belief = teacher_bias_map(np.asarray(q, dtype=np.float64), config)
    if content is None or config.content_bias == 0.0:
        return belief
    content = np.asarray(content, dtype=np.float64)
    if content.shape != belief.shape:
        raise ConfigurationError(f"content shape {content.shape} does not match qualities {belief.shape}")
    return belief + config.content_bias * content


def teacher_point_logits(
    q: ArrayLike,
    config: SynthConfig,
    rng: Optional[np.random.Generator] = None,
    content: Optional[ArrayLike] = None,
) -> np.ndarray:
    """
    Quality-token log-likelihoods for many images at once, shape (n, 5).

    The teacher's belief m = clamp(g(q) + content_bias * content + N(0, teacher_noise))
    is turned into logits -point_sharpness * (v_k - m)^2 over the token values 5..1.
    """
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    if content is not None:
        content = np.atleast_1d(np.asarray(content, dtype=np.float64))
    if rng is None:
        rng = stream_rng(config.seed, _TEACHER_POINT)
    m = teacher_belief(q, config, content)
    if config.teacher_noise > 0.0:
        m = m + rng.normal(0.0, config.teacher_noise, size=m.shape)
    m = np.clip(m, Q_MIN, Q_MAX)
    return -config.point_sharpness * (TOKEN_VALUES[None, :] - m[:, None]) ** 2


def teacher_point_oracle(
    q_i: float,
    config: SynthConfig,
    rng: Optional[np.random.Generator] = None,
    content: Optional[float] = None,
) -> np.ndarray:
    """
    Quality-token log-likelihoods of one image in Excellent..Bad order.

    Example:
        >>> cfg = SynthConfig(teacher_bias="identity", teacher_noise=0.0)
        >>> teacher_point_oracle(3.0, cfg).tolist()
        [-8.0, -2.0, -0.0, -2.0, -8.0]
    """
    return teacher_point_logits([q_i], config, rng, None if content is None else [content])[0]


def teacher_pair_oracle(
    q_a: ArrayLike,
    q_b: ArrayLike,
    config: SynthConfig,
    rng: Optional[np.random.Generator] = None,
    content_a: Optional[ArrayLike] = None,
    content_b: Optional[ArrayLike] = None,
) -> Tuple[ArrayLike, ArrayLike]:
    """
    Decision-token log-likelihoods (l_a, l_b) for images with qualities q_a and q_b.

    Before noise l_a = pair_sharpness * (b_a - b_b) / 2 and l_b = -l_a, where b is
    the same noise-free belief the point oracle uses. Each logit then gets
    independent Gaussian noise of sd pair_noise, divided by max(|q_a - q_b|, 0.25)
    in heteroscedastic mode so near-ties are unreliable. Scalars in, floats out;
    arrays in, arrays out.
    """
    scalar = np.ndim(q_a) == 0 and np.ndim(q_b) == 0
    qa = np.atleast_1d(np.asarray(q_a, dtype=np.float64))
    qb = np.atleast_1d(np.asarray(q_b, dtype=np.float64))
    if qa.shape != qb.shape:
        raise ConfigurationError(f"quality arrays differ in shape: {qa.shape} vs {qb.shape}")
    ca = None if content_a is None else np.atleast_1d(np.asarray(content_a, dtype=np.float64))
    cb = None if content_b is None else np.atleast_1d(np.asarray(content_b, dtype=np.float64))

    center = config.pair_sharpness * (teacher_belief(qa, config, ca) - teacher_belief(qb, config, cb)) / 2.0
    l_a = center.copy()
    l_b = -center
    if config.pair_noise > 0.0:
        if rng is None:
            rng = stream_rng(config.seed, _TEACHER_PAIR)
        sd = np.full(qa.shape, config.pair_noise)
        if config.heteroscedastic:
            sd = sd / np.maximum(np.abs(qa - qb), MIN_GAP)
        l_a = l_a + sd * rng.standard_normal(qa.shape)
        l_b = l_b + sd * rng.standard_normal(qa.shape)
    if scalar:
        return float(l_a[0]), float(l_b[0])
    return l_a, l_b


def gen_mos(q: ArrayLike, sigma_y: float, seed: int) -> np.ndarray:
    """Opinion scores y = clamp(q + N(0, sigma_y), 1, 5)."""
    if sigma_y < 0.0:
        raise ConfigurationError(f"mos noise must be >= 0, got {sigma_y}")
    q = np.asarray(q, dtype=np.float64).ravel()
    if sigma_y == 0.0:
        return q.copy()
    return np.clip(q + stream_rng(seed, _MOS).normal(0.0, sigma_y, size=q.size), Q_MIN, Q_MAX)


def split_sizes(n: int, config: SynthConfig) -> Tuple[int, int, int]:
    n_train = int(round(config.train_frac * n))
    n_val = int(round(config.val_frac * n))
    n_test = n - n_train - n_val
    if n_train < 2 or n_test < 1:
        raise ConfigurationError(f"split of {n} images leaves train={n_train}, test={n_test}")
    return n_train, n_val, n_test


def image_id(index: int) -> str:
    return f"img_{index:05d}"


@dataclass
class SyntheticBenchmark:
    """Generated bundle plus the ground truth that produced it."""
    config: SynthConfig
    bundle: DatasetBundle

    @property
    def dataset(self) -> FeatureDataset:
        return self.bundle.dataset

    def latent(self, ids: Sequence[Hashable]) -> np.ndarray:
        return self.dataset.latent_of(ids)


def draw_teacher_pairs(
    ids: Sequence[Hashable],
    latent: Dict[Hashable, float],
    config: SynthConfig,
    seed: int,
    count: Optional[int] = None,
    unique: bool = False,
    content: Optional[Dict[Hashable, float]] = None,
) -> List[SupervisionPair]:
    """
    Sample ordered pairs among ids and ask the simulated teacher about each.

    Args:
        ids: Candidate images.
        latent: Latent quality of every candidate.
        config: Teacher settings.
        seed: Seed of both the pair draw and the teacher noise.
        count: Number of pairs; defaults to config.n.
        unique: Redraw duplicate pairs.
        content: Content value of every candidate; None leaves the teacher unswayed.
    """
    count = config.n if count is None else count
    drawn = sample_pairs(ids, count, stream_seed(seed, _PAIR_DRAW), unique=unique)
    if not drawn:
        return []
    qa = np.array([latent[a] for a, _ in drawn])
    qb = np.array([latent[b] for _, b in drawn])
    ca = cb = None
    if content is not None:
        ca = np.array([content[a] for a, _ in drawn])
        cb = np.array([content[b] for _, b in drawn])
    l_a, l_b = teacher_pair_oracle(qa, qb, config, rng=stream_rng(seed, _TEACHER_PAIR), content_a=ca, content_b=cb)
    return [make_pair(a, b, la, lb) for (a, b), la, lb in zip(drawn, l_a.tolist(), l_b.tolist())]


def make_benchmark(config: Optional[SynthConfig] = None, unique_pairs: bool = False) -> SyntheticBenchmark:
    """
    Generate a complete benchmark: features, MOS, splits, teacher point signals and pairs.

    Pairs are drawn among training images only, as many as there are images.

    Example:
        >>> bench = make_benchmark(SynthConfig(n=100))
        >>> len(bench.dataset), len(bench.bundle.pairs)
        (100, 100)
    """
    config = config or SynthConfig()
    n = config.n
    q = gen_latent(n, config.seed)
    features = gen_features(q, config)
    content = content_column(features, config)
    point_logits = teacher_point_logits(q, config, rng=stream_rng(config.seed, _TEACHER_POINT), content=content)
    mos = gen_mos(q, config.mos_noise, config.seed)

    ids = [image_id(i) for i in range(n)]
    n_train, n_val, _ = split_sizes(n, config)
    order = stream_rng(config.seed, _SPLIT).permutation(n)
    split: Dict[Hashable, Split] = {}
    for rank, row in enumerate(order.tolist()):
        if rank < n_train:
            split[ids[row]] = Split.TRAIN
        elif rank < n_train + n_val:
            split[ids[row]] = Split.VAL
        else:
            split[ids[row]] = Split.TEST

    latent = dict(zip(ids, q.tolist()))
    dataset = FeatureDataset(ids, features, split, mos=dict(zip(ids, mos.tolist())), latent=latent)
    points = {i: make_point_signal(i, row) for i, row in zip(ids, point_logits)}
    pairs = draw_teacher_pairs(
        dataset.ids_in(Split.TRAIN), latent, config, config.seed,
        unique=unique_pairs, content=dict(zip(ids, content.tolist())),
    )
    logger.info(
        "Synthetic benchmark: %d images (%d train / %d val / %d test), %d pairs, bias=%s, content_bias=%s",
        n, n_train, n_val, n - n_train - n_val, len(pairs), config.teacher_bias.value, config.content_bias,
    )
    return SyntheticBenchmark(config, DatasetBundle(dataset, points, pairs))


def resample_pairs(benchmark: SyntheticBenchmark, seed: int, unique: bool = False) -> List[SupervisionPair]:
    """Fresh pair set over the same training images, drawn from a different seed."""
    dataset = benchmark.dataset
    return draw_teacher_pairs(
        dataset.ids_in(Split.TRAIN),
        dataset.latent,
        benchmark.config,
        seed,
        count=len(dataset),
        unique=unique,
        content=dict(zip(dataset.ids, content_column(dataset.features, benchmark.config).tolist())),
    )
