"""
Harvest teacher signals from a chat-completions endpoint that returns token log-probabilities.

Each image gets one point request (a single-token rating among the five quality
words) and each pair one preference request (a single "A" or "B" token). The
answer-position top log-probabilities become the point logits and pair logits
that the rest of the package consumes, written in the bundle formats.
"""

import json
import logging
import os
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Hashable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import requests
from dotenv import load_dotenv
from scipy.special import logsumexp

from pyqualitydistill.definitions import QUALITY_TOKENS, PairToken
from pyqualitydistill.exceptions import (
    ConfigurationError,
    HarvestError,
    InvalidSignalError,
    TemplateError,
    UnparseableResponseError,
)
from pyqualitydistill.signals import make_pair, make_point_signal
from pyqualitydistill.utils import PathLike, append_line, dump_json_line, read_json, write_json, write_jsonl

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_ENV = "QUALITY_TEACHER_TOKEN"
IMAGE_SLOT = "<image>"
IMAGE_A_SLOT = "<image_a>"
IMAGE_B_SLOT = "<image_b>"
CANDIDATES_SLOT = "{candidates}"
FLOOR_MARGIN = 10.0
RETRY_STATUS = frozenset({408, 429, 500, 502, 503, 504})

# Stand-in prompts; not the wording any published model was evaluated with.
DEFAULT_POINT_TEMPLATE = (
    "<image>\nJudge the overall perceptual quality of this image. "
    "Answer with exactly one word from: {candidates}."
)
DEFAULT_PAIR_TEMPLATE = (
    "Image A: <image_a>\nImage B: <image_b>\n"
    "Which image has the better overall perceptual quality? Answer with a single letter: A or B."
)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    backoff: float = 0.5
    backoff_factor: float = 2.0
    max_backoff: float = 30.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ConfigurationError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.backoff < 0 or self.backoff_factor < 1 or self.max_backoff < 0:
            raise ConfigurationError("backoff must be >= 0 and backoff_factor >= 1")

    def delay(self, attempt: int) -> float:
        """Seconds to wait after failed attempt number ``attempt`` (1-based)."""
        return min(self.max_backoff, self.backoff * self.backoff_factor ** (attempt - 1))


def check_template(template: str, slots: Sequence[str]) -> None:
    """
    Raises:
        TemplateError: If a slot is missing or an image slot appears more than once.
    """
    for slot in slots:
        count = template.count(slot)
        if count == 0:
            raise TemplateError(f"template lacks the {slot} placeholder")
        if slot != CANDIDATES_SLOT and count > 1:
            raise TemplateError(f"template has {count} {slot} placeholders; expected one")


def load_template(path: PathLike) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


@dataclass
class HarvestManifest:
    """Where to send requests, what to ask, and where the signal files go."""
    endpoint: str
    model: str
    images: Dict[str, str]
    point_template: str = DEFAULT_POINT_TEMPLATE
    pair_template: str = DEFAULT_PAIR_TEMPLATE
    concurrency: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    output_dir: str = "data"
    token_env: str = DEFAULT_TOKEN_ENV
    timeout: float = 60.0
    top_logprobs: int = 20

    def __post_init__(self):
        if not self.endpoint:
            raise ConfigurationError("manifest endpoint is empty")
        if self.concurrency < 1:
            raise ConfigurationError(f"concurrency must be >= 1, got {self.concurrency}")
        if self.top_logprobs < len(QUALITY_TOKENS):
            raise ConfigurationError(f"top_logprobs must be >= {len(QUALITY_TOKENS)}")
        check_template(self.point_template, (IMAGE_SLOT, CANDIDATES_SLOT))
        check_template(self.pair_template, (IMAGE_A_SLOT, IMAGE_B_SLOT))

    @property
    def points_path(self) -> Path:
        return Path(self.output_dir) / "points.jsonl"

    @property
    def pairs_path(self) -> Path:
        return Path(self.output_dir) / "pairs.jsonl"

    @property
    def report_path(self) -> Path:
        return Path(self.output_dir) / "harvest_report.json"

    @classmethod
    def from_file(cls, path: PathLike) -> "HarvestManifest":
        """
        Read a JSON manifest.

        Keys: endpoint, model, images ({id: reference}), optional point_template_file
        and pair_template_file (resolved against the manifest's directory),
        concurrency, max_attempts, backoff, output_dir, token_env, timeout, top_logprobs.
        """
        path = Path(path)
        doc = read_json(path)
        if not isinstance(doc, dict):
            raise ConfigurationError(f"manifest {path} must hold a JSON object")
        try:
            images = {str(k): str(v) for k, v in doc["images"].items()}
            kwargs: Dict[str, Any] = dict(endpoint=doc["endpoint"], model=doc["model"], images=images)
        except (KeyError, AttributeError) as e:
            raise ConfigurationError(f"manifest {path} lacks endpoint, model or images: {e}") from e
        for key, attr in (("point_template_file", "point_template"), ("pair_template_file", "pair_template")):
            if doc.get(key):
                kwargs[attr] = load_template(path.parent / doc[key])
        for key in ("concurrency", "output_dir", "token_env", "timeout", "top_logprobs"):
            if key in doc:
                kwargs[key] = doc[key]
        retry = {k: doc[k] for k in ("max_attempts", "backoff", "backoff_factor", "max_backoff") if k in doc}
        if retry:
            kwargs["retry"] = RetryPolicy(**retry)
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# Requests
# ---------------------------------------------------------------------------

def _image_part(ref: str) -> Dict[str, Any]:
    return {"type": "image_url", "image_url": {"url": ref}}


def _content(template: str, images: Dict[str, str]) -> List[Dict[str, Any]]:
    """Split the template around its image slots into text and image parts, in template order."""
    positions = sorted((template.index(slot), slot) for slot in images)
    parts: List[Dict[str, Any]] = []
    cursor = 0
    for pos, slot in positions:
        text = template[cursor:pos]
        if text:
            parts.append({"type": "text", "text": text})
        parts.append(_image_part(images[slot]))
        cursor = pos + len(slot)
    tail = template[cursor:]
    if tail:
        parts.append({"type": "text", "text": tail})
    return parts


def _request(model: str, content: List[Dict[str, Any]], top_logprobs: int) -> Dict[str, Any]:
    return {
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": 1,
        "temperature": 0,
        "logprobs": True,
        "top_logprobs": top_logprobs,
    }


def build_point_request(image_ref: str, template: str = DEFAULT_POINT_TEMPLATE, model: str = "", top_logprobs: int = 20) -> Dict[str, Any]:
    """
    Chat-completions request for a single-token quality rating of one image.

    Raises:
        TemplateError: If the template lacks <image> or {candidates}.
    """
    check_template(template, (IMAGE_SLOT, CANDIDATES_SLOT))
    filled = template.replace(CANDIDATES_SLOT, ", ".join(t.value for t in QUALITY_TOKENS))
    return _request(model, _content(filled, {IMAGE_SLOT: image_ref}), top_logprobs)


def build_pair_request(image_a: str, image_b: str, template: str = DEFAULT_PAIR_TEMPLATE, model: str = "", top_logprobs: int = 20) -> Dict[str, Any]:
    """Chat-completions request for a single "A" / "B" preference token."""
    check_template(template, (IMAGE_A_SLOT, IMAGE_B_SLOT))
    return _request(model, _content(template, {IMAGE_A_SLOT: image_a, IMAGE_B_SLOT: image_b}), top_logprobs)


# ---------------------------------------------------------------------------
# Responses
# ---------------------------------------------------------------------------

class ChatCompletionsAdapter:
    """Reads the answer-position alternatives from a chat-completions response."""

    def top_logprobs(self, response: Any) -> List[Tuple[str, float]]:
        try:
            entries = response["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
            out = [(str(e["token"]), float(e["logprob"])) for e in entries]
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise UnparseableResponseError(f"no top_logprobs at the answer position: {e}", raw=response) from e
        if not out:
            raise UnparseableResponseError("empty top_logprobs list", raw=response)
        return out


_DEFAULT_ADAPTER = ChatCompletionsAdapter()


class PointParse(NamedTuple):
    logits: np.ndarray
    floored: List[str]


def _collect(alternatives: Sequence[Tuple[str, float]], key: Callable[[str], str]) -> Dict[str, float]:
    # variants of one word (" Good", "good") pool their probability
    grouped: Dict[str, List[float]] = {}
    for token, logprob in alternatives:
        grouped.setdefault(key(token), []).append(logprob)
    return {k: float(logsumexp(v)) for k, v in grouped.items()}


def parse_point_response(response: Any, adapter: ChatCompletionsAdapter = _DEFAULT_ADAPTER) -> PointParse:
    """
    Quality-word log-probabilities in Excellent..Bad order, plus the words that were floored.

    Words are matched case-insensitively after stripping whitespace. A word absent
    from the alternatives gets the floor value min(returned logprobs) - 10.

    Raises:
        UnparseableResponseError: If none of the five words is among the alternatives.
    """
    alternatives = adapter.top_logprobs(response)
    found = _collect(alternatives, lambda t: t.strip().lower())
    floor = min(lp for _, lp in alternatives) - FLOOR_MARGIN
    logits = []
    floored = []
    for token in QUALITY_TOKENS:
        value = found.get(token.value.lower())
        if value is None:
            floored.append(token.value)
            value = floor
        logits.append(value)
    if len(floored) == len(QUALITY_TOKENS):
        raise UnparseableResponseError("no quality word among the alternatives", raw=response)
    return PointParse(np.array(logits, dtype=np.float64), floored)


def extract_point_logits(response: Any, adapter: ChatCompletionsAdapter = _DEFAULT_ADAPTER) -> np.ndarray:
    """
    Example:
        >>> alts = {"Good": -0.2, "Fair": -1.8, "Excellent": -3.0, "Poor": -5.0, "Bad": -7.0}
        >>> resp = {"choices": [{"logprobs": {"content": [{"top_logprobs": [
        ...     {"token": k, "logprob": v} for k, v in alts.items()]}]}}]}
        >>> extract_point_logits(resp).tolist()
        [-3.0, -0.2, -1.8, -5.0, -7.0]
    """
    return parse_point_response(response, adapter).logits


def extract_pair_logits(response: Any, adapter: ChatCompletionsAdapter = _DEFAULT_ADAPTER) -> Tuple[float, float]:
    """
    Log-probabilities of the "A" and "B" tokens, whitespace-tolerant.

    Raises:
        UnparseableResponseError: If either token is missing.
    """
    found = _collect(adapter.top_logprobs(response), lambda t: t.strip())
    missing = [t.value for t in PairToken if t.value not in found]
    if missing:
        raise UnparseableResponseError(f"decision token(s) {', '.join(missing)} absent", raw=response)
    return found[PairToken.A.value], found[PairToken.B.value]


# ---------------------------------------------------------------------------
# Harvest
# ---------------------------------------------------------------------------

class _Outcome(NamedTuple):
    kind: str
    key: Tuple[str, ...]
    record: Optional[Dict[str, Any]]
    error: Optional[str]
    attempts: int
    latency: float
    floored: List[str]


@dataclass
class HarvestReport:
    """Successes, permanent failures, retries and latency of one harvest run."""
    points_ok: int = 0
    pairs_ok: int = 0
    points_resumed: int = 0
    pairs_resumed: int = 0
    failures: List[Dict[str, Any]] = field(default_factory=list)
    floored: List[Dict[str, Any]] = field(default_factory=list)
    retries: int = 0
    latencies: List[float] = field(default_factory=list)

    @property
    def attempted(self) -> int:
        return self.points_ok + self.pairs_ok + len(self.failures)

    def latency_stats(self) -> Dict[str, Optional[float]]:
        if not self.latencies:
            return {"mean": None, "p50": None, "p95": None, "max": None}
        arr = np.asarray(self.latencies)
        return {
            "mean": float(arr.mean()),
            "p50": float(np.percentile(arr, 50)),
            "p95": float(np.percentile(arr, 95)),
            "max": float(arr.max()),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "points_ok": self.points_ok,
            "pairs_ok": self.pairs_ok,
            "points_resumed": self.points_resumed,
            "pairs_resumed": self.pairs_resumed,
            "failures": sorted(self.failures, key=lambda f: (f["kind"], f["key"])),
            "floored": sorted(self.floored, key=lambda f: f["id"]),
            "retries": self.retries,
            "latency_seconds": self.latency_stats(),
        }


def _read_partial(path: Path) -> List[Dict[str, Any]]:
    """Records of an interrupted harvest; a torn last line is dropped."""
    if not path.exists():
        return []
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                logger.warning("Dropping unreadable line %d of %s", line_no, path)
                continue
            if isinstance(record, dict):
                out.append(record)
    return out


class TeacherEndpointClient:
    """
    Sends rating and preference requests to one endpoint with bounded concurrency.

    Args:
        manifest: Endpoint, templates, image references and output location.
        session: HTTP session; anything with requests.Session's post() works.
        sleep: Called with the backoff delay between attempts.
        token: Bearer token; defaults to the manifest's environment variable.
    """

    def __init__(
        self,
        manifest: HarvestManifest,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
        token: Optional[str] = None,
    ):
        self.manifest = manifest
        self.session = session or requests.Session()
        self.sleep = sleep
        if token is None:
            load_dotenv()
            token = os.getenv(manifest.token_env)
        self.headers = {"Content-Type": "application/json"}
        if token:
            self.headers["Authorization"] = f"Bearer {token}"
        else:
            logger.warning("No token in $%s; sending unauthenticated requests", manifest.token_env)
        self._retry_lock = threading.Lock()
        self._retries = 0

    def _post(self, request: Dict[str, Any]) -> Tuple[Any, int]:
        """POST with retries on connection errors, timeouts and retryable statuses."""
        policy = self.manifest.retry
        for attempt in range(1, policy.max_attempts + 1):
            try:
                response = self.session.post(
                    self.manifest.endpoint,
                    json=request,
                    headers=self.headers,
                    timeout=self.manifest.timeout,
                )
                if response.status_code in RETRY_STATUS:
                    raise requests.HTTPError(f"retryable status {response.status_code}", response=response)
                response.raise_for_status()
                return response.json(), attempt
            except (requests.ConnectionError, requests.Timeout, requests.HTTPError) as e:
                status = getattr(getattr(e, "response", None), "status_code", None)
                transient = not isinstance(e, requests.HTTPError) or status in RETRY_STATUS
                if not transient or attempt == policy.max_attempts:
                    raise
                with self._retry_lock:
                    self._retries += 1
                delay = policy.delay(attempt)
                logger.warning("Attempt %d failed (%s); retrying in %.2fs", attempt, e, delay)
                self.sleep(delay)
        raise HarvestError("retry loop exhausted")

    def _run(self, kind: str, key: Tuple[str, ...], request: Dict[str, Any], parse: Callable[[Any], Tuple[Dict[str, Any], List[str]]]) -> _Outcome:
        start = time.perf_counter()
        attempts = 0
        try:
            body, attempts = self._post(request)
            record, floored = parse(body)
            return _Outcome(kind, key, record, None, attempts, time.perf_counter() - start, floored)
        except (requests.RequestException, ValueError, UnparseableResponseError, InvalidSignalError) as e:
            logger.warning("%s %s failed permanently: %s", kind, "/".join(key), e)
            return _Outcome(kind, key, None, str(e), attempts, time.perf_counter() - start, [])

    def point_job(self, image_id: str) -> _Outcome:
        request = build_point_request(
            self.manifest.images[image_id], self.manifest.point_template, self.manifest.model, self.manifest.top_logprobs,
        )

        def parse(body):
            parsed = parse_point_response(body)
            make_point_signal(image_id, parsed.logits)
            return {"id": image_id, "logits": [float(v) for v in parsed.logits]}, parsed.floored

        return self._run("point", (image_id,), request, parse)

    def pair_job(self, a: str, b: str) -> _Outcome:
        request = build_pair_request(
            self.manifest.images[a], self.manifest.images[b], self.manifest.pair_template,
            self.manifest.model, self.manifest.top_logprobs,
        )

        def parse(body):
            l_a, l_b = extract_pair_logits(body)
            make_pair(a, b, l_a, l_b)
            return {"a": a, "b": b, "logit_a": l_a, "logit_b": l_b}, []

        return self._run("pair", (a, b), request, parse)

    def harvest(self, image_ids: Sequence[Hashable], pairs: Sequence[Tuple[Hashable, Hashable]]) -> HarvestReport:
        """
        Collect point signals for image_ids and preferences for pairs, resuming earlier progress.

        Records already present in the output files are kept and not re-requested.
        New records are appended as they complete by this thread alone; at the end
        both files are rewritten in canonical order (points by id, pairs in input
        order), so an interrupted-and-resumed harvest ends with the same files as an
        uninterrupted one. Per-item failures are reported, not raised.

        Raises:
            ConfigurationError: If an id has no image reference in the manifest.
            HarvestError: If there was work to do and every item failed.
        """
        m = self.manifest
        image_ids = [str(i) for i in image_ids]
        pairs = [(str(a), str(b)) for a, b in pairs]
        unknown = sorted({i for i in image_ids + [x for p in pairs for x in p] if i not in m.images})
        if unknown:
            raise ConfigurationError(f"{len(unknown)} ids have no image reference, e.g. {unknown[0]!r}")
        Path(m.output_dir).mkdir(parents=True, exist_ok=True)

        points: Dict[str, Dict[str, Any]] = {}
        for r in _read_partial(m.points_path):
            if isinstance(r.get("id"), str):
                points[r["id"]] = r
        pair_records: Dict[Tuple[str, str], Dict[str, Any]] = {}
        for r in _read_partial(m.pairs_path):
            if isinstance(r.get("a"), str) and isinstance(r.get("b"), str):
                pair_records[(r["a"], r["b"])] = r

        report = HarvestReport()
        todo_points = [i for i in dict.fromkeys(image_ids) if i not in points]
        wanted_pairs = list(dict.fromkeys(pairs))
        todo_pairs = [p for p in wanted_pairs if p not in pair_records]
        report.points_resumed = len(set(image_ids)) - len(todo_points)
        report.pairs_resumed = len(wanted_pairs) - len(todo_pairs)
        duplicates = sum(c - 1 for c in Counter(pairs).values() if c > 1)
        if duplicates:
            logger.info("%d duplicate pairs share one request each", duplicates)
        logger.info(
            "Harvest: %d point and %d pair requests (%d / %d already on disk), concurrency %d",
            len(todo_points), len(todo_pairs), report.points_resumed, report.pairs_resumed, m.concurrency,
        )

        with ThreadPoolExecutor(max_workers=m.concurrency) as pool:
            futures = [pool.submit(self.point_job, i) for i in todo_points]
            futures += [pool.submit(self.pair_job, a, b) for a, b in todo_pairs]
            for future in as_completed(futures):
                outcome = future.result()
                report.latencies.append(outcome.latency)
                if outcome.record is None:
                    report.failures.append({"kind": outcome.kind, "key": "/".join(outcome.key), "error": outcome.error})
                    continue
                if outcome.kind == "point":
                    points[outcome.key[0]] = outcome.record
                    report.points_ok += 1
                    append_line(m.points_path, dump_json_line(outcome.record))
                    if outcome.floored:
                        report.floored.append({"id": outcome.key[0], "tokens": outcome.floored})
                else:
                    pair_records[(outcome.key[0], outcome.key[1])] = outcome.record
                    report.pairs_ok += 1
                    append_line(m.pairs_path, dump_json_line(outcome.record))
        report.retries = self._retries

        write_jsonl((points[i] for i in sorted(points)), m.points_path)
        write_jsonl((pair_records[p] for p in pairs if p in pair_records), m.pairs_path)
        write_json(report.to_dict(), m.report_path)
        logger.info(
            "Harvest done: %d points, %d pairs, %d failures, %d retries",
            report.points_ok, report.pairs_ok, len(report.failures), report.retries,
        )
        if report.attempted and report.points_ok + report.pairs_ok == 0:
            raise HarvestError(f"all {report.attempted} requests failed; see {m.report_path}")
        return report
