"""
LLM Service for Scene Questions
Sends a prompt plus annotated images to a chat-completions endpoint in one
user turn, retries transient failures and extracts the final ANSWER line.
"""

import base64
import hashlib
import json
import logging
import os
import re
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import openai
from dotenv import load_dotenv
from openai import OpenAI
from retrying import Retrying

from config import QueryConfig
from errors import (
    AuthError,
    GR3DError,
    InvalidInputError,
    MalformedResponseError,
    MissingFileError,
    NetworkError,
    RequestRejectedError,
    RetriesExhaustedError,
)

load_dotenv()

logger = logging.getLogger(__name__)

ANSWER_MARKER = re.compile(r"ANSWER:(.*)")
RETRYABLE = (openai.APIConnectionError, openai.InternalServerError, openai.RateLimitError)
MIME_TYPES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg", ".webp": "image/webp"}


@dataclass
class QueryResult:
    raw_text: str
    answer: str
    parse_warning: bool = False
    usage: Dict = field(default_factory=dict)
    attempts: int = 1
    cached: bool = False

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class QueryJob:
    prompt: str
    image_paths: Tuple[str, ...] = ()
    key: str = ""


@dataclass
class BatchResult:
    job: QueryJob
    result: Optional[QueryResult] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def parse_answer(text: str) -> Tuple[str, bool]:
    """Text after the last ANSWER: marker; else the last non-empty line, flagged"""
    matches = ANSWER_MARKER.findall(text or "")
    if matches:
        return matches[-1].strip(), False
    lines = [line.strip() for line in (text or "").splitlines() if line.strip()]
    logger.warning("Response has no ANSWER: line; falling back to its last line")
    return (lines[-1] if lines else ""), True


def _read_images(image_paths: Sequence[str]) -> List[Tuple[str, bytes]]:
    images = []
    for path in image_paths:
        try:
            with open(path, "rb") as f:
                images.append((path, f.read()))
        except FileNotFoundError:
            raise MissingFileError(f"image not found: {path}")
    return images


def cache_key(model: str, prompt: str, images: Sequence[bytes]) -> str:
    """Content hash over model name, prompt bytes and image bytes"""
    material = {
        "model": model,
        "prompt": prompt,
        "images": [hashlib.sha256(data).hexdigest() for data in images],
    }
    return hashlib.sha256(json.dumps(material, sort_keys=True).encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed response files; writes are atomic"""

    def __init__(self, cache_dir: str):
        self.cache_dir = cache_dir
        os.makedirs(cache_dir, exist_ok=True)

    def _path(self, key: str) -> str:
        return os.path.join(self.cache_dir, f"{key}.json")

    def get(self, key: str) -> Optional[QueryResult]:
        try:
            with open(self._path(key), "r", encoding="utf-8") as f:
                data = json.load(f)
        except (FileNotFoundError, json.JSONDecodeError):
            return None
        return QueryResult(**{**data, "cached": True})

    def put(self, key: str, result: QueryResult):
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump({**result.to_dict(), "cached": False}, f, sort_keys=True)
        os.replace(tmp, self._path(key))


class MLLMClient:
    """Chat-completions client with our own retry policy (SDK retries disabled)"""

    def __init__(self, config: QueryConfig, api_key: Optional[str] = None):
        self.config = config
        api_key = api_key or os.getenv(config.api_key_env)
        if not api_key:
            raise AuthError(f"environment variable {config.api_key_env} is not set")
        self.client = OpenAI(api_key=api_key, base_url=config.endpoint, max_retries=0, timeout=config.timeout)

    def build_messages(self, prompt: str, images: Sequence[Tuple[str, bytes]]) -> List[Dict]:
        content = [{"type": "text", "text": prompt}]
        for path, data in images:
            mime = MIME_TYPES.get(os.path.splitext(path)[1].lower(), "image/png")
            encoded = base64.b64encode(data).decode("ascii")
            content.append({"type": "image_url", "image_url": {"url": f"data:{mime};base64,{encoded}"}})
        return [{"role": "user", "content": content}]

    def _send(self, messages: List[Dict]):
        kwargs = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        if self.config.extra:
            kwargs["extra_body"] = dict(sorted(self.config.extra.items()))
        return self.client.chat.completions.create(**kwargs)

    def _send_with_retry(self, messages: List[Dict]) -> Tuple[object, int]:
        attempts = [0]

        def attempt():
            attempts[0] += 1
            try:
                return self._send(messages)
            except RETRYABLE as e:
                logger.warning(f"Attempt {attempts[0]}/{self.config.max_attempts} failed: {e}")
                raise

        retryer = Retrying(
            stop_max_attempt_number=self.config.max_attempts,
            wait_exponential_multiplier=self.config.backoff_base * 500.0,
            wait_exponential_max=60000,
            retry_on_exception=lambda e: isinstance(e, RETRYABLE),
        )
        try:
            return retryer.call(attempt), attempts[0]
        except (openai.AuthenticationError, openai.PermissionDeniedError) as e:
            raise AuthError(f"endpoint rejected credentials: {e}")
        except RETRYABLE as e:
            raise RetriesExhaustedError(f"request failed: {e}", attempts[0])
        except openai.APIStatusError as e:
            raise RequestRejectedError(f"endpoint rejected request ({e.status_code}): {e}")
        except (openai.APIResponseValidationError, ValueError) as e:
            raise MalformedResponseError(f"unreadable response: {e}")
        except openai.OpenAIError as e:
            raise NetworkError(f"chat request failed: {e}")

    def query(self, prompt: str, image_paths: Sequence[str] = ()) -> QueryResult:
        if len(image_paths) > self.config.max_images:
            raise InvalidInputError(f"{len(image_paths)} images exceed max_images={self.config.max_images}")
        images = _read_images(image_paths)
        response, attempts = self._send_with_retry(self.build_messages(prompt, images))
        try:
            text = response.choices[0].message.content
        except (AttributeError, IndexError, TypeError) as e:
            raise MalformedResponseError(f"response has no message content: {e}")
        if not isinstance(text, str):
            raise MalformedResponseError("response message content is not text")
        usage = response.usage.model_dump() if getattr(response, "usage", None) is not None else {}
        answer, warning = parse_answer(text)
        logger.info(f"Query answered after {attempts} attempt(s): {answer!r}")
        return QueryResult(text, answer, warning, usage, attempts)

    def cached_query(self, prompt: str, image_paths: Sequence[str], cache: Optional[ResponseCache]) -> QueryResult:
        if cache is None:
            return self.query(prompt, image_paths)
        key = cache_key(self.config.model, prompt, [data for _, data in _read_images(image_paths)])
        hit = cache.get(key)
        if hit is not None:
            logger.debug(f"Cache hit {key[:12]}")
            return hit
        result = self.query(prompt, image_paths)
        cache.put(key, result)
        return result


def batch_query(
    client: MLLMClient,
    jobs: Sequence[QueryJob],
    limit: int = 4,
    cache_dir: Optional[str] = None,
) -> List[BatchResult]:
    """Run jobs with at most `limit` requests in flight; results in submission order

    A failing job records its error and never aborts the rest of the batch.
    """
    if limit < 1:
        raise InvalidInputError(f"concurrency limit must be >= 1, got {limit}")
    cache = ResponseCache(cache_dir) if cache_dir else None

    def run(job: QueryJob) -> BatchResult:
        try:
            return BatchResult(job, client.cached_query(job.prompt, job.image_paths, cache))
        except GR3DError as e:
            logger.error(f"Job {job.key or '?'} failed: {e}")
            return BatchResult(job, error=f"{type(e).__name__}: {e}")

    with ThreadPoolExecutor(max_workers=limit) as pool:
        results = list(pool.map(run, jobs))
    failed = sum(1 for r in results if not r.ok)
    cached = sum(1 for r in results if r.ok and r.result.cached)
    logger.info(f"Batch done: {len(results)} jobs, {cached} cached, {failed} failed")
    return results
