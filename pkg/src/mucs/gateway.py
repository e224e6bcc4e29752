"""Access to classification-capable chat models.

Prompts are rendered from a :class:`TaskTemplate`, sent over the common JSON
chat-completion protocol, and the reply is parsed into a :class:`ProbVector`.
Successful responses are cached in an append-only JSON-lines file keyed by
(model, top_p, rendered prompt), so reruns are reproducible and free.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Sequence, Union

from mucs.metrics import ProbVector, ProbVectorError

log = logging.getLogger(__name__)

CHARS_PER_TOKEN = 4


class ParseError(ValueError):
    pass


class PromptTooLong(ValueError):
    pass


class PredictFailed(RuntimeError):
    def __init__(self, item, raw_text, message=None):
        self.item = item
        self.raw_text = raw_text
        super().__init__(message or f"could not parse a distribution for {item!r}: {raw_text[:200]!r}")


class MissingCredentials(ValueError):
    pass


class TransportError(RuntimeError):
    def __init__(self, attempts, cause=None):
        self.attempts = attempts
        self.cause = cause
        super().__init__(f"transport failed after {attempts} attempt(s): {cause}")


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_name: str
    api_key_env: str = "OPENAI_API_KEY"
    top_p: float = 1.0
    max_context_tokens: int = 16385
    request_timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    backoff: float = 1.0

    def __post_init__(self):
        if not self.base_url:
            raise ValueError("base_url must not be empty")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_in_flight < 1 or self.max_context_tokens < 1 or self.max_retries < 0:
            raise ValueError("max_in_flight and max_context_tokens must be positive, max_retries >= 0")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelEndpoint":
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# templates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskTemplate:
    task_id: str
    class_names: tuple
    instruction: str
    examples: tuple = ()   # (prompt, class id) pairs; empty means zero-shot
    kind: str = "text"

    def __post_init__(self):
        names = tuple(self.class_names)
        if len(names) < 2:
            raise ValueError("a task needs at least two classes")
        if len({n.lower() for n in names}) != len(names):
            raise ValueError(f"class names must be unique (case-insensitive): {names}")
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "examples", tuple((str(p), int(c)) for p, c in self.examples))

    def schema(self) -> str:
        return "{" + ", ".join(f'"{n}": <probability>' for n in self.class_names) + "}"

    def render(self, prompt: str) -> str:
        parts = [self.instruction.strip(), "", "Classes: " + ", ".join(self.class_names)]
        if self.examples:
            parts += ["", "Examples:"]
            # one exemplar block per class, in class-id order
            for text, label in sorted(self.examples, key=lambda e: e[1]):
                onehot = {n: (1.0 if i == label else 0.0) for i, n in enumerate(self.class_names)}
                parts += [f"Input:\n{text}", f"Output: {json.dumps(onehot)}", ""]
        else:
            parts.append("")
        parts += [
            f"Input:\n{prompt}",
            "",
            "Answer with one JSON object that maps every class name to the probability that the input "
            "belongs to it. The probabilities must sum to 1.",
            f"Output schema: {self.schema()}",
        ]
        return "\n".join(parts)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "class_names": list(self.class_names),
            "instruction": self.instruction,
            "examples": [list(e) for e in self.examples],
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskTemplate":
        d = dict(d)
        d["class_names"] = tuple(d["class_names"])
        d["examples"] = tuple(tuple(e) for e in d.get("examples", ()))
        return cls(**d)


BUILTIN_TEMPLATES: Dict[str, TaskTemplate] = {
    "sentiment": TaskTemplate(
        "sentiment",
        ("negative", "neutral", "positive"),
        "Classify the sentiment of the following movie review as negative, neutral or positive.",
    ),
    "clone_detection": TaskTemplate(
        "clone_detection",
        ("no_clone", "clone"),
        "Decide whether the two Java code snippets below are clones of each other. Give a probability "
        "score from 0 to 1 for each outcome, where no_clone means they are not clones and clone means "
        "they are.",
        kind="code",
    ),
    "problem_classification": TaskTemplate(
        "problem_classification",
        ("problem_0", "problem_1", "problem_2", "problem_3", "problem_4"),
        "Classify which programming problem the following Java solution solves.",
        kind="code",
    ),
    "tagmynews": TaskTemplate(
        "tagmynews",
        ("business", "entertainment", "health", "sci_tech", "sport", "us", "world"),
        "Classify the topic of the following news article.",
    ),
}


def render_prompt(template: TaskTemplate, item) -> str:
    kind = getattr(item, "kind", None)
    if kind is not None and kind != template.kind:
        raise ValueError(f"{template.task_id} expects {template.kind} inputs, got a {kind} item")
    prompt = item.prompt if hasattr(item, "prompt") else str(item)
    return template.render(prompt)


def resolve_template(source: Union[str, Mapping, TaskTemplate]) -> TaskTemplate:
    if isinstance(source, TaskTemplate):
        return source
    if isinstance(source, str):
        if source not in BUILTIN_TEMPLATES:
            raise ValueError(f"unknown task template {source!r}; built-ins: {', '.join(BUILTIN_TEMPLATES)}")
        return BUILTIN_TEMPLATES[source]
    return TaskTemplate.from_dict(source)


# --------------------------------------------------------------------------
# reply parsing
# --------------------------------------------------------------------------

_NUMBER_RE = re.compile(r"(?<![\w.])[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?(?![\w.])")


def extract_json_object(text: str) -> Optional[str]:
    """Return the first balanced ``{...}`` block in ``text``, string-aware."""
    start = text.find("{")
    while start >= 0:
        depth = 0
        in_str = False
        esc = False
        for i in range(start, len(text)):
            c = text[i]
            if in_str:
                if esc:
                    esc = False
                elif c == "\\":
                    esc = True
                elif c == '"':
                    in_str = False
            elif c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    return text[start: i + 1]
        start = text.find("{", start + 1)
    return None


def parse_reply(text: str, class_names: Sequence[str]) -> ProbVector:
    names = tuple(class_names)
    index = {n.lower(): i for i, n in enumerate(names)}
    block = extract_json_object(text)
    if block is not None:
        try:
            obj = json.loads(block)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON object: {exc}") from exc
        if not isinstance(obj, dict):
            raise ParseError("reply JSON is not an object")
        probs = [0.0] * len(names)
        for key, value in obj.items():
            i = index.get(str(key).strip().lower())
            if i is None:
                raise ParseError(f"reply names unknown class {key!r}")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParseError(f"probability for {key!r} is not a number: {value!r}")
            probs[i] = float(value)
    elif len(names) == 2:
        nums = _NUMBER_RE.findall(text)
        if len(nums) != 1:
            raise ParseError(f"expected a JSON object or a single score, found {len(nums)} numbers")
        s = float(nums[0])
        if not 0.0 <= s <= 1.0:
            raise ParseError(f"score {s} outside [0, 1]")
        probs = [1.0 - s, s]
    else:
        raise ParseError("no JSON object in reply")
    try:
        return ProbVector(probs, names)
    except ProbVectorError as exc:
        raise ParseError(str(exc)) from exc


def format_reminder(attempt: int, template: TaskTemplate) -> str:
    return (
        f"Reminder {attempt}: your previous answer could not be used. Reply with exactly one JSON object "
        f"and nothing else. Use exactly these keys: {', '.join(template.class_names)}. Every value must be a "
        f"number between 0 and 1 and the values must sum to 1. Schema: {template.schema()}"
    )


# --------------------------------------------------------------------------
# cache
# --------------------------------------------------------------------------

def cache_key(model_name: str, top_p: float, rendered: str) -> str:
    payload = json.dumps([model_name, float(top_p), rendered], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class CacheEntry:
    key: str
    raw: str
    probs: list
    timestamp: float
    prompt_tokens: int
    completion_tokens: int
    model_name: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)


class ResponseCache:
    """In-memory response cache, optionally backed by a JSON-lines file."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._entries: Dict[str, CacheEntry] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            self._load()

    def _load(self):
        lines = 0
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                lines += 1
                try:
                    entry = CacheEntry(**json.loads(line))
                except (json.JSONDecodeError, TypeError) as exc:
                    log.warning("%s:%d: skipping unreadable cache line (%s)", self.path, lineno, exc)
                    continue
                self._entries[entry.key] = entry
        if lines != len(self._entries):
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                for entry in self._entries.values():
                    fh.write(entry.to_json() + "\n")
            os.replace(tmp, self.path)

    def get(self, key: str) -> Optional[CacheEntry]:
        return self._entries.get(key)

    def put(self, entry: CacheEntry):
        with self._lock:
            self._entries[entry.key] = entry
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(entry.to_json() + "\n")

    def entries(self):
        return list(self._entries.values())

    def __len__(self):
        return len(self._entries)


def load_prices(source) -> Dict[str, dict]:
    if source is None:
        return {}
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return json.load(fh)
    return dict(source)


def entry_cost(prices: Mapping[str, Mapping], model_name: str, prompt_tokens: int, completion_tokens: int) -> float:
    table = prices.get(model_name)
    if not table:
        return 0.0
    return (prompt_tokens / 1000.0) * float(table.get("input_per_1k", 0.0)) + \
           (completion_tokens / 1000.0) * float(table.get("output_per_1k", 0.0))


# --------------------------------------------------------------------------
# transports
# --------------------------------------------------------------------------

Transport = Callable[[dict], dict]


class HttpTransport:
    """POSTs chat-completion requests to ``{base_url}/chat/completions``."""

    def __init__(self, endpoint: ModelEndpoint, client=None):
        import httpx

        key = os.environ.get(endpoint.api_key_env)
        if not key:
            raise MissingCredentials(f"environment variable {endpoint.api_key_env} is not set")
        self.url = endpoint.base_url.rstrip("/") + "/chat/completions"
        self._headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        self._client = client or httpx.Client(timeout=endpoint.request_timeout)

    def __call__(self, request: dict) -> dict:
        resp = self._client.post(self.url, headers=self._headers, json=request)
        resp.raise_for_status()
        return resp.json()

    def close(self):
        self._client.close()


def _completion(text: str, request: dict) -> dict:
    prompt_chars = sum(len(m.get("content", "")) for m in request.get("messages", []))
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {
            "prompt_tokens": math.ceil(prompt_chars / CHARS_PER_TOKEN),
            "completion_tokens": math.ceil(len(text) / CHARS_PER_TOKEN),
        },
    }


class StubTransport:
    """Deterministic offline transport.

    ``replies`` is either a mapping from prompt text (the first user message)
    to a reply, or a callable ``f(prompt) -> reply``. A mapping value may be a
    list, in which case attempt ``i`` of a retry sequence gets element ``i``
    (the last element repeats). Unknown prompts get ``default`` or raise
    ``KeyError``, which the gateway treats as a transport failure.
    """

    def __init__(self, replies, default: Optional[str] = None):
        self.replies = replies
        self.default = default
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, request: dict) -> dict:
        with self._lock:
            self.calls += 1
        users = [m["content"] for m in request["messages"] if m["role"] == "user"]
        prompt, attempt = users[0], len(users) - 1
        if callable(self.replies):
            reply = self.replies(prompt)
        elif prompt in self.replies:
            reply = self.replies[prompt]
        elif self.default is not None:
            reply = self.default
        else:
            raise KeyError("stub has no reply for this prompt")
        if isinstance(reply, (list, tuple)):
            reply = reply[min(attempt, len(reply) - 1)]
        return _completion(reply, request)


# --------------------------------------------------------------------------
# gateway
# --------------------------------------------------------------------------

@dataclass
class GatewayStats:
    hits: int = 0
    misses: int = 0
    estimated_cost: float = 0.0
    transport_calls: int = 0
    failures: list = field(default_factory=list)


class Gateway:
    def __init__(self, endpoint: ModelEndpoint, transport: Optional[Transport] = None,
                 cache: Optional[ResponseCache] = None, prices=None, sleep=time.sleep):
        self.endpoint = endpoint
        self._transport = transport
        self.cache = cache if cache is not None else ResponseCache()
        self.prices = load_prices(prices)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(endpoint.max_in_flight)
        self._lock = threading.Lock()
        self._stats = GatewayStats()

    @property
    def transport(self) -> Transport:
        if self._transport is None:
            self._transport = HttpTransport(self.endpoint)
        return self._transport

    def _send(self, messages: list) -> dict:
        request = {"model": self.endpoint.model_name, "messages": messages, "top_p": self.endpoint.top_p}
        transport = self.transport
        last = None
        attempts = self.endpoint.max_retries + 1
        for attempt in range(attempts):
            try:
                with self._slots:
                    with self._lock:
                        self._stats.transport_calls += 1
                    response = transport(request)
                content = response["choices"][0]["message"]["content"]
                if not isinstance(content, str):
                    raise TypeError("message content is not a string")
                return response
            except Exception as exc:  # noqa: BLE001 - retried, then surfaced as TransportError
                last = exc
                log.debug("transport attempt %d/%d failed: %s", attempt + 1, attempts, exc)
                if attempt + 1 < attempts and self.endpoint.backoff > 0:
                    self._sleep(self.endpoint.backoff * 2 ** attempt)
        raise TransportError(attempts, last)

    def predict(self, template: TaskTemplate, prompt: str, item_id: Optional[str] = None) -> ProbVector:
        rendered = template.render(prompt)
        est = math.ceil(len(rendered) / CHARS_PER_TOKEN)
        if est > self.endpoint.max_context_tokens:
            raise PromptTooLong(f"prompt needs ~{est} tokens, limit is {self.endpoint.max_context_tokens}")
        key = cache_key(self.endpoint.model_name, self.endpoint.top_p, rendered)
        hit = self.cache.get(key)
        if hit is not None:
            with self._lock:
                self._stats.hits += 1
            return parse_reply(hit.raw, template.class_names)
        with self._lock:
            self._stats.misses += 1

        messages = [{"role": "user", "content": rendered}]
        prompt_tokens = completion_tokens = 0
        text = ""
        for attempt in range(self.endpoint.max_retries + 1):
            response = self._send(messages)
            text = response["choices"][0]["message"]["content"]
            usage = response.get("usage") or {}
            prompt_tokens += int(usage.get("prompt_tokens", math.ceil(
                sum(len(m["content"]) for m in messages) / CHARS_PER_TOKEN)))
            completion_tokens += int(usage.get("completion_tokens", math.ceil(len(text) / CHARS_PER_TOKEN)))
            try:
                probs = parse_reply(text, template.class_names)
            except ParseError as exc:
                log.debug("parse failure on attempt %d: %s", attempt + 1, exc)
                messages = messages + [
                    {"role": "assistant", "content": text},
                    {"role": "user", "content": format_reminder(attempt + 1, template)},
                ]
                continue
            cost = entry_cost(self.prices, self.endpoint.model_name, prompt_tokens, completion_tokens)
            with self._lock:
                self._stats.estimated_cost += cost
            self.cache.put(CacheEntry(key, text, probs.to_list(), time.time(), prompt_tokens, completion_tokens,
                                      self.endpoint.model_name))
            return probs
        cost = entry_cost(self.prices, self.endpoint.model_name, prompt_tokens, completion_tokens)
        with self._lock:
            self._stats.estimated_cost += cost
            self._stats.failures.append(item_id if item_id is not None else prompt[:80])
        raise PredictFailed(item_id if item_id is not None else prompt[:80], text)

    def predict_many(self, template: TaskTemplate, prompts: Sequence[str], item_ids=None, return_errors=False):
        """Predict a batch concurrently; at most ``max_in_flight`` requests await replies at once."""
        item_ids = list(item_ids) if item_ids is not None else [None] * len(prompts)

        def one(args):
            prompt, item_id = args
            try:
                return self.predict(template, prompt, item_id)
            except (PredictFailed, TransportError, PromptTooLong) as exc:
                if return_errors:
                    return exc
                raise

        with ThreadPoolExecutor(max_workers=self.endpoint.max_in_flight) as pool:
            return list(pool.map(one, zip(prompts, item_ids)))

    def model_fn(self, template: TaskTemplate) -> Callable[[str], ProbVector]:
        return lambda prompt: self.predict(template, prompt)

    def cache_stats(self) -> dict:
        with self._lock:
            return {
                "entries": len(self.cache),
                "hits": self._stats.hits,
                "misses": self._stats.misses,
                "estimated_cost": self._stats.estimated_cost,
            }

    @property
    def transport_calls(self) -> int:
        return self._stats.transport_calls
