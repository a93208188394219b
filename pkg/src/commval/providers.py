"""Language-model providers.

Every provider exposes ``complete(prompt, *, model, temperature, top_p,
json_mode)`` and returns the raw response text. Transport failures surface as
:class:`~commval.errors.ProviderUnavailable`.

``HttpChatProvider`` talks to an OpenAI-compatible chat-completions endpoint.
``MockProvider`` and ``ScriptedProvider`` are deterministic stand-ins used by
the tests and the synthetic end-to-end run.
"""

from __future__ import annotations

import json
import os
import re
import urllib.error
import urllib.request
from typing import Callable, Sequence

from .errors import ProviderUnavailable

DEFAULT_API_BASE = "https://api.openai.com/v1"
API_BASE_ENV = "COMMVAL_API_BASE"
API_KEY_ENV = "COMMVAL_API_KEY"

TAG_RE = re.compile(r"\[\[(values:[^\]]*|N/A|malformed)\]\]", re.IGNORECASE)
KEYWORDS_LINE_RE = re.compile(r"^Keywords: (.*)$", re.MULTILINE)


class Provider:
    name = "base"

    def complete(self, prompt: str, *, model: str, temperature: float = 0.0, top_p: float = 1.0,
                 json_mode: bool = True) -> str:
        raise NotImplementedError


class HttpChatProvider(Provider):
    """OpenAI-compatible ``/chat/completions`` client.

    The base URL comes from ``$COMMVAL_API_BASE`` and the key from
    ``$COMMVAL_API_KEY`` (falling back to ``$OPENAI_API_KEY``) unless passed in.
    """

    name = "http"

    def __init__(self, api_base: str | None = None, api_key: str | None = None, timeout: float = 60.0):
        self.api_base = (api_base or os.environ.get(API_BASE_ENV) or DEFAULT_API_BASE).rstrip("/")
        self.api_key = api_key or os.environ.get(API_KEY_ENV) or os.environ.get("OPENAI_API_KEY")
        self.timeout = timeout

    def request_body(self, prompt: str, model: str, temperature: float, top_p: float, json_mode: bool) -> dict:
        body = {
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "top_p": top_p,
        }
        if json_mode:
            body["response_format"] = {"type": "json_object"}
        return body

    def complete(self, prompt, *, model, temperature=0.0, top_p=1.0, json_mode=True):
        data = json.dumps(self.request_body(prompt, model, temperature, top_p, json_mode)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(f"{self.api_base}/chat/completions", data=data, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            raise ProviderUnavailable(f"HTTP {exc.code} from {self.api_base}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise ProviderUnavailable(f"cannot reach {self.api_base}: {exc}") from exc
        except ValueError as exc:
            raise ProviderUnavailable(f"non-JSON reply from {self.api_base}") from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderUnavailable(f"unexpected reply shape from {self.api_base}") from exc


class MockProvider(Provider):
    """Answers from tags planted in the comment text.

    ``[[values: a, b]]`` yields those keywords, ``[[N/A]]`` yields N/A and
    ``[[malformed]]`` yields unparseable text on every attempt. The last tag in
    the prompt wins, which is the comment's tag under the default template.
    Untagged comments get N/A. Cluster-labeling prompts are answered with the
    first listed keyword.
    """

    name = "mock"

    def __init__(self):
        self.calls = 0

    def complete(self, prompt, *, model, temperature=0.0, top_p=1.0, json_mode=True):
        self.calls += 1
        if not json_mode:
            m = KEYWORDS_LINE_RE.search(prompt)
            return m.group(1).split(",")[0].strip() if m else "value"
        tags = TAG_RE.findall(prompt)
        if not tags:
            return json.dumps({"thinking": "no planted values", "answer": "N/A"})
        tag = tags[-1]
        if tag.lower() == "malformed":
            return "Sure! Here are the values: humor"
        if tag.upper() == "N/A":
            return json.dumps({"thinking": "this comment should have been downvoted", "answer": "N/A"})
        kws = [k.strip() for k in tag.split(":", 1)[1].split(",") if k.strip()]
        return json.dumps({"thinking": f"the comment shows {', '.join(kws)}", "answer": kws})


class ScriptedProvider(Provider):
    """Replays a fixed list of responses, or delegates to a callable.

    A response that is an exception instance is raised instead of returned.
    """

    name = "scripted"

    def __init__(self, script: Sequence[str | Exception] | Callable[[str], str]):
        self._fn = script if callable(script) else None
        self._queue = None if callable(script) else list(script)
        self.prompts: list[str] = []

    @property
    def calls(self) -> int:
        return len(self.prompts)

    def complete(self, prompt, *, model, temperature=0.0, top_p=1.0, json_mode=True):
        self.prompts.append(prompt)
        if self._fn is not None:
            out = self._fn(prompt)
        else:
            if not self._queue:
                raise ProviderUnavailable("scripted provider exhausted")
            out = self._queue.pop(0)
        if isinstance(out, Exception):
            raise out
        return out


def make_provider(name: str, **kwargs) -> Provider:
    if name == "http":
        return HttpChatProvider(**kwargs)
    if name == "mock":
        return MockProvider()
    raise ValueError(f"unknown provider {name!r} (expected 'http' or 'mock')")
