import base64
import json
import shlex
import subprocess

import numpy as np
import requests

from app.core.errors import EncoderFailure

from ..models import HIDDEN_DIM


def pack_embedding(name: str, tokens: np.ndarray) -> dict:
    """Wire form of a raw token block: shape + base64 little-endian float32 payload."""
    array = np.ascontiguousarray(tokens, dtype="<f4")
    return {
        "name": name,
        "shape": list(array.shape),
        "dtype": "<f4",
        "payload": base64.b64encode(array.tobytes()).decode("ascii"),
    }


def unpack_embedding(body: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in body["shape"])
        raw = base64.b64decode(body["payload"])
        return np.frombuffer(raw, dtype=np.dtype(body.get("dtype", "<f4"))).reshape(shape).astype(np.float32)
    except (KeyError, TypeError, ValueError) as e:
        raise EncoderFailure(f"malformed encoder response: {e}") from e


class HTTPTextEncoder:
    """
    Client for a text encoder served over HTTP.

    The endpoint receives ``{"sentence": <utf-8 text>}`` and answers with the
    JSON produced by :func:`pack_embedding`.
    """

    def __init__(self, url: str, hidden_dim: int = HIDDEN_DIM, max_tokens: int = 77, timeout: float = 30.0):
        self.url = url
        self.hidden_dim = hidden_dim
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.name = f"http:{url}"

    def encode(self, sentence: str) -> np.ndarray:
        try:
            response = requests.post(self.url, json={"sentence": sentence}, timeout=self.timeout)
            response.raise_for_status()  # 4xx / 5xx
        except requests.exceptions.HTTPError as errh:
            raise EncoderFailure(f"HTTP error from encoder: {errh}") from errh
        except requests.exceptions.ConnectionError as errc:
            raise EncoderFailure(f"error connecting to encoder: {errc}") from errc
        except requests.exceptions.Timeout as errt:
            raise EncoderFailure(f"encoder timed out: {errt}") from errt
        except requests.exceptions.RequestException as err:
            raise EncoderFailure(f"encoder request failed: {err}") from err
        return unpack_embedding(response.json())


class SubprocessTextEncoder:
    """Runs ``command`` once per sentence: sentence on stdin, packed JSON on stdout."""

    def __init__(self, command: str, hidden_dim: int = HIDDEN_DIM, max_tokens: int = 77, timeout: float = 30.0):
        self.command = shlex.split(command)
        self.hidden_dim = hidden_dim
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.name = f"subprocess:{self.command[0]}"

    def encode(self, sentence: str) -> np.ndarray:
        try:
            result = subprocess.run(
                self.command,
                input=sentence.encode("utf-8"),
                capture_output=True,
                timeout=self.timeout,
                check=True,
            )
        except (OSError, subprocess.SubprocessError) as e:
            raise EncoderFailure(f"encoder command {self.command[0]!r} failed: {e}") from e
        try:
            body = json.loads(result.stdout)
        except json.JSONDecodeError as e:
            raise EncoderFailure("encoder command produced invalid JSON") from e
        return unpack_embedding(body)
