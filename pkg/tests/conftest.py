from __future__ import annotations

import io
import json
import socket
import sys
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))  # oracles, shims

SHIM = str(Path(__file__).parent / "shims" / "stdio_shim.py")


def shim_command(*args: str) -> list[str]:
    return [sys.executable, SHIM, *args]


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def png_data_url(arr: np.ndarray) -> str:
    """Encode pixels with the reference encoder (PIL), not the library."""
    import base64

    modes = {1: "L", 3: "RGB", 4: "RGBA"}
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    img = Image.fromarray(arr if arr.shape[2] > 1 else arr[:, :, 0], modes[arr.shape[2]])
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode()


def decode_png_data_url(url: str) -> np.ndarray:
    """Decode with the reference decoder (PIL), not the library."""
    import base64

    assert url.startswith("data:image/png;base64,")
    raw = base64.b64decode(url.split(",", 1)[1])
    return np.asarray(Image.open(io.BytesIO(raw)), dtype=np.uint8)


def post_json(url: str, doc: dict) -> tuple[int, dict]:
    body = json.dumps(doc).encode("utf-8")
    req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def get_raw(url: str) -> tuple[int, bytes]:
    try:
        with urllib.request.urlopen(url) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260810)
