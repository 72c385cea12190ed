"""HTTP JSON service over a frozen model stack.

Endpoints: GET /health, GET /labels, POST /generate, POST /edit,
POST /tokenize, POST /detokenize. Errors use the envelope
{"error": {"code", "message"}}; validation failures name the offending
field path. Model state is immutable after startup; every request owns
its own rng, so concurrent requests match serial execution.
"""

from __future__ import annotations

import json
import secrets
import threading
import uuid
from dataclasses import dataclass, field, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .data import FrameMatrix, DOWNSAMPLE
from .decoding import DecodeConfig, MotionGenerator
from .editing import EDIT_TASKS, EditRequest, edit
from .tokenizer import rvq_decode

BOUNDED_CONCURRENCY_DEFAULT = 4


class ValidationFailure(ValueError):
    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ServiceState:
    generator: MotionGenerator
    decode_defaults: DecodeConfig = field(default_factory=DecodeConfig)
    version: str = __version__

    @classmethod
    def load(cls, ckpt_dir: str | Path, decode_defaults: DecodeConfig | None = None) -> "ServiceState":
        return cls(
            generator=MotionGenerator.load(ckpt_dir),
            decode_defaults=decode_defaults or DecodeConfig(),
        )


def _dump(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _expect(body: dict, path: str, key: str, kind, required: bool = True, default=None):
    if key not in body:
        if required:
            raise ValidationFailure(f"{path}.{key}", "missing required field")
        return default
    value = body[key]
    if kind is int and isinstance(value, bool):
        raise ValidationFailure(f"{path}.{key}", "expected integer")
    if not isinstance(value, kind):
        raise ValidationFailure(f"{path}.{key}", f"expected {kind.__name__}")
    return value


def _frames_array(raw, path: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw or not all(isinstance(r, list) for r in raw):
        raise ValidationFailure(path, "expected a non-empty list of frame rows")
    try:
        arr = np.asarray(raw, dtype=np.float32)
    except (TypeError, ValueError):
        raise ValidationFailure(path, "frames must be numeric") from None
    if arr.ndim != 2:
        raise ValidationFailure(path, "frame rows must have equal length")
    return arr


def _decode_config(state: ServiceState, body: dict, seed: int) -> DecodeConfig:
    overrides = body.get("cfg", {})
    if not isinstance(overrides, dict):
        raise ValidationFailure("body.cfg", "expected object")
    known = set(DecodeConfig.__dataclass_fields__)
    unknown = set(overrides) - known
    if unknown:
        raise ValidationFailure(f"body.cfg.{sorted(unknown)[0]}", "unknown decode option")
    try:
        return replace(state.decode_defaults, seed=seed, **overrides)
    except (TypeError, ValueError) as exc:
        raise ValidationFailure("body.cfg", str(exc)) from None


def _seed_of(body: dict) -> int:
    seed = _expect(body, "body", "seed", int, required=False)
    if seed is None:
        seed = secrets.randbits(32)
    return seed


class _Api:
    """Request handlers, kept separate from the HTTP plumbing for testing."""

    def __init__(self, state: ServiceState) -> None:
        self.state = state

    def health(self) -> dict:
        return {"status": "ok", "version": self.state.version}

    def labels(self) -> dict:
        return {
            "labels": [
                {"id": i, "name": name} for i, name in enumerate(self.state.generator.labels)
            ]
        }

    def generate(self, body: dict) -> dict:
        gen = self.state.generator
        label = _expect(body, "body", "label", int)
        if not 0 <= label < len(gen.labels):
            raise ValidationFailure("body.label", f"must lie in [0, {len(gen.labels)})")
        length = _expect(body, "body", "length", int, required=False)
        t_target = None
        if length is not None:
            if length < DOWNSAMPLE or length % DOWNSAMPLE != 0:
                raise ValidationFailure(
                    "body.length", f"must be a positive multiple of {DOWNSAMPLE} frames"
                )
            t_target = length // DOWNSAMPLE
        cfg = _decode_config(self.state, body, _seed_of(body))
        frames, trace = gen.generate(label, cfg, t_target=t_target)
        base = trace.passes[-1].tokens_after if trace.passes else trace.iter1_tokens
        confidences = trace.passes[-1].confidences_after if trace.passes else trace.confidences
        return {
            "frames": [[float(v) for v in row] for row in frames.frames],
            "tokens": [int(tok) for tok in base],
            "length": frames.n_frames,
            "confidences": [float(c) for c in confidences],
        }

    def edit(self, body: dict) -> dict:
        gen = self.state.generator
        label = _expect(body, "body", "label", int)
        if not 0 <= label < len(gen.labels):
            raise ValidationFailure("body.label", f"must lie in [0, {len(gen.labels)})")
        task = _expect(body, "body", "task", str)
        if task not in EDIT_TASKS:
            raise ValidationFailure("body.task", f"must be one of {list(EDIT_TASKS)}")
        has_frames = "frames" in body
        has_tokens = "tokens" in body
        if has_frames == has_tokens:
            raise ValidationFailure("body", "provide exactly one of frames/tokens")
        frames = _frames_array(body["frames"], "body.frames") if has_frames else None
        tokens = None
        if has_tokens:
            raw = body["tokens"]
            if not isinstance(raw, list) or not raw:
                raise ValidationFailure("body.tokens", "expected a non-empty list")
            try:
                tokens = np.asarray(raw, dtype=np.int64)
            except (TypeError, ValueError):
                raise ValidationFailure("body.tokens", "token ids must be integers") from None
        spans = body.get("spans", [])
        if not isinstance(spans, list) or not all(
            isinstance(s, list) and len(s) == 2 for s in spans
        ):
            raise ValidationFailure("body.spans", "expected a list of [start, end) frame pairs")
        cfg = _decode_config(self.state, body, _seed_of(body))
        try:
            request = EditRequest(
                label=label,
                task=task,
                frames=frames,
                tokens=tokens,
                spans=tuple((int(a), int(b)) for a, b in spans),
                decode=cfg,
                fps=gen.fps,
            )
            result = edit(gen, request)
        except ValueError as exc:
            raise ValidationFailure("body", str(exc)) from None
        return {
            "frames": [[float(v) for v in row] for row in result.frames.frames],
            "tokens": [int(tok) for tok in result.grid[0]],
            "preserved_positions": [int(p) for p in result.preserved_positions],
        }

    def tokenize(self, body: dict) -> dict:
        gen = self.state.generator
        frames = _frames_array(body.get("frames"), "body.frames")
        if frames.shape[0] < DOWNSAMPLE:
            raise ValidationFailure("body.frames", f"need at least {DOWNSAMPLE} frames")
        from .data import normalize, pad_to_stride

        motion = pad_to_stride(normalize(FrameMatrix(frames, fps=gen.fps), gen.stats))
        grid, _ = gen.tokenizer.tokenize(torch.from_numpy(motion.frames))
        return {"token_grid": grid.tolist()}

    def detokenize(self, body: dict) -> dict:
        gen = self.state.generator
        raw = body.get("token_grid")
        if not isinstance(raw, list) or not raw:
            raise ValidationFailure("body.token_grid", "expected a non-empty 2-d list")
        try:
            grid = np.asarray(raw, dtype=np.int64)
        except (TypeError, ValueError):
            raise ValidationFailure("body.token_grid", "token ids must be integers") from None
        if grid.ndim != 2:
            raise ValidationFailure("body.token_grid", "expected a (layers, t) grid")
        try:
            frames = gen.frames_from_grid(grid)
        except ValueError as exc:
            raise ValidationFailure("body.token_grid", str(exc)) from None
        return {"frames": [[float(v) for v in row] for row in frames.frames]}


def make_server(
    state: ServiceState,
    host: str = "127.0.0.1",
    port: int = 0,
    max_concurrent: int = BOUNDED_CONCURRENCY_DEFAULT,
) -> ThreadingHTTPServer:
    """Build (without starting) the HTTP server; port 0 picks a free port."""
    api = _Api(state)
    gate = threading.Semaphore(max_concurrent)

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _reply(self, status: int, payload: dict) -> None:
            raw = _dump(payload)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def _error(self, status: int, code: str, message: str) -> None:
            self._reply(status, {"error": {"code": code, "message": message}})

        def do_GET(self) -> None:
            with gate:
                if self.path == "/health":
                    self._reply(200, api.health())
                elif self.path == "/labels":
                    self._reply(200, api.labels())
                else:
                    self._error(404, "not_found", f"unknown path {self.path}")

        def do_POST(self) -> None:
            with gate:
                routes = {
                    "/generate": api.generate,
                    "/edit": api.edit,
                    "/tokenize": api.tokenize,
                    "/detokenize": api.detokenize,
                }
                handler = routes.get(self.path)
                if handler is None:
                    self._error(404, "not_found", f"unknown path {self.path}")
                    return
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    body = json.loads(self.rfile.read(length) or b"{}")
                    if not isinstance(body, dict):
                        raise ValidationFailure("body", "expected a JSON object")
                except json.JSONDecodeError as exc:
                    self._error(400, "bad_request", f"body: invalid JSON ({exc.msg})")
                    return
                except ValidationFailure as exc:
                    self._error(400, "bad_request", str(exc))
                    return
                try:
                    self._reply(200, handler(body))
                except ValidationFailure as exc:
                    self._error(400, "bad_request", str(exc))
                except Exception:
                    self._error(500, "internal", f"internal failure id={uuid.uuid4().hex[:12]}")

    return ThreadingHTTPServer((host, port), Handler)


def http_serve(
    state: ServiceState,
    host: str = "127.0.0.1",
    port: int = 8722,
    max_concurrent: int = BOUNDED_CONCURRENCY_DEFAULT,
) -> None:
    server = make_server(state, host, port, max_concurrent)
    print(f"serving on http://{server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
