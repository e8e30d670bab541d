"""Sender/Receiver/Queue coordination protocol.

Senders register with a queue, push payloads and close when done. A
receiver's pull returns one of three outcomes:

* ``DATA``  – the head item, removed for exactly one receiver;
* ``WAIT``  – nothing queued but some sender is still connected;
* ``EMPTY`` – nothing queued and no sender connected: time to stop.

Pull checks items and senders and dequeues under one lock, which is what
makes ``EMPTY`` safe under concurrency.
"""
from __future__ import annotations

import base64
import enum
import inspect
import json
import socket
import socketserver
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from .engine import Poll, Timeout
from .errors import ProtocolError


class Outcome(enum.Enum):
    DATA = "data"
    WAIT = "wait"
    EMPTY = "empty"


@dataclass(frozen=True)
class PullResult:
    outcome: Outcome
    payload: Any = None
    sender: str | None = None

    @property
    def is_data(self) -> bool:
        return self.outcome is Outcome.DATA


WAIT = PullResult(Outcome.WAIT)
EMPTY = PullResult(Outcome.EMPTY)


class TaskQueue:
    """Multi-producer multi-consumer queue with explicit sender lifecycle.

    FIFO order is kept per sender; interleaving across senders follows push
    order.
    """

    def __init__(self, queue_id: str = "queue"):
        self.queue_id = queue_id
        self._items: deque = deque()
        self._open: set[str] = set()
        self.registered: set[str] = set()
        self.closed: set[str] = set()
        self._lock = threading.Lock()
        self.pushed = 0
        self.delivered = 0
        self.peak_backlog = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    @property
    def open_senders(self) -> frozenset[str]:
        with self._lock:
            return frozenset(self._open)

    def sender_register(self, sender_id: str) -> None:
        with self._lock:
            if sender_id in self._open:
                raise ProtocolError(f"{self.queue_id}: sender {sender_id!r} is already connected")
            self._open.add(sender_id)
            self.registered.add(sender_id)
            self.closed.discard(sender_id)

    def push(self, sender_id: str, payload) -> None:
        with self._lock:
            if sender_id not in self._open:
                raise ProtocolError(f"{self.queue_id}: push from unconnected sender {sender_id!r}")
            self._items.append((sender_id, payload))
            self.pushed += 1
            self.peak_backlog = max(self.peak_backlog, len(self._items))

    def sender_close(self, sender_id: str) -> None:
        with self._lock:
            if sender_id not in self._open:
                raise ProtocolError(f"{self.queue_id}: close from unconnected sender {sender_id!r}")
            self._open.remove(sender_id)
            self.closed.add(sender_id)

    def pull(self, receiver_id: str | None = None) -> PullResult:
        with self._lock:
            if self._items:
                sender, payload = self._items.popleft()
                self.delivered += 1
                return PullResult(Outcome.DATA, payload, sender)
            return WAIT if self._open else EMPTY


@dataclass
class ReceiveReport:
    receiver_id: str
    processed: int = 0
    failed: int = 0
    waits: int = 0
    terminated: str | None = None
    errors: list[str] = field(default_factory=list)

    @property
    def delivered(self) -> int:
        return self.processed + self.failed


def receiver(queue, receiver_id: str, handler: Callable, poll_interval: float = 1.0):
    """Pull-process loop as a process generator; returns a ReceiveReport.

    ``handler`` is called with each payload. If it returns a generator, that
    generator is run to completion inside this process (so a handler may
    itself yield ``Timeout``/``Acquire``). A handler exception marks the item
    failed and the loop carries on.
    """
    report = ReceiveReport(receiver_id)
    while True:
        res = queue.pull(receiver_id)
        if res.outcome is Outcome.DATA:
            try:
                out = handler(res.payload)
                if inspect.isgenerator(out):
                    yield from out
            except Exception as exc:
                report.failed += 1
                report.errors.append(f"{type(exc).__name__}: {exc}")
            else:
                report.processed += 1
        elif res.outcome is Outcome.WAIT:
            report.waits += 1
            yield Poll(poll_interval)
        else:
            report.terminated = "empty"
            return report


def receive_loop(queue, receiver_id: str, handler: Callable, poll_interval: float = 1.0,
                 sleep: Callable[[float], None] = time.sleep) -> ReceiveReport:
    """Blocking form of :func:`receiver` for plain threads."""
    gen = receiver(queue, receiver_id, handler, poll_interval)
    try:
        cmd = next(gen)
        while True:
            if isinstance(cmd, Poll):
                sleep(cmd.interval)
            elif isinstance(cmd, Timeout):
                sleep(cmd.delay)
            else:
                raise ProtocolError(f"receive_loop cannot service {cmd!r}")
            cmd = next(gen)
    except StopIteration as stop:
        return stop.value


# --- wire format -----------------------------------------------------------
# Frames are a 4-byte big-endian length followed by a UTF-8 JSON object.
# Requests: {"type": "register"|"push"|"close"|"pull", "sender"|"receiver": id,
#            "payload": base64}
# Replies:  {"type": "ack"|"data"|"wait"|"empty"|"error", "payload"?, "message"?}

_LEN = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024


def encode_frame(obj: dict) -> bytes:
    body = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode()
    return _LEN.pack(len(body)) + body


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise ProtocolError("connection closed mid-frame")
            return None
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> dict | None:
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (length,) = _LEN.unpack(head)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds limit")
    body = _recv_exact(sock, length)
    if body is None:
        raise ProtocolError("connection closed mid-frame")
    try:
        obj = json.loads(body)
    except ValueError as exc:
        raise ProtocolError(f"malformed frame: {exc}") from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolError("frame must be a JSON object with a 'type'")
    return obj


def _b64(payload: bytes) -> str:
    return base64.b64encode(payload).decode("ascii")


def handle_request(queue: TaskQueue, req: dict) -> dict:
    kind = req.get("type")
    try:
        if kind == "register":
            queue.sender_register(req["sender"])
        elif kind == "push":
            queue.push(req["sender"], base64.b64decode(req.get("payload", "")))
        elif kind == "close":
            queue.sender_close(req["sender"])
        elif kind == "pull":
            res = queue.pull(req.get("receiver"))
            if res.is_data:
                payload = res.payload if isinstance(res.payload, bytes) else str(res.payload).encode()
                return {"type": "data", "payload": _b64(payload)}
            return {"type": res.outcome.value}
        else:
            return {"type": "error", "message": f"unknown request type {kind!r}"}
    except KeyError as exc:
        return {"type": "error", "message": f"missing field {exc}"}
    except ProtocolError as exc:
        return {"type": "error", "message": str(exc)}
    return {"type": "ack"}


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        while True:
            try:
                req = read_frame(self.request)
            except ProtocolError as exc:
                self.request.sendall(encode_frame({"type": "error", "message": str(exc)}))
                return
            if req is None:
                return
            self.request.sendall(encode_frame(handle_request(self.server.queue, req)))


class QueueServer(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    """Serves one :class:`TaskQueue` on a local stream socket."""

    daemon_threads = True

    def __init__(self, path, queue: TaskQueue):
        self.queue = queue
        super().__init__(str(path), _Handler)

    def start(self) -> threading.Thread:
        th = threading.Thread(target=self.serve_forever, daemon=True)
        th.start()
        return th


class RemoteQueue:
    """Client with the same surface as :class:`TaskQueue`; payloads are bytes."""

    def __init__(self, path, queue_id: str = "remote"):
        self.queue_id = queue_id
        self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._sock.connect(str(path))
        self._lock = threading.Lock()

    def close(self) -> None:
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _call(self, req: dict) -> dict:
        with self._lock:
            self._sock.sendall(encode_frame(req))
            reply = read_frame(self._sock)
        if reply is None:
            raise ProtocolError("server closed the connection")
        if reply["type"] == "error":
            raise ProtocolError(reply.get("message", "remote error"))
        return reply

    def sender_register(self, sender_id: str) -> None:
        self._call({"type": "register", "sender": sender_id})

    def push(self, sender_id: str, payload: bytes) -> None:
        self._call({"type": "push", "sender": sender_id, "payload": _b64(payload)})

    def sender_close(self, sender_id: str) -> None:
        self._call({"type": "close", "sender": sender_id})

    def pull(self, receiver_id: str | None = None) -> PullResult:
        reply = self._call({"type": "pull", "receiver": receiver_id})
        if reply["type"] == "data":
            return PullResult(Outcome.DATA, base64.b64decode(reply["payload"]))
        return WAIT if reply["type"] == "wait" else EMPTY
