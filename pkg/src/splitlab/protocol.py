"""Two-party split training as an explicit message exchange.

The client owns the features ``X`` and the bottom network; the server owns the
labels and the top network. Per step ``k`` the client sends ``H_k`` in a
FORWARD_ACT frame; the server answers with BACKWARD_GRAD carrying ``G_k`` and
a METRIC frame carrying the loss, then updates its own network. ``G_k`` is
always computed at the server weights *before* that update.

The server is built from its own network, labels and the shared batch
schedule only. It never receives the client object, ``X`` or client weights:
everything it learns arrives through :class:`WireMessage` values.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from splitlab import nn, rng
from splitlab.optim import Optimizer
from splitlab.transport import TransportClosed
from splitlab.wire import MsgType, WireError, WireMessage, encode_message


class ProtocolError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


# --------------------------------------------------------------------------
# batch schedule
# --------------------------------------------------------------------------


def batch_schedule(n: int, batch_size: int | None, steps: int, seed: int, start: int = 0) -> list[np.ndarray]:
    """Row indices used at steps ``start .. start+steps-1``.

    ``batch_size=None`` (or ``>= n``) means full batch in natural order.
    Mini-batches walk seeded per-epoch permutations; the final partial batch
    of an epoch is kept.
    """
    if n < 1:
        raise ValueError("empty dataset")
    if batch_size is None or batch_size >= n:
        return [np.arange(n) for _ in range(steps)]
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    per_epoch = -(-n // batch_size)
    out = []
    cache: dict[int, np.ndarray] = {}
    for k in range(start, start + steps):
        epoch, j = divmod(k, per_epoch)
        if epoch not in cache:
            cache.clear()
            cache[epoch] = rng.stream(seed, f"protocol.batches.{epoch}").permutation(n)
        out.append(cache[epoch][j * batch_size:(j + 1) * batch_size])
    return out


# --------------------------------------------------------------------------
# server behaviours
# --------------------------------------------------------------------------


class GradientResponder(Protocol):
    """A malicious server strategy: maps observed activations to a reply."""

    def respond(self, step: int, H: np.ndarray) -> tuple[np.ndarray, float]: ...


@dataclass
class ServerBehavior:
    """``honest`` | ``fake_gradient`` | ``fsha``.

    ``fake_gradient`` reads ``schedule``: a sequence of arrays indexed by step,
    or a callable ``(step, H) -> G``. ``fsha`` delegates to ``responder``.
    """

    mode: str = "honest"
    schedule: Sequence[np.ndarray] | Callable | None = None
    responder: GradientResponder | None = None

    def __post_init__(self):
        if self.mode not in ("honest", "fake_gradient", "fsha"):
            raise ValueError(f"unknown server mode {self.mode!r}")
        if self.mode == "fake_gradient" and self.schedule is None:
            raise ValueError("fake_gradient mode needs a schedule")
        if self.mode == "fsha" and self.responder is None:
            raise ValueError("fsha mode needs a responder")

    def fake(self, step: int, H: np.ndarray) -> np.ndarray:
        if callable(self.schedule):
            G = self.schedule(step, H)
        else:
            if step >= len(self.schedule):
                raise ProtocolError(f"fake gradient schedule has only {len(self.schedule)} entries", step)
            G = self.schedule[step]
        G = np.asarray(G, dtype=np.float64)
        if G.shape != H.shape:
            raise ProtocolError(f"fake gradient shape {G.shape} != activation shape {H.shape}", step)
        return G


# --------------------------------------------------------------------------
# parties
# --------------------------------------------------------------------------


def param_hash(net: nn.Network) -> str:
    h = hashlib.sha256()
    for p in net.get_params():
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()


class ClientParty:
    def __init__(self, net: nn.Network, X: np.ndarray, optimizer: Optimizer,
                 schedule: Callable[[int], np.ndarray],
                 perturb: Callable[[int, np.ndarray], np.ndarray] | None = None):
        self.net, self.X, self.optimizer = net, X, optimizer
        self.schedule = schedule
        self.perturb = perturb
        self._cache = None

    def forward(self, step: int) -> tuple[WireMessage, str]:
        snapshot = param_hash(self.net)
        H, self._cache = nn.forward(self.net, self.X[self.schedule(step)])
        if self.perturb is not None:
            H = self.perturb(step, H)
        if not np.all(np.isfinite(H)):
            raise ProtocolError("non-finite activation", step)
        if H.ndim != 2:
            raise ProtocolError(f"cut activations must be n x d, got shape {H.shape}", step)
        return WireMessage(MsgType.FORWARD_ACT, step, H), snapshot

    def apply(self, msg: WireMessage, step: int) -> None:
        if msg.msg_type != MsgType.BACKWARD_GRAD or msg.step != step:
            raise ProtocolError(f"expected BACKWARD_GRAD for step {step}, got {msg.msg_type.name}@{msg.step}", step)
        try:
            grads, _ = nn.backward(self.net, self._cache, msg.tensor, need_input_grad=False)
        except nn.ShapeError as e:
            raise ProtocolError(f"gradient shape mismatch: {e}", step) from None
        self._cache = None
        self.net.set_params(self.optimizer.step(self.net.get_params(), self.net.flat_grads(grads)))


class ServerParty:
    """Label-holding party. Sees the client only through messages."""

    def __init__(self, net: nn.Network, labels: np.ndarray, optimizer: Optimizer,
                 schedule: Callable[[int], np.ndarray], loss: str = "ce",
                 behavior: ServerBehavior | None = None):
        if loss not in ("ce", "mse"):
            raise ValueError(f"unknown loss {loss!r}")
        self.net, self.labels, self.optimizer = net, labels, optimizer
        self.schedule, self.loss = schedule, loss
        self.behavior = behavior or ServerBehavior()
        self._last_step = -1

    def _loss(self, out, y):
        return nn.loss_cross_entropy(out, y) if self.loss == "ce" else nn.loss_mse(out, y)

    def handle(self, msg: WireMessage) -> list[WireMessage]:
        if msg.msg_type == MsgType.HELLO:
            return [WireMessage(MsgType.HELLO, msg.step)]
        if msg.msg_type == MsgType.CLOSE:
            return [WireMessage(MsgType.CLOSE, msg.step)]
        if msg.msg_type != MsgType.FORWARD_ACT:
            raise ProtocolError(f"server cannot handle {msg.msg_type.name}", msg.step)
        k, H = msg.step, msg.tensor
        if k <= self._last_step:
            raise ProtocolError(f"step numbers must increase (last {self._last_step})", k)
        self._last_step = k
        if not np.all(np.isfinite(H)):
            raise ProtocolError("non-finite activation received", k)
        mode = self.behavior.mode
        if mode == "fsha":
            G, value = self.behavior.responder.respond(k, H)
            G = np.asarray(G, dtype=np.float64)
            if G.shape != H.shape:
                raise ProtocolError(f"responder gradient shape {G.shape} != {H.shape}", k)
        else:
            y = self.labels[self.schedule(k)]
            try:
                out, cache = nn.forward(self.net, H)
            except nn.ShapeError as e:
                raise ProtocolError(f"activation does not fit server network: {e}", k) from None
            value, g_out = self._loss(out, y)
            grads, G_true = nn.backward(self.net, cache, g_out)
            G = G_true if mode == "honest" else self.behavior.fake(k, H)
            self.net.set_params(self.optimizer.step(self.net.get_params(), self.net.flat_grads(grads)))
        return [WireMessage(MsgType.BACKWARD_GRAD, k, G), WireMessage.metric(k, value)]


# --------------------------------------------------------------------------
# session and trace
# --------------------------------------------------------------------------


@dataclass
class TraceRecord:
    step: int
    H: np.ndarray
    G: np.ndarray
    loss: float
    param_hash: str


@dataclass
class SplitSession:
    client_net: nn.Network
    server_net: nn.Network
    X: np.ndarray
    y: np.ndarray
    client_opt: Optimizer = field(default_factory=lambda: Optimizer("sgd", 0.1))
    server_opt: Optimizer = field(default_factory=lambda: Optimizer("sgd", 0.1))
    loss: str = "ce"
    batch_size: int | None = None
    seed: int = 0
    behavior: ServerBehavior = field(default_factory=ServerBehavior)
    dp_sigma: float = 0.0
    step: int = 0
    trace: list = field(default_factory=list)

    def __post_init__(self):
        self.X = nn.as_tensor(self.X, "client features")
        if len(self.X) != len(self.y):
            raise ValueError(f"{len(self.X)} feature rows but {len(self.y)} labels")
        h_shape = self.client_net.output_shape((1, *self.X.shape[1:]))
        if self.behavior.mode != "fsha":
            self.server_net.output_shape(h_shape)

    def copy(self) -> "SplitSession":
        import copy as _copy

        out = _copy.copy(self)
        out.client_net = self.client_net.copy()
        out.server_net = self.server_net.copy()
        out.client_opt = _copy.deepcopy(self.client_opt)
        out.server_opt = _copy.deepcopy(self.server_opt)
        out.trace = list(self.trace)
        return out

    def schedule_fn(self) -> Callable[[int], np.ndarray]:
        n, b, seed = len(self.X), self.batch_size, self.seed

        def at(step: int) -> np.ndarray:
            return batch_schedule(n, b, 1, seed, start=step)[0]

        return at

    def make_parties(self) -> tuple[ClientParty, ServerParty]:
        sched = self.schedule_fn()
        perturb = None
        if self.dp_sigma > 0:
            from splitlab.defenses import dp_perturb

            sigma, seed = self.dp_sigma, self.seed

            def perturb(step, H):
                return dp_perturb(H, sigma, rng.stream(seed, f"client.dp.{step}"))

        client = ClientParty(self.client_net, self.X, self.client_opt, sched, perturb)
        server = ServerParty(self.server_net, self.y, self.server_opt, sched, self.loss, self.behavior)
        return client, server

    def predict(self, X) -> np.ndarray:
        H, _ = nn.forward(self.client_net, X)
        out, _ = nn.forward(self.server_net, H)
        return out


def trace_bytes(trace: Sequence[TraceRecord]) -> bytes:
    """Canonical byte form of a trace: the frames as sent plus parameter hashes."""
    parts = []
    for r in trace:
        parts.append(encode_message(WireMessage(MsgType.FORWARD_ACT, r.step, r.H)))
        parts.append(encode_message(WireMessage(MsgType.BACKWARD_GRAD, r.step, r.G)))
        parts.append(encode_message(WireMessage.metric(r.step, r.loss)))
        parts.append(bytes.fromhex(r.param_hash))
    return b"".join(parts)


def _record(trace, fwd: WireMessage, bwd: WireMessage, metric: WireMessage, snapshot: str):
    if metric.msg_type != MsgType.METRIC or metric.step != fwd.step:
        raise ProtocolError(f"expected METRIC for step {fwd.step}", fwd.step)
    trace.append(TraceRecord(fwd.step, fwd.tensor, bwd.tensor, metric.value, snapshot))


def run_split_training(session: SplitSession, steps: int) -> tuple[SplitSession, list[TraceRecord]]:
    """Run ``steps`` protocol rounds with both parties in this thread.

    The input session is left untouched; the returned session carries the
    updated networks, optimizer states and the extended trace.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    s = session.copy()
    client, server = s.make_parties()
    new = []
    for k in range(s.step, s.step + steps):
        fwd, snapshot = client.forward(k)
        bwd, metric = server.handle(fwd)
        client.apply(bwd, k)
        _record(new, fwd, bwd, metric, snapshot)
    s.step += steps
    s.trace.extend(new)
    return s, new


def serve(server: ServerParty, endpoint) -> None:
    """Answer frames on ``endpoint`` until CLOSE; closes the endpoint on exit."""
    try:
        while True:
            msg = endpoint.recv()
            for reply in server.handle(msg):
                endpoint.send(reply)
            if msg.msg_type == MsgType.CLOSE:
                return
    finally:
        endpoint.close()


def drive_client(client: ClientParty, endpoint, start: int, steps: int) -> list[TraceRecord]:
    """Client half of the channeled protocol. Returns the new trace records."""
    trace: list[TraceRecord] = []
    k = start
    try:
        endpoint.send(WireMessage(MsgType.HELLO, start))
        hello = endpoint.recv()
        if hello.msg_type != MsgType.HELLO:
            raise ProtocolError(f"handshake got {hello.msg_type.name}", start)
        for k in range(start, start + steps):
            fwd, snapshot = client.forward(k)
            endpoint.send(fwd)
            bwd = endpoint.recv()
            metric = endpoint.recv()
            client.apply(bwd, k)
            _record(trace, fwd, bwd, metric, snapshot)
        endpoint.send(WireMessage(MsgType.CLOSE, start + steps))
        bye = endpoint.recv()
        if bye.msg_type != MsgType.CLOSE:
            raise ProtocolError(f"expected CLOSE, got {bye.msg_type.name}", start + steps)
    except (TransportClosed, WireError) as e:
        raise ProtocolError(f"transport failure: {e}", k) from None
    finally:
        endpoint.close()
    return trace


def run_split_training_channeled(session: SplitSession, steps: int, transport: str | Callable = "inproc"):
    """Same result as :func:`run_split_training`, with the server on its own thread.

    ``transport`` is ``"inproc"`` (in-memory frame queues), ``"socket"``
    (loopback TCP) or a zero-argument factory returning
    ``(client_endpoint, server_endpoint)``.
    """
    from splitlab import transport as tr

    if steps < 0:
        raise ValueError("steps must be non-negative")
    factory = {"inproc": tr.queue_pair, "socket": tr.socket_pair}.get(transport, transport)
    if not callable(factory):
        raise ValueError(f"unknown transport {transport!r}")
    s = session.copy()
    client, server = s.make_parties()
    c_end, s_end = factory()
    errors: list[BaseException] = []

    def _serve():
        try:
            serve(server, s_end)
        except BaseException as e:  # surfaced after join
            errors.append(e)

    t = threading.Thread(target=_serve, name="split-server", daemon=True)
    t.start()
    try:
        new = drive_client(client, c_end, s.step, steps)
    except ProtocolError as e:
        t.join(5)
        if errors:
            raise ProtocolError(f"server failed: {errors[0]}", e.step) from errors[0]
        raise
    t.join()
    if errors:
        raise ProtocolError(f"server failed: {errors[0]}")
    s.step += steps
    s.trace.extend(new)
    return s, new
