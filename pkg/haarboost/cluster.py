"""
This module provides the distributed training roles: master, sub-master
and worker.

Roles talk over TCP with newline-delimited JSON messages. The master owns
the weights and the dataset; it broadcasts the normalized weights of
every round, waits for one BEST reply per child (a barrier), keeps the
reply with the smallest (error, feature index) and updates the weights
itself. Sub-masters relay the weights to their workers and reduce the
workers' replies with the same order. Workers scan their feature range
with the multi-core engine.

Every node loads the dataset locally from a shared reference and proves
it has the same bytes through a content hash.

Failures stop the whole job: the node that detects a problem sends an
ERROR to every peer it knows and raises.
"""

import json
import logging
import multiprocessing
import os
import queue
import selectors
import socket
import time
from dataclasses import dataclass, field

import numpy as np
import psutil

from . import boosting
from . import config
from . import dataset as dataset_
from . import engine
from . import error
from . import features
from . import perfmodel

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

#: The fields of every message type, besides "type".
MESSAGE_FIELDS = {
    "HELLO": ("node_id", "role"),
    "ASSIGN": ("start", "stop", "dataset", "dataset_hash", "window"),
    "WEIGHTS": ("round", "weights"),
    "BEST": ("round", "feature_index", "theta", "polarity", "error",
             "elapsed"),
    "MODEL": ("model",),
    "ERROR": ("node_id", "message"),
}

ROLES = ("master", "submaster", "worker")


@dataclass(frozen=True)
class ClusterMessage:

    """
    One protocol message.

    On the wire a message is a single line of UTF-8 JSON terminated by
    ``\\n``. Floats are written in their shortest round-trip form, so
    64-bit weights and thresholds arrive unchanged.

    Args:
        type (str): One of the keys of :data:`MESSAGE_FIELDS`.
        fields (dict): Exactly the fields of that type.
    """

    type: str
    fields: dict

    def __post_init__(self):
        expected = MESSAGE_FIELDS.get(self.type)
        if expected is None:
            raise error.ProtocolError(
                "Unknown message type {!r}".format(self.type)
            )
        if set(self.fields) != set(expected):
            raise error.ProtocolError(
                "{} message expects fields {}, got {}".format(
                    self.type, sorted(expected), sorted(self.fields)
                )
            )

    def __getitem__(self, name):
        return self.fields[name]

    def encode(self):
        """Return the framed wire representation."""
        document = {"type": self.type}
        document.update(self.fields)
        try:
            line = json.dumps(document, separators=(",", ":"),
                              allow_nan=False)
        except ValueError as e:
            raise error.ProtocolError(
                "Can't encode {} message: {}".format(self.type, e)
            )
        return line.encode("utf-8") + b"\n"

    @classmethod
    def decode(cls, line):
        """
        Parse one framed line.

        Raises:
            ProtocolError: If the line is not a JSON object with a known
                type and exactly its fields, or if it carries NaN or
                Infinity.
        """
        try:
            document = json.loads(line.decode("utf-8"),
                                  parse_constant=_reject_constant)
        except (UnicodeDecodeError, ValueError) as e:
            raise error.ProtocolError("Malformed message: {}".format(e))
        if not isinstance(document, dict) or "type" not in document:
            raise error.ProtocolError("Message without a type field")
        kind = document.pop("type")
        return cls(kind, document)


def _reject_constant(name):
    raise ValueError("non-finite number {} is not allowed".format(name))


def hello(node_id, role):
    return ClusterMessage("HELLO", {"node_id": node_id, "role": role})


def assign(feature_range, ref, dataset_hash, window):
    return ClusterMessage("ASSIGN", {
        "start": feature_range.start,
        "stop": feature_range.stop,
        "dataset": ref.to_dict(),
        "dataset_hash": dataset_hash,
        "window": window,
    })


def weights_message(weights):
    return ClusterMessage("WEIGHTS", {
        "round": weights.round,
        "weights": weights.w.tolist(),
    })


def best_message(round_, weak, elapsed):
    return ClusterMessage("BEST", {
        "round": round_,
        "feature_index": weak.feature_index,
        "theta": weak.theta,
        "polarity": weak.polarity,
        "error": weak.error,
        "elapsed": elapsed,
    })


def model_message(sc):
    return ClusterMessage("MODEL", {"model": sc.to_dict()})


def error_message(node_id, message):
    return ClusterMessage("ERROR", {"node_id": node_id, "message": message})


def weak_of(message):
    """Return the :class:`WeakClassifier` carried by a BEST message."""
    return boosting.WeakClassifier(
        int(message["feature_index"]), float(message["theta"]),
        int(message["polarity"]), float(message["error"]),
    )


def parse_endpoint(endpoint):
    """
    Split a ``host:port`` string.

    Returns:
        tuple: ``(host, port)``.
    """
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(
            "Endpoint must look like host:port, got {!r}".format(endpoint)
        )
    return host, int(port)


class Channel:

    """
    A framed message connection to one peer.

    Args:
        sock (socket.socket): A connected stream socket.
        peer (str, optional): The peer's node id, once known.
    """

    def __init__(self, sock, peer=None):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock = sock
        self.peer = peer
        self._buffer = bytearray()

    def __repr__(self):
        return "Channel(peer={!r})".format(self.peer)

    def send(self, message):
        """Send one message."""
        self.send_bytes(message.encode())

    def send_bytes(self, data):
        self.sock.settimeout(config.TIMEOUT)
        try:
            self.sock.sendall(data)
        except OSError as e:
            raise error.ConnectionError(
                "connection to {} lost: {}".format(self.peer, e)
            )

    def pop(self):
        """Return the next buffered message, or None."""
        end = self._buffer.find(b"\n")
        if end < 0:
            return None
        line = bytes(self._buffer[:end])
        del self._buffer[:end + 1]
        return ClusterMessage.decode(line)

    def fill(self, timeout=None):
        """
        Receive available bytes into the buffer.

        Raises:
            ConnectionError: If the peer closed the connection.
            TimeoutError: If nothing arrived within `timeout`.
        """
        self.sock.settimeout(timeout)
        try:
            data = self.sock.recv(1 << 16)
        except BlockingIOError:
            return
        except socket.timeout:
            raise error.TimeoutError(
                "no message from {} within {} seconds"
                .format(self.peer, timeout)
            )
        except OSError as e:
            raise error.ConnectionError(
                "connection to {} lost: {}".format(self.peer, e)
            )
        if not data:
            raise error.ConnectionError(
                "connection to {} lost: peer closed the connection"
                .format(self.peer)
            )
        self._buffer.extend(data)

    def recv(self, timeout):
        """
        Return the next message, waiting at most `timeout` seconds.
        """
        deadline = time.monotonic() + timeout
        while True:
            message = self.pop()
            if message is not None:
                return message
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise error.TimeoutError(
                    "no message from {} within {} seconds"
                    .format(self.peer, timeout)
                )
            self.fill(remaining)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def connect(endpoint, timeout=None):
    """
    Connect to a parent, retrying until `timeout` expires.

    Args:
        endpoint (str): The parent's ``host:port``.
        timeout (float, optional): Seconds to keep trying.

    Returns:
        Channel: The connection.

    Raises:
        TimeoutError: If no connection was established in time.
    """
    timeout = config.TIMEOUT if timeout is None else timeout
    host, port = parse_endpoint(endpoint)
    deadline = time.monotonic() + timeout
    while True:
        remaining = deadline - time.monotonic()
        try:
            sock = socket.create_connection((host, port),
                                            timeout=max(remaining, 0.1))
        except OSError as e:
            if time.monotonic() + 0.1 >= deadline:
                raise error.TimeoutError(
                    "couldn't connect to {} within {} seconds: {}"
                    .format(endpoint, timeout, e)
                )
            time.sleep(0.1)
            continue
        log.debug("Connected to {}".format(endpoint))
        return Channel(sock, peer=endpoint)


def listen(endpoint):
    """Bind a listening socket; port 0 picks a free port."""
    host, port = parse_endpoint(endpoint)
    return socket.create_server((host, port), backlog=64)


def endpoint_of(sock):
    """Return the ``host:port`` a listening socket is bound to."""
    host, port = sock.getsockname()[:2]
    return "{}:{}".format(host, port)


def accept_children(listener, expected, role, node_id, timeout=None):
    """
    Accept `expected` children that greet with a HELLO of `role`.

    Returns:
        list: The channels, sorted by the children's node ids.

    Raises:
        TimeoutError: If not all children connected in time; the message
            names the missing count.
        ProtocolError: If a child greets with another role or a duplicate
            node id.
    """
    timeout = config.TIMEOUT if timeout is None else timeout
    deadline = time.monotonic() + timeout
    children, greeted = [], 0
    try:
        while greeted < expected:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise socket.timeout()
            listener.settimeout(remaining)
            sock, address = listener.accept()
            channel = Channel(sock, peer="{}:{}".format(*address[:2]))
            children.append(channel)
            message = channel.recv(max(deadline - time.monotonic(), 0.1))
            if message.type != "HELLO":
                raise error.ProtocolError(
                    "expected HELLO from {}, got {}"
                    .format(channel.peer, message.type), node_id,
                )
            if message["role"] != role:
                raise error.ProtocolError(
                    "expected a {} child, {} greeted as {}".format(
                        role, message["node_id"], message["role"]
                    ), node_id,
                )
            if any(c.peer == message["node_id"] for c in children):
                raise error.ProtocolError(
                    "duplicate node id {!r}".format(message["node_id"]),
                    node_id,
                )
            channel.peer = message["node_id"]
            greeted += 1
            log.info("{} child {} connected".format(node_id, channel.peer))
    except (socket.timeout, error.TimeoutError):
        _close_all(children)
        raise error.TimeoutError(
            "timed out after {} seconds waiting for children: {} of {} "
            "connected ({} missing)".format(
                timeout, greeted, expected, expected - greeted
            ), node_id,
        )
    except error.HaarBoostError:
        _close_all(children)
        raise
    return sorted(children, key=lambda c: c.peer)


def _close_all(channels):
    for channel in channels:
        channel.close()


def _broadcast_error(channels, node_id, message):
    """Send an ERROR to every channel, ignoring dead connections."""
    for channel in channels:
        try:
            channel.send(error_message(node_id, message))
        except error.ConnectionError:
            pass


@dataclass
class Reply:

    """A BEST reply and the time it was received."""

    channel: Channel
    message: ClusterMessage
    arrival: float


def gather(channels, round_, node_id, timeout=None):
    """
    Wait for exactly one BEST of round `round_` from every channel.

    Returns:
        list: :class:`Reply` objects in channel order.

    Raises:
        RoundMismatchError: If a BEST of another round arrives.
        JobAbortedError: If a child reports an ERROR.
        ConnectionError: If a child disconnects.
        TimeoutError: If the round does not complete in time.
    """
    timeout = config.ROUND_TIMEOUT if timeout is None else timeout
    deadline = time.monotonic() + timeout
    replies = {}
    with selectors.DefaultSelector() as selector:
        for channel in channels:
            selector.register(channel.sock, selectors.EVENT_READ, channel)
        while True:
            for channel in channels:
                message = channel.pop()
                if message is None:
                    continue
                if channel in replies:
                    raise error.ProtocolError(
                        "second reply from {} in round {}"
                        .format(channel.peer, round_), node_id,
                    )
                _check_reply(message, channel, round_, node_id)
                replies[channel] = Reply(channel, message,
                                         time.perf_counter())
            if len(replies) == len(channels):
                break
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                missing = [c.peer for c in channels if c not in replies]
                raise error.TimeoutError(
                    "round {} timed out waiting for {}"
                    .format(round_, ", ".join(missing)), node_id,
                )
            for key, _ in selector.select(remaining):
                try:
                    key.data.fill(0)
                except error.TimeoutError:
                    continue
                except error.ConnectionError as e:
                    raise error.ConnectionError(
                        "{} in round {}".format(e, round_), node_id
                    )
    return [replies[channel] for channel in channels]


def _check_reply(message, channel, round_, node_id):
    if message.type == "ERROR":
        raise error.JobAbortedError(
            "{} reported: {}".format(message["node_id"], message["message"]),
            node_id,
        )
    if message.type != "BEST":
        raise error.ProtocolError(
            "expected BEST from {}, got {}".format(channel.peer, message.type),
            node_id,
        )
    if message["round"] != round_:
        raise error.RoundMismatchError(
            "stale round: BEST of round {} from {} during round {}".format(
                message["round"], channel.peer, round_
            ), node_id,
        )


@dataclass(frozen=True)
class Topology:

    """
    The shape of the reduction tree.

    Args:
        levels (int): 1 (workers attach to the master) or 2 (workers
            attach to sub-masters).
        children (int): Children of the master: workers for one level,
            sub-masters for two levels.
        fanout (int): Workers per sub-master (two levels only).
    """

    levels: int = 1
    children: int = 5
    fanout: int = 1

    def __post_init__(self):
        if self.levels not in (1, 2):
            raise ValueError("Topology has one or two levels")
        if self.children < 1 or self.fanout < 1:
            raise ValueError("Topology needs at least one child per node")

    @classmethod
    def one_level(cls, workers=5):
        return cls(1, workers, 1)

    @classmethod
    def two_level(cls, submasters=5, fanout=1):
        return cls(2, submasters, fanout)

    @property
    def child_role(self):
        """str: The role of the master's children."""
        return "worker" if self.levels == 1 else "submaster"

    @property
    def workers(self):
        """int: The number of worker nodes."""
        return self.children * (self.fanout if self.levels == 2 else 1)

    def label(self):
        if self.levels == 1:
            return "one-level({})".format(self.children)
        return "two-level({},{})".format(self.children, self.fanout)


def master_partition(total, children, window=config.WINDOW):
    """
    Split the features among the master's children.

    Five children of a complete feature set get one feature type each,
    in canonical type order; any other layout gets balanced chunks.
    """
    if children == 5 and total == len(features.enumerate_features(window)):
        return engine.partition(total, engine.ByType(), window=window)
    return engine.partition(total, engine.ByChunk(children))


@dataclass
class RoundStat:

    """
    What one node measured in one round.

    Args:
        round (int): The round.
        seconds (float): Time from receiving the weights to replying (or,
            on the master, the whole round).
        overhead (dict): Per child, round trip minus the child's own
            reported time, in seconds.
    """

    round: int
    seconds: float
    overhead: dict = field(default_factory=dict)


@dataclass
class RoleReport:

    """
    The outcome of one role.

    Args:
        node_id (str): The node.
        kind (str): ``"master"``, ``"submaster"`` or ``"worker"``.
        rounds (list): One :class:`RoundStat` per completed round.
        upload_seconds (float): Time spent loading data and uploading
            features.
    """

    node_id: str
    kind: str
    rounds: list = field(default_factory=list)
    upload_seconds: float = 0.0

    def average_overhead(self):
        """Return the mean overhead in seconds per child."""
        totals = {}
        for stat in self.rounds:
            for child, seconds in stat.overhead.items():
                totals.setdefault(child, []).append(seconds)
        return {child: sum(values) / len(values)
                for child, values in sorted(totals.items())}


class _ChildrenExecutor:

    """
    Stump selection by broadcasting weights to children and reducing
    their replies; plugs into :func:`boosting.train` on the master.
    """

    def __init__(self, children, node_id, round_timeout):
        self.children = children
        self.node_id = node_id
        self.round_timeout = round_timeout
        self.reduce_seconds = 0.0
        self.overheads = []

    def select(self, weights):
        data = weights_message(weights).encode()
        sent = {}
        for channel in self.children:
            sent[channel] = time.perf_counter()
            channel.send_bytes(data)
        replies = gather(self.children, weights.round, self.node_id,
                         self.round_timeout)
        start = time.perf_counter()
        best = boosting.select_min([weak_of(r.message) for r in replies])
        self.reduce_seconds = time.perf_counter() - start
        self.overheads.append({
            r.channel.peer: (r.arrival - sent[r.channel])
            - float(r.message["elapsed"])
            for r in replies
        })
        return best


class Master:

    """
    The root of the reduction tree.

    The listening socket is bound on construction, so :attr:`endpoint`
    is known before :meth:`run` blocks.

    Args:
        topology (Topology): Expected children and their role.
        dataset_ref (DatasetRef): The dataset every node loads.
        rounds (int): Number of boosting rounds.
        listen_endpoint (str): ``host:port`` to listen on.
        feature_count (int, optional): Restrict training to this many
            leading features.
        node_id (str, optional): The master's name.
        timeout (float, optional): Handshake timeout in seconds.
        round_timeout (float, optional): Per-round timeout in seconds.
        callback (callable, optional): Passed to :func:`boosting.train`.
    """

    kind = "master"

    def __init__(self, topology, dataset_ref, rounds, listen_endpoint,
                 feature_count=None, node_id="master", timeout=None,
                 round_timeout=None, callback=None):
        self.topology = topology
        self.dataset_ref = dataset_ref
        self.rounds = rounds
        self.feature_count = feature_count
        self.node_id = node_id
        self.timeout = config.TIMEOUT if timeout is None else timeout
        self.round_timeout = (config.ROUND_TIMEOUT if round_timeout is None
                              else round_timeout)
        self.callback = callback
        self.report = RoleReport(node_id, self.kind)
        self.listener = listen(listen_endpoint)
        self.endpoint = endpoint_of(self.listener)
        log.info("{} listening on {}".format(node_id, self.endpoint))

    def run(self):
        """
        Run the job to completion.

        Returns:
            StrongClassifier: The trained model, also sent to all nodes.
        """
        children = []
        try:
            start = time.perf_counter()
            data = self.dataset_ref.resolve()
            fset = features.enumerate_features(data.window)
            total = self.feature_count or len(fset)
            groups = master_partition(total, self.topology.children,
                                      data.window).groups
            self.report.upload_seconds = time.perf_counter() - start

            children = accept_children(
                self.listener, self.topology.children,
                self.topology.child_role, self.node_id, self.timeout,
            )
            for channel, group in zip(children, groups):
                channel.send(assign(group, self.dataset_ref,
                                    data.content_hash, data.window))
                log.debug("Assigned features [{}, {}) to {}".format(
                    group.start, group.stop, channel.peer
                ))

            executor = _ChildrenExecutor(children, self.node_id,
                                         self.round_timeout)
            model = boosting.train(data, self.rounds, executor,
                                   callback=self._record(executor))
            message = model_message(model).encode()
            for channel in children:
                channel.send_bytes(message)
            log.info("{} finished {} rounds".format(self.node_id,
                                                    self.rounds))
            return model
        except error.HaarBoostError as e:
            _broadcast_error(children, self.node_id, str(e))
            if isinstance(e, error.ClusterError) and e.node_id is None:
                e.node_id = self.node_id
            raise
        finally:
            _close_all(children)
            self.listener.close()

    def _record(self, executor):
        def callback(record, timing):
            self.report.rounds.append(RoundStat(
                timing.round, timing.total, executor.overheads[-1]
            ))
            if self.callback is not None:
                self.callback(record, timing)
        return callback


class SubMaster:

    """
    A relay between the master and a group of workers.

    Args:
        parent_endpoint (str): The master's ``host:port``.
        listen_endpoint (str): ``host:port`` to listen on for workers.
        expected_workers (int): Number of workers to wait for.
        node_id (str, optional): The sub-master's name.
        timeout (float, optional): Handshake timeout in seconds.
        round_timeout (float, optional): Per-round timeout in seconds.
    """

    kind = "submaster"

    def __init__(self, parent_endpoint, listen_endpoint, expected_workers,
                 node_id=None, timeout=None, round_timeout=None):
        self.parent_endpoint = parent_endpoint
        self.expected_workers = expected_workers
        self.node_id = node_id or "submaster-{}".format(os.getpid())
        self.timeout = config.TIMEOUT if timeout is None else timeout
        self.round_timeout = (config.ROUND_TIMEOUT if round_timeout is None
                              else round_timeout)
        self.report = RoleReport(self.node_id, self.kind)
        self.listener = listen(listen_endpoint)
        self.endpoint = endpoint_of(self.listener)
        log.info("{} listening on {}".format(self.node_id, self.endpoint))

    def run(self):
        """
        Relay the job until the master sends the model.

        Returns:
            RoleReport: Per-round timings and per-worker overheads.
        """
        parent, workers = None, []
        try:
            parent = connect(self.parent_endpoint, self.timeout)
            parent.send(hello(self.node_id, self.kind))
            message = _expect(parent, "ASSIGN", self.timeout, self.node_id)
            start, stop = message["start"], message["stop"]
            groups = engine.partition(
                stop - start, engine.ByChunk(self.expected_workers),
                offset=start,
            ).groups

            workers = accept_children(self.listener, self.expected_workers,
                                      "worker", self.node_id, self.timeout)
            for channel, group in zip(workers, groups):
                channel.send(assign(
                    group, dataset_.DatasetRef.from_dict(message["dataset"]),
                    message["dataset_hash"], message["window"],
                ))
            self._relay(parent, workers)
            return self.report
        except error.HaarBoostError as e:
            _broadcast_error([c for c in (parent, *workers) if c],
                             self.node_id, str(e))
            if isinstance(e, error.ClusterError) and e.node_id is None:
                e.node_id = self.node_id
            raise
        finally:
            _close_all([c for c in (parent, *workers) if c])
            self.listener.close()

    def _relay(self, parent, workers):
        expected = 1
        while True:
            message = parent.recv(self.round_timeout)
            if message.type == "MODEL":
                data = message.encode()
                for channel in workers:
                    channel.send_bytes(data)
                log.info("{} finished {} rounds"
                         .format(self.node_id, expected - 1))
                return
            _check_weights(message, expected, self.node_id)
            received = time.perf_counter()
            data = message.encode()
            sent = {}
            for channel in workers:
                sent[channel] = time.perf_counter()
                channel.send_bytes(data)
            replies = gather(workers, expected, self.node_id,
                             self.round_timeout)
            best = boosting.select_min([weak_of(r.message) for r in replies])
            elapsed = time.perf_counter() - received
            parent.send(best_message(expected, best, elapsed))
            self.report.rounds.append(RoundStat(expected, elapsed, {
                r.channel.peer: (r.arrival - sent[r.channel])
                - float(r.message["elapsed"])
                for r in replies
            }))
            expected += 1


class Worker:

    """
    A leaf that scans one feature range per round.

    Args:
        parent_endpoint (str): The parent's ``host:port``.
        dataset_ref (DatasetRef, optional): Overrides the reference sent
            in ASSIGN, e.g. a local copy of the corpus; the content hash
            must still match.
        worker_budget (int, optional): Threads of the local engine.
        node_id (str, optional): The worker's name.
        timeout (float, optional): Handshake timeout in seconds.
        round_timeout (float, optional): Per-round timeout in seconds.
    """

    kind = "worker"

    def __init__(self, parent_endpoint, dataset_ref=None, worker_budget=None,
                 node_id=None, timeout=None, round_timeout=None):
        self.parent_endpoint = parent_endpoint
        self.dataset_ref = dataset_ref
        self.worker_budget = worker_budget or config.WORKERS
        self.node_id = node_id or "worker-{}".format(os.getpid())
        self.timeout = config.TIMEOUT if timeout is None else timeout
        self.round_timeout = (config.ROUND_TIMEOUT if round_timeout is None
                              else round_timeout)
        self.report = RoleReport(self.node_id, self.kind)

    def run(self):
        """
        Serve rounds until the master sends the model.

        Returns:
            RoleReport: Per-round scan timings.
        """
        parent, executor = None, None
        try:
            parent = connect(self.parent_endpoint, self.timeout)
            parent.send(hello(self.node_id, self.kind))
            message = _expect(parent, "ASSIGN", self.timeout, self.node_id)
            executor = self._prepare(message)
            self._serve(parent, executor)
            return self.report
        except error.HaarBoostError as e:
            if parent is not None:
                _broadcast_error([parent], self.node_id, str(e))
            if isinstance(e, error.ClusterError) and e.node_id is None:
                e.node_id = self.node_id
            raise
        finally:
            if executor is not None:
                executor.close()
            if parent is not None:
                parent.close()

    def _prepare(self, message):
        start = time.perf_counter()
        ref = self.dataset_ref or dataset_.DatasetRef.from_dict(
            message["dataset"]
        )
        data = ref.resolve()
        if data.content_hash != message["dataset_hash"]:
            raise error.DatasetMismatchError(
                "dataset hash mismatch: local {} differs from the master's "
                "{}".format(data.content_hash[:12],
                            message["dataset_hash"][:12]),
                self.node_id,
            )
        if data.window != message["window"]:
            raise error.DatasetMismatchError(
                "window mismatch: local {} differs from the master's {}"
                .format(data.window, message["window"]), self.node_id,
            )
        first, stop = message["start"], message["stop"]
        budget = min(self.worker_budget, stop - first)
        executor = engine.ParallelExecutor(
            data,
            partition=engine.partition(stop - first, engine.ByChunk(budget),
                                       offset=first),
            worker_budget=budget,
        )
        self.report.upload_seconds = time.perf_counter() - start
        log.info("{} scanning features [{}, {}) on {} threads".format(
            self.node_id, first, stop, budget
        ))
        return executor

    def _serve(self, parent, executor):
        expected = 1
        while True:
            message = parent.recv(self.round_timeout)
            if message.type == "MODEL":
                log.info("{} finished {} rounds"
                         .format(self.node_id, expected - 1))
                return
            _check_weights(message, expected, self.node_id)
            start = time.perf_counter()
            weights = boosting.WeightVector(
                np.asarray(message["weights"], dtype=np.float64), expected
            )
            best = executor.select(weights)
            elapsed = time.perf_counter() - start
            parent.send(best_message(expected, best, elapsed))
            self.report.rounds.append(RoundStat(expected, elapsed))
            expected += 1


def _expect(channel, kind, timeout, node_id):
    """Receive one message of type `kind`; ERROR aborts the job."""
    message = channel.recv(timeout)
    if message.type == "ERROR":
        raise error.JobAbortedError(
            "{} reported: {}".format(message["node_id"], message["message"]),
            node_id,
        )
    if message.type != kind:
        raise error.ProtocolError(
            "expected {}, got {}".format(kind, message.type), node_id
        )
    return message


def _check_weights(message, expected, node_id):
    if message.type == "ERROR":
        raise error.JobAbortedError(
            "{} reported: {}".format(message["node_id"], message["message"]),
            node_id,
        )
    if message.type != "WEIGHTS":
        raise error.ProtocolError(
            "expected WEIGHTS, got {}".format(message.type), node_id
        )
    if message["round"] != expected:
        raise error.RoundMismatchError(
            "round mismatch: expected WEIGHTS of round {}, got round {}"
            .format(expected, message["round"]), node_id,
        )


def run_master(topology, dataset_ref, rounds, listen_endpoint, **kwargs):
    """
    Run the master role; see :class:`Master`.

    Returns:
        StrongClassifier: The trained model.
    """
    return Master(topology, dataset_ref, rounds, listen_endpoint,
                  **kwargs).run()


def run_submaster(master_endpoint, listen_endpoint, expected_workers,
                  **kwargs):
    """
    Run the sub-master role; see :class:`SubMaster`.

    Returns:
        RoleReport: The job status of the sub-master.
    """
    return SubMaster(master_endpoint, listen_endpoint, expected_workers,
                     **kwargs).run()


def run_worker(parent_endpoint, dataset_ref=None, **kwargs):
    """
    Run the worker role; see :class:`Worker`.

    Returns:
        RoleReport: The job status of the worker.
    """
    return Worker(parent_endpoint, dataset_ref, **kwargs).run()


def _role_main(kind, kwargs, results, debug):
    """Entry point of a simulated-cluster role process."""
    if debug:
        config.DEBUG = True
        config.configure_logging()
    node_id = kwargs.get("node_id")
    try:
        if kind == "master":
            role = Master(**kwargs)
        elif kind == "submaster":
            role = SubMaster(**kwargs)
        else:
            role = Worker(**kwargs)
        results.put(("ready", role.node_id, getattr(role, "endpoint", None)))
        outcome = role.run()
    except Exception as e:
        results.put(("failed", node_id, "{}: {}".format(type(e).__name__, e)))
        return
    model = outcome.to_dict() if kind == "master" else None
    results.put(("done", role.node_id, (role.report, model)))


class LocalCluster:

    """
    All roles of a topology as local processes on loopback endpoints.

    Processes are started with the "spawn" method; leftover processes
    are terminated when the cluster is closed.

    Args:
        topology (Topology): The tree to build.
        dataset_ref (DatasetRef): The dataset every node loads.
        rounds (int): Number of boosting rounds.
        feature_count (int, optional): Leading features to train on.
        worker_budget (int, optional): Threads per worker.
        timeout (float, optional): Handshake timeout in seconds.
        round_timeout (float, optional): Per-round timeout in seconds.
    """

    def __init__(self, topology, dataset_ref, rounds, feature_count=None,
                 worker_budget=1, timeout=None, round_timeout=None):
        self.topology = topology
        self.dataset_ref = dataset_ref
        self.rounds = rounds
        self.feature_count = feature_count
        self.worker_budget = worker_budget
        self.timeout = config.TIMEOUT if timeout is None else timeout
        self.round_timeout = (config.ROUND_TIMEOUT if round_timeout is None
                              else round_timeout)
        self._context = multiprocessing.get_context("spawn")
        self._results = self._context.Queue()
        self._processes = {}
        self._finished = set()

    @property
    def pids(self):
        """dict: Process id of every started role, by node id."""
        return {node_id: process.pid
                for node_id, process in dict(self._processes).items()}

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _start(self, kind, **kwargs):
        kwargs.update(timeout=self.timeout, round_timeout=self.round_timeout)
        process = self._context.Process(
            target=_role_main,
            args=(kind, kwargs, self._results, config.DEBUG),
            name=kwargs["node_id"],
            daemon=True,
        )
        process.start()
        self._processes[kwargs["node_id"]] = process
        log.debug("Started {} {}, pid={}".format(kind, kwargs["node_id"],
                                                 process.pid))

    def _await_ready(self, count, deadline):
        endpoints = {}
        while len(endpoints) < count:
            status, node_id, payload = self._next_result(deadline)
            if status != "ready":
                raise error.ClusterError(
                    "{} failed during start-up: {}".format(node_id, payload)
                )
            endpoints[node_id] = payload
        return endpoints

    def _poll(self, interval):
        result = self._results.get(timeout=interval)
        if result[0] != "ready":
            self._finished.add(result[1])
        return result

    def _exited(self):
        for node_id, process in self._processes.items():
            if node_id not in self._finished and process.exitcode is not None:
                return node_id
        return None

    def _next_result(self, deadline):
        """
        Wait for the next message of a role process.

        A process that exits without posting its outcome is reported as
        failed with its exit code.

        Raises:
            TimeoutError: If nothing arrives before `deadline`.
        """
        while True:
            try:
                return self._poll(config.POLL_INTERVAL)
            except queue.Empty:
                pass
            node_id = self._exited()
            if node_id is not None:
                # an outcome posted right before exiting is still queued
                try:
                    return self._poll(config.POLL_INTERVAL)
                except queue.Empty:
                    pass
                self._finished.add(node_id)
                exitcode = self._processes[node_id].exitcode
                log.debug("{} exited with code {}".format(node_id, exitcode))
                return ("failed", node_id,
                        "exited with code {}".format(exitcode))
            if time.monotonic() >= deadline:
                raise error.TimeoutError(
                    "simulated cluster stopped responding"
                )

    def run(self):
        """
        Run the job.

        Returns:
            tuple: The :class:`StrongClassifier` and the list of
            :class:`RoleReport` of every node (master first).

        Raises:
            ClusterError: If any role failed; the message carries the
                failing node's error.
        """
        topo = self.topology
        deadline = (time.monotonic() + self.timeout
                    + self.rounds * self.round_timeout)
        self._start("master", topology=topo, dataset_ref=self.dataset_ref,
                    rounds=self.rounds, listen_endpoint="127.0.0.1:0",
                    feature_count=self.feature_count, node_id="master")
        master_endpoint = self._await_ready(1, deadline)["master"]

        if topo.levels == 1:
            parents = {master_endpoint: topo.children}
            prefix = "worker-{}"
        else:
            for i in range(1, topo.children + 1):
                self._start("submaster", parent_endpoint=master_endpoint,
                            listen_endpoint="127.0.0.1:0",
                            expected_workers=topo.fanout,
                            node_id="submaster-{}".format(i))
            ready = self._await_ready(topo.children, deadline)
            parents = {ready["submaster-{}".format(i)]: topo.fanout
                       for i in range(1, topo.children + 1)}
            prefix = "worker-{}.{{}}"

        for p, (endpoint, count) in enumerate(parents.items(), start=1):
            for i in range(1, count + 1):
                node_id = (prefix.format(i) if topo.levels == 1
                           else prefix.format(p).format(i))
                self._start("worker", parent_endpoint=endpoint,
                            worker_budget=self.worker_budget,
                            node_id=node_id)
        self._await_ready(topo.workers, deadline)

        reports, model, failures = {}, None, []
        pending = set(self._processes)
        while pending:
            try:
                status, node_id, payload = self._next_result(deadline)
            except error.TimeoutError:
                if "master" in pending:
                    raise
                # the rest gets terminated on close
                failures.extend("[{}] did not finish".format(node_id)
                                for node_id in sorted(pending))
                break
            pending.discard(node_id)
            if node_id == "master":
                deadline = min(deadline, time.monotonic() + self.timeout)
            if status == "failed":
                failures.append("[{}] {}".format(node_id, payload))
                continue
            reports[node_id], document = payload
            if document is not None:
                model = boosting.StrongClassifier.from_dict(document)
        if failures:
            raise error.ClusterError("; ".join(failures))
        ordered = [reports.pop("master")] + [reports[k]
                                             for k in sorted(reports)]
        return model, ordered

    def close(self):
        """Terminate role processes that are still running."""
        for process in self._processes.values():
            _terminate_process(process.pid, self.timeout)
            process.join(timeout=1)
        self._processes = {}


def _terminate_process(pid, timeout):
    """
    Safely terminate a role process.

    Args:
        pid (int): The process id.
        timeout (float): Seconds to wait before killing the process.
    """
    try:
        proc = psutil.Process(pid)
        name = proc.name()
        proc.terminate()
    except (psutil.NoSuchProcess, psutil.AccessDenied):
        return
    msg = "role process {}, pid={}".format(name, pid)
    try:
        proc.wait(timeout=timeout)
    except psutil.TimeoutExpired:
        proc.kill()
        log.debug("Killed {}".format(msg))
    else:
        log.debug("Terminated {}".format(msg))


def simulate_local(topology, data, rounds, feature_count=None,
                   worker_budget=1, timeout=None, round_timeout=None):
    """
    Train with a complete cluster of local processes.

    Args:
        topology (Topology): The tree to build.
        data (Dataset or DatasetRef): The dataset; a :class:`Dataset` must
            carry the reference it was created from.
        rounds (int): Number of boosting rounds.
        feature_count (int, optional): Leading features to train on.
        worker_budget (int, optional): Threads per worker.
        timeout (float, optional): Handshake timeout in seconds.
        round_timeout (float, optional): Per-round timeout in seconds.

    Returns:
        tuple: The :class:`StrongClassifier` and the :class:`RoleReport`
        of every node, master first.
    """
    ref = data.ref if isinstance(data, dataset_.Dataset) else data
    if ref is None:
        raise error.ClusterError(
            "The dataset has no reference the role processes could load"
        )
    with LocalCluster(topology, ref, rounds, feature_count, worker_budget,
                      timeout, round_timeout) as cluster:
        return cluster.run()


def overhead_report(reports):
    """
    Render the average network overhead of every child, in milliseconds.

    Args:
        reports (list): :class:`RoleReport` objects; parents contribute
            one row per child.

    Returns:
        str: An aligned plain-text table.
    """
    rows = [
        (report.node_id, child, "{:.2f}".format(seconds * 1000))
        for report in reports
        for child, seconds in report.average_overhead().items()
    ]
    return perfmodel.format_rows(("parent", "child", "overhead (ms)"), rows)
