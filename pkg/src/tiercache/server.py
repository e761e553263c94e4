"""Line-based text protocol over TCP exposing get / batched-put / config / stats.

Commands (one per line, LF-terminated; an MPUT is followed by its item lines):

    GET <model_id> <user_id>
    MPUT <user_id> <n>          then n lines: <model_id> <stage> <dim> <hex>
    CONF <model_id> <direct_ttl_ms> <failover_ttl_ms>
    STATS

Replies:

    HIT D|F <age_ms> <dim> <hex>
    MISS
    OK <n>
    <key>=<value> ...           (single line, STATS)
    ERR <code> <message>

Enable flags ride the CONF TTLs: a zero TTL disables that tier. Embeddings
use the shared hex encoding (little-endian 32-bit floats). Each MPUT becomes
exactly one store batch. Malformed input gets an ERR and the connection
stays open; only an over-limit line closes it. The server clock is real time
(injectable for tests); simulation never goes through the server.
"""

from __future__ import annotations

import socketserver
import threading
import time
from typing import Callable, NamedTuple

from .config import ConfigRegistry
from .core import (
    CacheEntry,
    EmbeddingVector,
    ModelCacheConfig,
    ModelKey,
    Stage,
    Tier,
)
from .store import CacheStore

MAX_LINE_BYTES = 1_048_576  # 1 MiB per logical request line
MAX_MPUT_ITEMS = 4096

_WIRE_MODEL_TYPE = "default"  # MPUT items carry no model type


class ProtocolError(ValueError):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message

    def reply(self) -> str:
        return f"ERR {self.code} {self.message}"


class GetCommand(NamedTuple):
    model_id: int
    user_id: int

    def encode(self) -> str:
        return f"GET {self.model_id} {self.user_id}"


class MputCommand(NamedTuple):
    user_id: int
    count: int

    def encode(self) -> str:
        return f"MPUT {self.user_id} {self.count}"


class MputItem(NamedTuple):
    model_id: int
    stage: Stage
    embedding: EmbeddingVector

    def encode(self) -> str:
        return (f"{self.model_id} {self.stage.value} "
                f"{self.embedding.dim} {self.embedding.to_hex()}")


class ConfCommand(NamedTuple):
    model_id: int
    direct_ttl_ms: int
    failover_ttl_ms: int

    def encode(self) -> str:
        return f"CONF {self.model_id} {self.direct_ttl_ms} {self.failover_ttl_ms}"


class StatsCommand(NamedTuple):
    def encode(self) -> str:
        return "STATS"


Command = GetCommand | MputCommand | ConfCommand | StatsCommand


def _int_field(tokens: list[str], index: int, name: str, minimum: int = 0) -> int:
    token = tokens[index]
    try:
        value = int(token)
    except ValueError:
        raise ProtocolError("lexical",
                            f"field {index} ({name}) is not an integer: {token!r}")
    if value < minimum:
        raise ProtocolError("range", f"field {index} ({name}) must be >= {minimum}")
    return value


def parse_command(line: str) -> Command:
    """Parse one command line (no newline). Raises ProtocolError."""
    tokens = line.split(" ")
    if not tokens or tokens[0] == "":
        raise ProtocolError("lexical", "empty command")
    name = tokens[0]
    if name == "GET":
        if len(tokens) != 3:
            raise ProtocolError("arity", f"GET takes 2 fields, got {len(tokens) - 1}")
        return GetCommand(_int_field(tokens, 1, "model_id", 1),
                          _int_field(tokens, 2, "user_id", 1))
    if name == "MPUT":
        if len(tokens) != 3:
            raise ProtocolError("arity", f"MPUT takes 2 fields, got {len(tokens) - 1}")
        count = _int_field(tokens, 2, "n", 1)
        if count > MAX_MPUT_ITEMS:
            raise ProtocolError("range", f"n exceeds {MAX_MPUT_ITEMS}")
        return MputCommand(_int_field(tokens, 1, "user_id", 1), count)
    if name == "CONF":
        if len(tokens) != 4:
            raise ProtocolError("arity", f"CONF takes 3 fields, got {len(tokens) - 1}")
        return ConfCommand(_int_field(tokens, 1, "model_id", 1),
                           _int_field(tokens, 2, "direct_ttl_ms", 0),
                           _int_field(tokens, 3, "failover_ttl_ms", 0))
    if name == "STATS":
        if len(tokens) != 1:
            raise ProtocolError("arity", "STATS takes no fields")
        return StatsCommand()
    raise ProtocolError("proto", f"unknown command {name!r}")


def parse_mput_item(line: str) -> MputItem:
    tokens = line.split(" ")
    if len(tokens) != 4:
        raise ProtocolError("arity", f"MPUT item takes 4 fields, got {len(tokens)}")
    model_id = _int_field(tokens, 0, "model_id", 1)
    try:
        stage = Stage.parse(tokens[1])
    except Exception:
        raise ProtocolError("lexical", f"field 1 (stage) invalid: {tokens[1]!r}")
    dim = _int_field(tokens, 2, "dim", 1)
    if dim > MAX_LINE_BYTES // 8:
        raise ProtocolError("range", "dim too large")
    hex_text = tokens[3]
    if len(hex_text) != dim * 8:
        raise ProtocolError("range",
                            f"hex length {len(hex_text)} != dim {dim} * 8")
    try:
        embedding = EmbeddingVector.from_hex(dim, hex_text)
    except Exception as exc:
        raise ProtocolError("lexical", f"bad hex payload: {exc}")
    if hex_text != embedding.to_hex():
        raise ProtocolError("lexical", "hex payload must be lowercase")
    return MputItem(model_id, stage, embedding)


def encode_hit(tier: Tier, age_ms: int, embedding: EmbeddingVector) -> str:
    letter = "D" if tier is Tier.DIRECT else "F"
    return f"HIT {letter} {age_ms} {embedding.dim} {embedding.to_hex()}"


def now_ms() -> int:
    return time.time_ns() // 1_000_000


class CacheService:
    """Protocol semantics over a store and registry; transport-independent.

    One instance is shared by every connection; thread safety comes from the
    store and registry. Feed it decoded lines via ``process_line`` and write
    back the replies it returns (True in the second slot means "close").
    """

    def __init__(self, store: CacheStore, registry: ConfigRegistry,
                 clock: Callable[[], int] = now_ms) -> None:
        self.store = store
        self.registry = registry
        self.clock = clock
        self.mput_requests = 0
        self.conf_requests = 0
        self._lock = threading.Lock()

    def execute(self, command: Command, items: list[MputItem] | None = None) -> str:
        if isinstance(command, GetCommand):
            model = ModelKey(command.model_id, _WIRE_MODEL_TYPE, Stage.FIRST)
            config = self.registry.resolve(model)
            if not config.any_tier_enabled:
                return "MISS"
            outcome = self.store.get(command.user_id, model, self.clock(), config)
            if outcome.is_miss:
                return "MISS"
            return encode_hit(outcome.tier, outcome.age_ms, outcome.entry.embedding)
        if isinstance(command, MputCommand):
            now = self.clock()
            entries = [CacheEntry(command.user_id,
                                  ModelKey(item.model_id, _WIRE_MODEL_TYPE, item.stage),
                                  item.embedding, now, 0)
                       for item in items or []]
            written = self.store.put_batch(entries, now)
            with self._lock:
                self.mput_requests += 1
            return f"OK {written}"
        if isinstance(command, ConfCommand):
            config = ModelCacheConfig(
                model_id=command.model_id,
                enable_direct=command.direct_ttl_ms > 0,
                direct_ttl_ms=command.direct_ttl_ms,
                enable_failover=command.failover_ttl_ms > 0,
                failover_ttl_ms=command.failover_ttl_ms,
            )
            try:
                config.validate()
            except Exception as exc:
                raise ProtocolError("range", str(exc))
            self.registry.upsert(config)
            with self._lock:
                self.conf_requests += 1
            return "OK 1"
        stats = self.store.stats().as_dict()
        stats["mput_requests"] = self.mput_requests
        stats["conf_requests"] = self.conf_requests
        return " ".join(f"{key}={stats[key]}" for key in sorted(stats))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        service: CacheService = self.server.service  # type: ignore[attr-defined]
        while True:
            reply, close = self._one_request(service)
            if reply is None:
                return
            try:
                self.wfile.write(reply.encode("utf-8", "replace") + b"\n")
            except OSError:
                return
            if close:
                return

    def _read_line(self) -> str | None:
        try:
            raw = self.rfile.readline(MAX_LINE_BYTES + 1)
        except OSError:
            return None
        if not raw:
            return None
        if len(raw) > MAX_LINE_BYTES:
            raise ProtocolError("range", "line exceeds 1 MiB limit")
        return raw.decode("utf-8", "replace").rstrip("\r\n")

    def _one_request(self, service: CacheService) -> tuple[str | None, bool]:
        try:
            line = self._read_line()
        except ProtocolError as exc:
            return exc.reply(), True
        if line is None:
            return None, True
        try:
            command = parse_command(line)
            items: list[MputItem] | None = None
            if isinstance(command, MputCommand):
                items = []
                for _ in range(command.count):
                    item_line = self._read_line()
                    if item_line is None:
                        return None, True
                    items.append(parse_mput_item(item_line))
            return service.execute(command, items), False
        except ProtocolError as exc:
            return exc.reply(), False
        except Exception as exc:  # absolute backstop: noise must not kill the server
            return f"ERR internal {type(exc).__name__}", False


class CacheServer(socketserver.ThreadingTCPServer):
    """Threaded TCP front end; one handler per connection, shared service."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], store: CacheStore,
                 registry: ConfigRegistry,
                 clock: Callable[[], int] = now_ms) -> None:
        super().__init__(address, _Handler)
        self.service = CacheService(store, registry, clock)

    def serve_until_interrupt(self) -> None:
        try:
            self.serve_forever(poll_interval=0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()
            self.server_close()
