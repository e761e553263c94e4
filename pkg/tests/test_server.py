from __future__ import annotations

import random
import socket

import pytest
from hypothesis import given, strategies as st

from tiercache.config import ConfigRegistry
from tiercache.core import EmbeddingVector, Stage
from tiercache.server import (
    CacheServer,
    CacheService,
    ConfCommand,
    GetCommand,
    MputCommand,
    MputItem,
    ProtocolError,
    StatsCommand,
    parse_command,
    parse_mput_item,
)
from tiercache.store import CacheStore


@pytest.fixture()
def service():
    clock = VirtualClock()
    return CacheService(CacheStore(), ConfigRegistry(), clock=clock), clock


class VirtualClock:
    def __init__(self):
        self.now = 1_000_000

    def __call__(self) -> int:
        return self.now


class TestParse:
    def test_get(self):
        assert parse_command("GET 7 12345") == GetCommand(7, 12345)

    def test_conf(self):
        assert parse_command("CONF 7 300000 3600000") == ConfCommand(7, 300000, 3600000)

    def test_mput_header(self):
        assert parse_command("MPUT 12345 2") == MputCommand(12345, 2)

    def test_stats(self):
        assert parse_command("STATS") == StatsCommand()

    def test_lexical_error_carries_position(self):
        with pytest.raises(ProtocolError) as exc_info:
            parse_command("GET x y")
        assert exc_info.value.code == "lexical"
        assert "field 1" in exc_info.value.message

    def test_arity_error(self):
        with pytest.raises(ProtocolError) as exc_info:
            parse_command("GET 7")
        assert exc_info.value.code == "arity"

    def test_range_error(self):
        with pytest.raises(ProtocolError) as exc_info:
            parse_command("GET 0 5")
        assert exc_info.value.code == "range"

    def test_unknown_command(self):
        with pytest.raises(ProtocolError) as exc_info:
            parse_command("DELETE 1 2")
        assert exc_info.value.code == "proto"

    def test_mput_item(self):
        embedding = EmbeddingVector((1.0, -0.5))
        line = f"3 First 2 {embedding.to_hex()}"
        item = parse_mput_item(line)
        assert item == MputItem(3, Stage.FIRST, embedding)

    def test_mput_item_rejects_uppercase_hex(self):
        embedding = EmbeddingVector((1.0,))
        with pytest.raises(ProtocolError):
            parse_mput_item(f"3 First 1 {embedding.to_hex().upper()}")


commands = st.one_of(
    st.builds(GetCommand,
              st.integers(min_value=1, max_value=2**40),
              st.integers(min_value=1, max_value=2**40)),
    st.builds(ConfCommand,
              st.integers(min_value=1, max_value=2**40),
              st.integers(min_value=0, max_value=604_800_000),
              st.integers(min_value=0, max_value=604_800_000)),
    st.builds(MputCommand,
              st.integers(min_value=1, max_value=2**40),
              st.integers(min_value=1, max_value=4096)),
    st.just(StatsCommand()),
)


class TestRoundTrip:
    @given(commands)
    def test_encode_parse_identity(self, command):
        assert parse_command(command.encode()) == command

    @given(st.integers(min_value=1, max_value=2**40),
           st.sampled_from(list(Stage)),
           st.lists(st.floats(allow_nan=False, allow_infinity=False, width=32),
                    min_size=1, max_size=8))
    def test_mput_item_round_trip(self, model_id, stage, values):
        item = MputItem(model_id, stage, EmbeddingVector(tuple(values)))
        assert parse_mput_item(item.encode()) == item


class TestServiceSemantics:
    def test_get_on_empty_store_misses(self, service):
        svc, _ = service
        assert svc.execute(parse_command("GET 7 12345")) == "MISS"

    def test_mput_then_get_hits_direct_within_ttl(self, service):
        svc, clock = service
        svc.execute(parse_command("CONF 7 300000 3600000"))
        embedding = EmbeddingVector((0.5, 1.5))
        reply = svc.execute(MputCommand(12345, 1),
                            [MputItem(7, Stage.FIRST, embedding)])
        assert reply == "OK 1"
        clock.now += 1_234
        reply = svc.execute(GetCommand(7, 12345))
        assert reply == f"HIT D 1234 2 {embedding.to_hex()}"

    def test_get_failover_after_direct_expiry(self, service):
        svc, clock = service
        svc.execute(parse_command("CONF 7 60000 3600000"))
        embedding = EmbeddingVector((2.0,))
        svc.execute(MputCommand(5, 1), [MputItem(7, Stage.FIRST, embedding)])
        clock.now += 120_000
        assert svc.execute(GetCommand(7, 5)).startswith("HIT F 120000 ")

    def test_conf_with_inverted_ttls_rejected(self, service):
        svc, _ = service
        with pytest.raises(ProtocolError) as exc_info:
            svc.execute(parse_command("CONF 7 300000 60000"))
        assert exc_info.value.code == "range"

    def test_zero_ttls_disable_tiers(self, service):
        svc, _ = service
        svc.execute(parse_command("CONF 7 0 0"))
        svc.execute(MputCommand(5, 1),
                    [MputItem(7, Stage.FIRST, EmbeddingVector((1.0,)))])
        assert svc.execute(GetCommand(7, 5)) == "MISS"

    def test_stats_reports_counters_and_mput_batches(self, service):
        svc, _ = service
        svc.execute(parse_command("CONF 7 300000 3600000"))
        svc.execute(MputCommand(5, 2), [
            MputItem(7, Stage.FIRST, EmbeddingVector((1.0,))),
            MputItem(8, Stage.SECOND, EmbeddingVector((2.0,))),
        ])
        svc.execute(GetCommand(7, 5))
        stats = dict(pair.split("=") for pair in
                     svc.execute(StatsCommand()).split(" "))
        assert stats["mput_requests"] == "1"
        assert stats["puts_total"] == "2"
        assert stats["hits_direct"] == "1"


@pytest.fixture()
def live_server():
    store = CacheStore()
    registry = ConfigRegistry()
    clock = VirtualClock()
    server = CacheServer(("127.0.0.1", 0), store, registry, clock=clock)
    import threading
    thread = threading.Thread(target=server.serve_forever,
                              kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    yield server, store, registry, clock
    server.shutdown()
    server.server_close()
    thread.join(timeout=5)


def exchange(sock: socket.socket, lines: list[str]) -> str:
    sock.sendall(("".join(line + "\n" for line in lines)).encode())
    reader = sock.makefile("r", encoding="utf-8", newline="\n")
    return reader.readline().rstrip("\n")


class TestLiveServer:
    def test_full_session(self, live_server):
        server, _, _, clock = live_server
        address = server.server_address
        with socket.create_connection(address, timeout=5) as sock:
            reader = sock.makefile("r", encoding="utf-8", newline="\n")

            def send(text: str) -> str:
                sock.sendall((text + "\n").encode())
                return reader.readline().rstrip("\n")

            assert send("GET 7 12345") == "MISS"
            assert send("CONF 7 300000 3600000") == "OK 1"
            embedding = EmbeddingVector((1.0, 2.0))
            sock.sendall(f"MPUT 12345 1\n7 First 2 {embedding.to_hex()}\n".encode())
            assert reader.readline().rstrip("\n") == "OK 1"
            clock.now += 5_000
            assert send("GET 7 12345") == f"HIT D 5000 2 {embedding.to_hex()}"
            assert send("BOGUS") .startswith("ERR proto")
            assert send("GET 7 12345") == f"HIT D 5000 2 {embedding.to_hex()}"
            stats_line = send("STATS")
            assert "gets_total=2" in stats_line

    def test_concurrent_connections_each_answered_in_order(self, live_server):
        server, _, _, clock = live_server
        address = server.server_address
        with socket.create_connection(address, timeout=5) as a, \
                socket.create_connection(address, timeout=5) as b:
            reader_a = a.makefile("r", encoding="utf-8", newline="\n")
            reader_b = b.makefile("r", encoding="utf-8", newline="\n")
            a.sendall(b"CONF 1 60000 60000\nGET 1 5\n")
            b.sendall(b"STATS\nGET 1 6\nGET 1 7\n")
            assert reader_a.readline().rstrip("\n") == "OK 1"
            assert "gets_total=" in reader_b.readline()
            assert reader_a.readline().rstrip("\n") == "MISS"
            assert reader_b.readline().rstrip("\n") == "MISS"
            assert reader_b.readline().rstrip("\n") == "MISS"

    def test_fuzz_noise_never_crashes(self, live_server):
        server, *_ = live_server
        rng = random.Random(1234)
        address = server.server_address
        with socket.create_connection(address, timeout=5) as sock:
            reader = sock.makefile("rb")
            for _ in range(2_000):
                length = rng.randrange(0, 60)
                noise = bytes(rng.randrange(32, 256) for _ in range(length))
                sock.sendall(noise.replace(b"\n", b" ") + b"\n")
                reply = reader.readline()
                assert reply.endswith(b"\n")
        # the server still works after the noise
        with socket.create_connection(address, timeout=5) as sock:
            assert exchange(sock, ["GET 1 1"]) == "MISS"


class TestServerLibraryEquivalence:
    def test_random_command_sequences_agree(self, live_server):
        server, _, _, clock = live_server
        rng = random.Random(77)
        mirror_store = CacheStore()
        mirror_registry = ConfigRegistry()
        mirror = CacheService(mirror_store, mirror_registry, clock=clock)

        address = server.server_address
        with socket.create_connection(address, timeout=5) as sock:
            reader = sock.makefile("r", encoding="utf-8", newline="\n")
            for _ in range(2_000):
                clock.now += rng.randrange(0, 60_000)
                op = rng.random()
                if op < 0.25:
                    direct = rng.randrange(0, 600_000)
                    command = ConfCommand(rng.randrange(1, 6), direct,
                                          direct + rng.randrange(0, 3_600_000))
                    items = None
                elif op < 0.55:
                    count = rng.randrange(1, 4)
                    command = MputCommand(rng.randrange(1, 30), count)
                    items = [MputItem(rng.randrange(1, 6),
                                      Stage.FIRST,
                                      EmbeddingVector((rng.random(),)))
                             for _ in range(count)]
                elif op < 0.95:
                    command = GetCommand(rng.randrange(1, 6), rng.randrange(1, 30))
                    items = None
                else:
                    command = StatsCommand()
                    items = None

                lines = [command.encode()]
                if items:
                    lines.extend(item.encode() for item in items)
                sock.sendall(("".join(line + "\n" for line in lines)).encode())
                wire_reply = reader.readline().rstrip("\n")
                library_reply = mirror.execute(command, items)
                assert wire_reply == library_reply
