import json
import sqlite3
import threading

import pytest

from pulse.errors import (ConflictError, CorruptArchiveError, IntegrityError,
                          UnknownTopicError)
from pulse.store import Op, Store


@pytest.fixture
def store(tmp_path):
    s = Store(tmp_path / "data")
    yield s
    s.close()


class TestRecords:
    def test_put_get_round_trip(self, store):
        store.records.put("models", "m1", {"name": "generic"})
        rec = store.records.get("models", "m1")
        assert rec.data == {"name": "generic"}
        assert rec.version == 1

    def test_versions_bump_on_update(self, store):
        store.records.put("models", "m1", {"v": 1})
        store.records.put("models", "m1", {"v": 2})
        assert store.records.get("models", "m1").version == 2

    def test_compare_and_set_conflict(self, store):
        store.records.put("jobs", "j1", {"state": "queued"})
        store.records.put("jobs", "j1", {"state": "assigned"}, expected_version=1)
        with pytest.raises(ConflictError):
            store.records.put("jobs", "j1", {"state": "assigned"}, expected_version=1)

    def test_expected_version_zero_means_create(self, store):
        store.records.put("a", "x", {}, expected_version=0)
        with pytest.raises(ConflictError):
            store.records.put("a", "x", {}, expected_version=0)

    def test_transaction_all_or_nothing(self, store):
        store.records.put("models", "m1", {})
        with pytest.raises(ConflictError):
            store.records.transact([
                Op("put", "models", "m2", {}),
                Op("put", "models", "m1", {}, expected_version=99),
            ])
        assert store.records.get("models", "m2") is None

    def test_tombstone_delete(self, store):
        store.records.put("models", "m1", {})
        store.records.delete("models", "m1")
        assert store.records.get("models", "m1") is None
        assert store.records.get("models", "m1", include_tombstoned=True) is not None

    def test_delete_missing_is_integrity_error(self, store):
        with pytest.raises(IntegrityError):
            store.records.delete("models", "nope")

    def test_sequence_numbers_strictly_increase(self, store):
        seqs = [store.records.put("t", f"r{i}", {}) for i in range(1000)]
        assert seqs == list(range(1, 1001))

    def test_list_by_ref(self, store):
        store.records.put("features", "f1", {}, ref="set-a")
        store.records.put("features", "f2", {}, ref="set-b")
        store.records.put("features", "f3", {}, ref="set-a", ref2="0,0")
        assert {r.id for r in store.records.list("features", ref="set-a")} == {"f1", "f3"}
        assert [r.id for r in store.records.list("features", ref="set-a", ref2="0,0")] == ["f3"]

    def test_crash_between_write_and_commit_rolls_back(self, tmp_path):
        root = tmp_path / "data"
        s = Store(root)
        s.records.put("models", "committed", {})
        # Simulate a crash mid-transaction: raw write without COMMIT, then
        # drop the connection.
        conn = sqlite3.connect(root / "records.db", isolation_level=None)
        conn.execute("BEGIN IMMEDIATE")
        conn.execute(
            "INSERT INTO records (rtype, id, version, tombstone, ref, ref2, data) "
            "VALUES ('models', 'torn', 1, 0, NULL, NULL, '{}')")
        conn.close()
        s.close()
        recovered = Store(root)
        assert recovered.records.get("models", "committed") is not None
        assert recovered.records.get("models", "torn") is None
        recovered.close()

    def test_concurrent_writers_serialize(self, store):
        errors = []

        def writer(i):
            try:
                for k in range(50):
                    store.records.put("t", f"r-{i}-{k}", {"i": i})
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=writer, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        assert len(store.records.list("t")) == 400


class TestBlobs:
    def test_round_trip_and_atomicity(self, store, tmp_path):
        store.blobs.put("rasters/r1.npy", b"abc")
        assert store.blobs.get("rasters/r1.npy") == b"abc"
        store.blobs.put("rasters/r1.npy", b"xyz")
        assert store.blobs.get("rasters/r1.npy") == b"xyz"
        # No temp droppings left behind.
        leftovers = [p for p in (tmp_path / "data" / "blobs").rglob(".tmp-*")]
        assert leftovers == []

    def test_missing_returns_none(self, store):
        assert store.blobs.get("nope") is None

    def test_key_escape_rejected(self, store):
        with pytest.raises(IntegrityError):
            store.blobs.put("../outside", b"x")


class TestEventLog:
    def test_publish_and_read_in_order(self, store):
        for i in range(3):
            store.events.publish("jobs", "job.updated", {"i": i})
        events = store.events.read("jobs", after_seq=0)
        assert [e.seq for e in events] == [1, 2, 3]
        assert [e.payload["i"] for e in events] == [0, 1, 2]

    def test_resume_from_cursor(self, store):
        for i in range(5):
            store.events.publish("t", "e", {"i": i})
        events = store.events.read("t", after_seq=2)
        assert [e.seq for e in events] == [3, 4, 5]

    def test_two_subscribers_see_everything(self, store):
        for i in range(4):
            store.events.publish("t", "e", {"i": i})
        a = store.events.read("t", after_seq=0)
        b = store.events.read("t", after_seq=0)
        assert [e.seq for e in a] == [e.seq for e in b] == [1, 2, 3, 4]

    def test_resume_unknown_topic_errors(self, store):
        with pytest.raises(UnknownTopicError):
            store.events.read("ghost", after_seq=3)
        assert store.events.read("ghost", after_seq=0) == []

    def test_seq_survives_reopen(self, tmp_path):
        root = tmp_path / "data"
        s = Store(root)
        s.events.publish("t", "e", {})
        s.events.publish("t", "e", {})
        s.close()
        s2 = Store(root)
        event = s2.events.publish("t", "e", {})
        assert event.seq == 3
        s2.close()

    def test_torn_trailing_line_truncated_on_recovery(self, tmp_path):
        root = tmp_path / "data"
        s = Store(root)
        s.events.publish("t", "e", {"i": 1})
        s.events.publish("t", "e", {"i": 2})
        s.close()
        path = root / "log" / "t.jsonl"
        data = path.read_bytes()
        path.write_bytes(data + b'{"seq": 3, "type": "e"')  # torn write
        s2 = Store(root)
        assert [e.seq for e in s2.events.read("t")] == [1, 2]
        assert s2.events.publish("t", "e", {"i": 3}).seq == 3
        s2.close()

    def test_recovery_is_idempotent(self, tmp_path):
        root = tmp_path / "data"
        s = Store(root)
        s.events.publish("t", "e", {})
        s.close()
        before = (root / "log" / "t.jsonl").read_bytes()
        Store(root).close()
        Store(root).close()
        assert (root / "log" / "t.jsonl").read_bytes() == before

    def test_wait_wakes_on_publish(self, store):
        result = {}

        def waiter():
            result["woke"] = store.events.wait("t", after_seq=0, timeout=5.0)

        t = threading.Thread(target=waiter)
        t.start()
        store.events.publish("t", "e", {})
        t.join(timeout=5)
        assert result["woke"] is True


class TestSnapshots:
    def test_empty_store_round_trip(self, tmp_path):
        s = Store(tmp_path / "a")
        archive = s.snapshot_export(tmp_path / "snap.tar")
        s.close()
        restored = Store.snapshot_import(archive, tmp_path / "b")
        assert restored.records.list("anything") == []
        restored.close()

    def test_full_round_trip_bit_exact(self, tmp_path):
        s = Store(tmp_path / "a")
        s.records.put("models", "m1", {"name": "x"}, ref="structures")
        s.blobs.put("rasters/r1.npy", b"\x01\x02\x03")
        s.events.publish("t", "e", {"k": "v"})
        archive = s.snapshot_export(tmp_path / "snap.tar")
        restored = Store.snapshot_import(archive, tmp_path / "b")
        assert restored.records.get("models", "m1").data == {"name": "x"}
        assert restored.blobs.get("rasters/r1.npy") == b"\x01\x02\x03"
        assert [e.payload for e in restored.events.read("t")] == [{"k": "v"}]
        s.close()
        restored.close()

    def test_truncated_archive_leaves_store_untouched(self, tmp_path):
        s = Store(tmp_path / "a")
        s.records.put("models", "m1", {})
        archive = s.snapshot_export(tmp_path / "snap.tar")
        s.close()
        data = archive.read_bytes()
        (tmp_path / "broken.tar").write_bytes(data[:len(data) // 3])
        dest = tmp_path / "b"
        with pytest.raises(CorruptArchiveError):
            Store.snapshot_import(tmp_path / "broken.tar", dest)
        assert not dest.exists() or not any(dest.iterdir())

    def test_not_a_tar_rejected(self, tmp_path):
        bad = tmp_path / "bad.tar"
        bad.write_bytes(b"definitely not a tar")
        with pytest.raises(CorruptArchiveError):
            Store.snapshot_import(bad, tmp_path / "b")

    def test_import_refuses_nonempty_destination(self, tmp_path):
        s = Store(tmp_path / "a")
        archive = s.snapshot_export(tmp_path / "snap.tar")
        s.close()
        dest = tmp_path / "occupied"
        dest.mkdir()
        (dest / "junk").write_text("x")
        with pytest.raises(IntegrityError):
            Store.snapshot_import(archive, dest)
