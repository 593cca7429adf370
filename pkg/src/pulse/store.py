"""Durable single-node storage: records, blobs, and the append-only event log.

Layout under the data directory:

    records.db   transactional record tables (sqlite, WAL journal)
    blobs/       raster buffers, rendered tiles, masks (atomic temp+rename)
    log/         one append-only JSONL segment per pub/sub topic

Writers are serialized by a process-wide lock on top of sqlite
transactions; readers share the same connection and always observe
committed state. Blob and log writes never leave partial content visible:
blobs go through temp+rename, log segments are truncated back to the last
complete line on recovery.
"""

from __future__ import annotations

import io
import json
import os
import re
import shutil
import sqlite3
import tarfile
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import ConflictError, CorruptArchiveError, IntegrityError, UnknownTopicError

SNAPSHOT_FORMAT_VERSION = 1

_TOPIC_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")

_SCHEMA = """
CREATE TABLE IF NOT EXISTS records (
    rtype     TEXT NOT NULL,
    id        TEXT NOT NULL,
    version   INTEGER NOT NULL,
    tombstone INTEGER NOT NULL DEFAULT 0,
    ref       TEXT,
    ref2      TEXT,
    data      TEXT NOT NULL,
    PRIMARY KEY (rtype, id)
);
CREATE INDEX IF NOT EXISTS idx_records_ref ON records (rtype, ref);
CREATE INDEX IF NOT EXISTS idx_records_ref2 ON records (rtype, ref, ref2);
CREATE TABLE IF NOT EXISTS meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
"""


@dataclass(frozen=True)
class Record:
    rtype: str
    id: str
    version: int
    tombstone: bool
    ref: str | None
    ref2: str | None
    data: dict


@dataclass(frozen=True)
class Op:
    """One record mutation inside a transaction.

    action: "put" or "delete" (delete = tombstone, never removes the row).
    expected_version: optimistic check; None skips the check, 0 asserts
    the record does not exist yet.
    """

    action: str
    rtype: str
    id: str
    data: dict | None = None
    ref: str | None = None
    ref2: str | None = None
    expected_version: int | None = None


@dataclass(frozen=True)
class Event:
    topic: str
    seq: int
    type: str
    payload: dict
    ts: float

    def to_json(self) -> dict:
        return {"seq": self.seq, "type": self.type, "payload": self.payload, "ts": self.ts}


class RecordStore:
    """Transactional typed-record store over sqlite."""

    def __init__(self, db_path: Path):
        self._db_path = db_path
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(str(db_path), check_same_thread=False,
                                     isolation_level=None)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA synchronous=FULL")
        self._conn.executescript(_SCHEMA)

    @property
    def lock(self) -> threading.RLock:
        return self._lock

    def close(self):
        with self._lock:
            self._conn.close()

    # -- reads ---------------------------------------------------------

    def get(self, rtype: str, id: str, include_tombstoned: bool = False) -> Record | None:
        with self._lock:
            row = self._conn.execute(
                "SELECT rtype, id, version, tombstone, ref, ref2, data "
                "FROM records WHERE rtype=? AND id=?", (rtype, id)).fetchone()
        if row is None:
            return None
        rec = _row_to_record(row)
        if rec.tombstone and not include_tombstoned:
            return None
        return rec

    def list(self, rtype: str, ref: str | None = None, ref2: str | None = None,
             include_tombstoned: bool = False) -> list[Record]:
        sql = ("SELECT rtype, id, version, tombstone, ref, ref2, data "
               "FROM records WHERE rtype=?")
        args: list[Any] = [rtype]
        if ref is not None:
            sql += " AND ref=?"
            args.append(ref)
        if ref2 is not None:
            sql += " AND ref2=?"
            args.append(ref2)
        if not include_tombstoned:
            sql += " AND tombstone=0"
        sql += " ORDER BY rowid"
        with self._lock:
            rows = self._conn.execute(sql, args).fetchall()
        return [_row_to_record(r) for r in rows]

    def commit_seq(self) -> int:
        with self._lock:
            row = self._conn.execute("SELECT value FROM meta WHERE key='commit_seq'").fetchone()
        return int(row[0]) if row else 0

    # -- writes --------------------------------------------------------

    def transact(self, ops: Iterable[Op]) -> int:
        """Apply all ops atomically; returns the new commit sequence number."""
        ops = list(ops)
        with self._lock:
            self._conn.execute("BEGIN IMMEDIATE")
            try:
                for op in ops:
                    self._apply(op)
                seq = self.commit_seq() + 1
                self._conn.execute(
                    "INSERT INTO meta (key, value) VALUES ('commit_seq', ?) "
                    "ON CONFLICT(key) DO UPDATE SET value=excluded.value", (str(seq),))
            except BaseException:
                self._conn.execute("ROLLBACK")
                raise
            self._conn.execute("COMMIT")
            return seq

    def put(self, rtype: str, id: str, data: dict, ref: str | None = None,
            ref2: str | None = None, expected_version: int | None = None) -> int:
        return self.transact([Op("put", rtype, id, data, ref, ref2, expected_version)])

    def delete(self, rtype: str, id: str, expected_version: int | None = None) -> int:
        return self.transact([Op("delete", rtype, id, expected_version=expected_version)])

    def _apply(self, op: Op):
        row = self._conn.execute(
            "SELECT version, tombstone, ref, ref2, data FROM records WHERE rtype=? AND id=?",
            (op.rtype, op.id)).fetchone()
        current_version = row[0] if row else 0
        if op.expected_version is not None and op.expected_version != current_version:
            raise ConflictError(
                f"{op.rtype}/{op.id}: expected version {op.expected_version}, "
                f"found {current_version}")
        if op.action == "put":
            if op.data is None:
                raise IntegrityError(f"put {op.rtype}/{op.id} without data")
            self._conn.execute(
                "INSERT INTO records (rtype, id, version, tombstone, ref, ref2, data) "
                "VALUES (?, ?, ?, 0, ?, ?, ?) "
                "ON CONFLICT(rtype, id) DO UPDATE SET "
                "version=excluded.version, tombstone=0, ref=excluded.ref, "
                "ref2=excluded.ref2, data=excluded.data",
                (op.rtype, op.id, current_version + 1, op.ref, op.ref2,
                 json.dumps(op.data, separators=(",", ":"))))
        elif op.action == "delete":
            if row is None:
                raise IntegrityError(f"delete of missing record {op.rtype}/{op.id}")
            self._conn.execute(
                "UPDATE records SET version=?, tombstone=1 WHERE rtype=? AND id=?",
                (current_version + 1, op.rtype, op.id))
        else:
            raise IntegrityError(f"unknown op action {op.action!r}")

    def checkpoint_into(self, target: Path):
        """Write a consistent copy of the record database to target."""
        with self._lock:
            dest = sqlite3.connect(str(target))
            try:
                self._conn.backup(dest)
            finally:
                dest.close()


def _row_to_record(row) -> Record:
    rtype, id_, version, tombstone, ref, ref2, data = row
    return Record(rtype, id_, version, bool(tombstone), ref, ref2, json.loads(data))


class BlobStore:
    """Content-addressed-by-key binary blobs with atomic writes."""

    def __init__(self, root: Path):
        self._root = root
        root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        p = (self._root / key).resolve()
        if self._root.resolve() not in p.parents and p != self._root.resolve():
            raise IntegrityError(f"blob key escapes store: {key!r}")
        return p

    def put(self, key: str, data: bytes):
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def get(self, key: str) -> bytes | None:
        path = self._path(key)
        if not path.exists():
            return None
        return path.read_bytes()

    def exists(self, key: str) -> bool:
        return self._path(key).exists()

    def delete(self, key: str):
        path = self._path(key)
        if path.exists():
            path.unlink()

    def keys(self) -> list[str]:
        out = []
        for p in sorted(self._root.rglob("*")):
            if p.is_file() and not p.name.startswith(".tmp-"):
                out.append(str(p.relative_to(self._root)))
        return out


@dataclass
class _Topic:
    path: Path
    lock: threading.Lock = field(default_factory=threading.Lock)
    cond: threading.Condition = field(default_factory=threading.Condition)
    last_seq: int = 0
    handle: io.TextIOWrapper | None = None


class EventLog:
    """Per-topic append-only log with monotonically increasing sequence numbers.

    Delivery to live subscribers is at-least-once: consumers track the last
    seq they saw and resume with read(topic, after_seq=...).
    """

    def __init__(self, root: Path, clock=time.time):
        self._root = root
        self._clock = clock
        self._topics: dict[str, _Topic] = {}
        self._registry_lock = threading.Lock()
        root.mkdir(parents=True, exist_ok=True)
        for p in sorted(root.glob("*.jsonl")):
            self._open_topic(p.stem)

    def topics(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._topics)

    def _open_topic(self, topic: str) -> _Topic:
        if not _TOPIC_RE.match(topic):
            raise IntegrityError(f"invalid topic name {topic!r}")
        with self._registry_lock:
            t = self._topics.get(topic)
            if t is not None:
                return t
            path = self._root / f"{topic}.jsonl"
            t = _Topic(path=path)
            if path.exists():
                t.last_seq = _recover_segment(path)
            self._topics[topic] = t
            return t

    def publish(self, topic: str, type: str, payload: dict) -> Event:
        t = self._open_topic(topic)
        with t.lock:
            seq = t.last_seq + 1
            event = Event(topic=topic, seq=seq, type=type, payload=payload, ts=self._clock())
            line = json.dumps(event.to_json(), separators=(",", ":"))
            if t.handle is None:
                t.handle = open(t.path, "a", encoding="utf-8")
            t.handle.write(line + "\n")
            t.handle.flush()
            os.fsync(t.handle.fileno())
            t.last_seq = seq
        with t.cond:
            t.cond.notify_all()
        return event

    def read(self, topic: str, after_seq: int = 0, limit: int | None = None) -> list[Event]:
        """Events with seq > after_seq, in order.

        Resuming (after_seq > 0) from a topic that was never published to
        is an error; a fresh subscribe (after_seq == 0) just sees nothing.
        """
        with self._registry_lock:
            t = self._topics.get(topic)
        if t is None:
            if after_seq > 0:
                raise UnknownTopicError(f"cannot resume unknown topic {topic!r}")
            return []
        out: list[Event] = []
        with t.lock:
            if not t.path.exists():
                return []
            with open(t.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    if obj["seq"] <= after_seq:
                        continue
                    out.append(Event(topic=topic, seq=obj["seq"], type=obj["type"],
                                     payload=obj["payload"], ts=obj["ts"]))
                    if limit is not None and len(out) >= limit:
                        break
        return out

    def last_seq(self, topic: str) -> int:
        with self._registry_lock:
            t = self._topics.get(topic)
        return t.last_seq if t else 0

    def wait(self, topic: str, after_seq: int, timeout: float) -> bool:
        """Block until the topic has events past after_seq (or timeout)."""
        t = self._open_topic(topic)
        with t.cond:
            if t.last_seq > after_seq:
                return True
            t.cond.wait(timeout)
            return t.last_seq > after_seq


def _recover_segment(path: Path) -> int:
    """Trim a torn trailing write and return the last committed seq."""
    data = path.read_bytes()
    end = data.rfind(b"\n")
    valid = data[:end + 1] if end >= 0 else b""
    # The final line must parse; drop it too if a crash interleaved writes.
    seq = 0
    while valid:
        last_start = valid.rfind(b"\n", 0, len(valid) - 1) + 1
        try:
            seq = int(json.loads(valid[last_start:])["seq"])
            break
        except (ValueError, KeyError):
            valid = valid[:last_start]
    if len(valid) != len(data):
        path.write_bytes(valid)
    return seq


class Store:
    """Facade bundling records, blobs, and the event log for one data dir."""

    def __init__(self, root: str | os.PathLike, clock=time.time):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.records = RecordStore(self.root / "records.db")
        self.blobs = BlobStore(self.root / "blobs")
        self.events = EventLog(self.root / "log", clock=clock)

    def close(self):
        self.records.close()

    # -- snapshots -----------------------------------------------------

    def snapshot_export(self, archive_path: str | os.PathLike) -> Path:
        """Write a consistent tar archive of the whole store."""
        archive_path = Path(archive_path)
        with self.records.lock:
            with tempfile.TemporaryDirectory() as tmp:
                db_copy = Path(tmp) / "records.db"
                self.records.checkpoint_into(db_copy)
                manifest = {
                    "format_version": SNAPSHOT_FORMAT_VERSION,
                    "created_at": time.time(),
                }
                with tarfile.open(archive_path, "w") as tar:
                    mdata = json.dumps(manifest).encode()
                    info = tarfile.TarInfo("manifest.json")
                    info.size = len(mdata)
                    tar.addfile(info, io.BytesIO(mdata))
                    tar.add(db_copy, arcname="records.db")
                    for sub in ("blobs", "log"):
                        d = self.root / sub
                        if d.exists():
                            tar.add(d, arcname=sub)
        return archive_path

    @classmethod
    def snapshot_import(cls, archive_path: str | os.PathLike,
                        dest_root: str | os.PathLike, clock=time.time) -> "Store":
        """Restore an archive into a fresh data directory.

        The destination is only populated after the whole archive has been
        read and validated; a corrupt archive leaves it untouched.
        """
        dest_root = Path(dest_root)
        if dest_root.exists() and any(dest_root.iterdir()):
            raise IntegrityError(f"snapshot destination {dest_root} is not empty")
        staging = Path(tempfile.mkdtemp(prefix="pulse-snapshot-"))
        try:
            try:
                with tarfile.open(archive_path, "r") as tar:
                    members = tar.getmembers()
                    names = {m.name for m in members}
                    if "manifest.json" not in names or "records.db" not in names:
                        raise CorruptArchiveError("archive is missing manifest or records")
                    for m in members:
                        if m.name.startswith("/") or ".." in m.name.split("/"):
                            raise CorruptArchiveError(f"unsafe member path {m.name!r}")
                    manifest = json.load(tar.extractfile("manifest.json"))
                    if manifest.get("format_version") != SNAPSHOT_FORMAT_VERSION:
                        raise CorruptArchiveError(
                            f"unsupported snapshot format {manifest.get('format_version')!r}")
                    for m in members:
                        if m.name != "manifest.json":
                            tar.extract(m, staging)
            except (tarfile.TarError, EOFError, OSError) as exc:
                raise CorruptArchiveError(f"unreadable archive: {exc}") from exc
            dest_root.mkdir(parents=True, exist_ok=True)
            for item in staging.iterdir():
                shutil.move(str(item), dest_root / item.name)
        finally:
            shutil.rmtree(staging, ignore_errors=True)
        return cls(dest_root, clock=clock)
