import sqlite3
from contextlib import contextmanager
from threading import local
from typing import Optional

from loguru import logger

ALLOTMENT_COLUMNS = "id, room_type_id, date_from, date_until, count, note"


def _row_to_allotment(row: tuple) -> dict:
    return {
        "id": row[0],
        "room_type_id": row[1],
        "from": row[2],
        "until": row[3],
        "count": row[4],
        "note": row[5],
    }


class SQLiteClient:
    """Allotment storage for the fixture service plus its reset counter."""

    def __init__(self, db_path: str):
        self.db_path = db_path
        self._thread_local = local()
        self.create_schema()

    @contextmanager
    def _get_connection(self):
        """Get a connection, reusing the one opened by this thread"""
        if getattr(self._thread_local, "connection", None) is None:
            conn = sqlite3.connect(self.db_path, timeout=10)
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("PRAGMA synchronous=NORMAL")
            self._thread_local.connection = conn
        conn = self._thread_local.connection
        try:
            yield conn
        except Exception:
            conn.rollback()
            raise

    def close(self) -> None:
        conn = getattr(self._thread_local, "connection", None)
        if conn is not None:
            conn.close()
            self._thread_local.connection = None

    def create_schema(self):
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS allotments (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    room_type_id TEXT NOT NULL,
                    date_from TEXT NOT NULL,
                    date_until TEXT NOT NULL,
                    count INTEGER NOT NULL,
                    note TEXT
                )
            """)
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS fixture_meta (
                    name TEXT PRIMARY KEY,
                    value INTEGER NOT NULL
                )
            """)
            cursor.execute("CREATE INDEX IF NOT EXISTS idx_allotments_room_type ON allotments(room_type_id)")
            conn.commit()
            logger.debug(f"SQLite schema ready at {self.db_path}")

    def create_allotment(self, room_type_id: str, date_from: str, date_until: str, count: int, note: Optional[str] = None) -> dict:
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                "INSERT INTO allotments (room_type_id, date_from, date_until, count, note) VALUES (?, ?, ?, ?, ?)",
                (room_type_id, date_from, date_until, count, note),
            )
            conn.commit()
            allotment_id = cursor.lastrowid
            logger.info(f"Stored allotment {allotment_id} for room type {room_type_id}")
        return self.get_allotment(allotment_id)

    def get_allotment(self, allotment_id: int) -> Optional[dict]:
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(f"SELECT {ALLOTMENT_COLUMNS} FROM allotments WHERE id = ?", (allotment_id,))
            row = cursor.fetchone()
            return _row_to_allotment(row) if row else None

    def list_allotments(self, room_type_id: Optional[str] = None, limit: int = 100) -> list[dict]:
        with self._get_connection() as conn:
            cursor = conn.cursor()
            if room_type_id is None:
                cursor.execute(f"SELECT {ALLOTMENT_COLUMNS} FROM allotments ORDER BY id LIMIT ?", (limit,))
            else:
                cursor.execute(
                    f"SELECT {ALLOTMENT_COLUMNS} FROM allotments WHERE room_type_id = ? ORDER BY id LIMIT ?",
                    (room_type_id, limit),
                )
            return [_row_to_allotment(row) for row in cursor.fetchall()]

    def update_allotment(self, allotment_id: int, room_type_id: str, date_from: str, date_until: str, count: int, note: Optional[str] = None) -> Optional[dict]:
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                "UPDATE allotments SET room_type_id = ?, date_from = ?, date_until = ?, count = ?, note = ? WHERE id = ?",
                (room_type_id, date_from, date_until, count, note, allotment_id),
            )
            conn.commit()
            if cursor.rowcount == 0:
                return None
        return self.get_allotment(allotment_id)

    def reset(self) -> int:
        """Drop every allotment, restart ids at 1 and count the reset."""
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("DELETE FROM allotments")
            cursor.execute("DELETE FROM sqlite_sequence WHERE name = 'allotments'")
            cursor.execute(
                "INSERT INTO fixture_meta (name, value) VALUES ('resets', 1) "
                "ON CONFLICT(name) DO UPDATE SET value = value + 1"
            )
            conn.commit()
        resets = self.reset_count()
        logger.info(f"Fixture database {self.db_path} reset ({resets} so far)")
        return resets

    def reset_count(self) -> int:
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("SELECT value FROM fixture_meta WHERE name = 'resets'")
            row = cursor.fetchone()
            return row[0] if row else 0
