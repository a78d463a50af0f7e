#!/usr/bin/env python3
# ABOUTME: SQLite cache for synthesized controller artifacts
# ABOUTME: Skips the Lyapunov/Sylvester solves when the same params and tuning were synthesized before

from datetime import datetime
from pathlib import Path
from typing import Optional
import hashlib
import json
import logging
import sqlite3

from controller import SCHEMA_VERSION, ControllerArtifact, Tuning
from converter_model import ConverterParams

logger = logging.getLogger(__name__)

# Default cache location
CACHE_DB_PATH = Path.home() / ".harmonic-ctl" / "artifact_cache.sqlite"


def get_cache_key(
    params: ConverterParams,
    objectives: tuple[int, ...],
    integral: bool = True,
    tuning: Optional[Tuning] = None,
) -> str:
    """SHA-256 over everything that changes the synthesized gains.

    Objectives are sorted so {6, 3} and {3, 6} share an entry; the schema version
    is part of the key so a format bump never returns a stale artifact.
    """
    payload = {
        "params": params.to_dict(),
        "objectives": sorted(int(k) for k in objectives),
        "integral": bool(integral),
        "tuning": (tuning or Tuning()).to_dict(),
        "schema_version": SCHEMA_VERSION,
    }
    encoded = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(encoded).hexdigest()


def init_cache_db(db_path: Path = CACHE_DB_PATH) -> None:
    """Initialize the cache database with required tables."""
    db_path.parent.mkdir(parents=True, exist_ok=True)

    conn = sqlite3.connect(db_path)
    try:
        conn.execute("""
            CREATE TABLE IF NOT EXISTS artifact_cache (
                cache_key TEXT PRIMARY KEY,
                objectives TEXT NOT NULL,
                artifact_json TEXT NOT NULL,
                synthesis_seconds REAL DEFAULT 0.0,
                schema_version INTEGER NOT NULL,
                synthesized_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        """)
        conn.execute("""
            CREATE INDEX IF NOT EXISTS idx_artifact_date
            ON artifact_cache(synthesized_at)
        """)
        conn.commit()
    finally:
        conn.close()


def lookup_artifact(
    cache_key: str,
    db_path: Path = CACHE_DB_PATH
) -> Optional[ControllerArtifact]:
    """Return the cached artifact for cache_key, or None.

    Rows that no longer deserialize (older schema, corrupt JSON) count as misses.
    """
    if not cache_key or not db_path.exists():
        return None

    conn = sqlite3.connect(db_path)
    conn.row_factory = sqlite3.Row
    try:
        cursor = conn.execute(
            "SELECT artifact_json FROM artifact_cache WHERE cache_key = ?",
            (cache_key,)
        )
        row = cursor.fetchone()
    finally:
        conn.close()

    if row is None:
        return None
    try:
        artifact = ControllerArtifact.from_dict(json.loads(row["artifact_json"]))
    except (ValueError, KeyError, TypeError) as e:
        logger.warning("ignoring unreadable cache entry %s: %s", cache_key[:12], e)
        return None
    artifact.report["from_cache"] = True
    return artifact


def save_artifact(
    cache_key: str,
    artifact: ControllerArtifact,
    db_path: Path = CACHE_DB_PATH
) -> None:
    """Save a synthesized artifact, replacing any entry with the same key."""
    if not cache_key:
        return

    init_cache_db(db_path)

    data = artifact.to_dict()
    data["report"] = {k: v for k, v in data["report"].items() if k != "from_cache"}
    conn = sqlite3.connect(db_path)
    try:
        conn.execute(
            """
            INSERT OR REPLACE INTO artifact_cache
            (cache_key, objectives, artifact_json, synthesis_seconds, schema_version, synthesized_at)
            VALUES (?, ?, ?, ?, ?, ?)
            """,
            (
                cache_key,
                ",".join(str(k) for k in artifact.objectives),
                json.dumps(data),
                float(artifact.report.get("wall_time", 0.0)),
                SCHEMA_VERSION,
                datetime.now().isoformat(),
            )
        )
        conn.commit()
    finally:
        conn.close()
    logger.debug("cached artifact %s", cache_key[:12])


def get_cache_stats(db_path: Path = CACHE_DB_PATH) -> dict:
    """Get statistics about the cache."""
    if not db_path.exists():
        return {
            "total_entries": 0,
            "total_synthesis_seconds": 0.0,
            "oldest_entry": None,
            "newest_entry": None
        }

    conn = sqlite3.connect(db_path)
    try:
        cursor = conn.execute("SELECT COUNT(*) FROM artifact_cache")
        total = cursor.fetchone()[0]

        cursor = conn.execute("SELECT SUM(synthesis_seconds) FROM artifact_cache")
        seconds = cursor.fetchone()[0] or 0.0

        cursor = conn.execute("SELECT MIN(synthesized_at), MAX(synthesized_at) FROM artifact_cache")
        dates = cursor.fetchone()

        return {
            "total_entries": total,
            "total_synthesis_seconds": seconds,
            "oldest_entry": dates[0],
            "newest_entry": dates[1]
        }
    finally:
        conn.close()


def clear_cache(db_path: Path = CACHE_DB_PATH) -> int:
    """Clear all entries from the cache. Returns number of entries deleted."""
    if not db_path.exists():
        return 0

    conn = sqlite3.connect(db_path)
    try:
        cursor = conn.execute("SELECT COUNT(*) FROM artifact_cache")
        count = cursor.fetchone()[0]
        conn.execute("DELETE FROM artifact_cache")
        conn.commit()
        return count
    finally:
        conn.close()


def main():
    """CLI interface for cache management."""
    import argparse

    parser = argparse.ArgumentParser(description="Manage the synthesized artifact cache")
    parser.add_argument("command", choices=["stats", "clear"], help="Command to run")
    parser.add_argument("--cache-db", type=Path, default=CACHE_DB_PATH, help="Cache database path")
    args = parser.parse_args()

    if args.command == "stats":
        stats = get_cache_stats(args.cache_db)
        print(f"Cache Statistics:")
        print(f"  Total entries: {stats['total_entries']:,}")
        print(f"  Synthesis time saved per full hit: {stats['total_synthesis_seconds']:.1f} s")
        if stats['oldest_entry']:
            print(f"  Date range: {stats['oldest_entry']} to {stats['newest_entry']}")
        else:
            print(f"  Cache is empty")

    elif args.command == "clear":
        count = clear_cache(args.cache_db)
        print(f"Cleared {count:,} entries from cache")


if __name__ == "__main__":
    main()
