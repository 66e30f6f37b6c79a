"""DuckDB connection and schema helpers for the metric store.

The store lives in an in-process database. By default it is in-memory;
snapshots carry the samples between sessions.
"""
import logging

import duckdb

from slicekit import config

logger = logging.getLogger(__name__)


def get_db_connection(path: str = ":memory:") -> duckdb.DuckDBPyConnection:
    """Get a DuckDB connection; `path` defaults to a private in-memory database."""
    return duckdb.connect(path)


def load_sql(name: str) -> str:
    with open(config.SQL_DIR / name, "r") as f:
        return f.read()


def init_database(conn: duckdb.DuckDBPyConnection) -> None:
    """Create the metric schema if not already present."""
    conn.execute(load_sql("schema.sql"))
    logger.debug("Metric schema initialized")
