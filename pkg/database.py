# --- START OF FILE database.py ---
# --- SQLAlchemy run-history ledger ---
import os
import logging
from datetime import datetime

from sqlalchemy import create_engine, text, Column, Integer, String, Boolean, Float, Text, DateTime, Index
from sqlalchemy.orm import sessionmaker, scoped_session, declarative_base

from config import CONFIG

logger = logging.getLogger(__name__)

# Make sure the run-history folder exists before the engine opens it.
db_path = CONFIG['HISTORY_DB_PATH']
history_dir = os.path.dirname(db_path)
if history_dir and not os.path.isdir(history_dir):
    try:
        os.makedirs(history_dir, exist_ok=True)
        logger.info(f"Created run-history directory: {history_dir}")
    except OSError as e:
        logger.error(f"Could not create run-history directory {history_dir}: {e}")

engine = create_engine(f"sqlite:///{db_path}", connect_args={"timeout": 15})
SessionFactory = sessionmaker(bind=engine)
Session = scoped_session(SessionFactory)

Base = declarative_base()


class RunHistory(Base):
    __tablename__ = 'run_history'

    id = Column(Integer, primary_key=True, autoincrement=True)
    timestamp = Column(DateTime, default=datetime.now, nullable=False)
    run_kind = Column(String, nullable=False)
    application = Column(String)
    config_path = Column(String)
    output_dir = Column(String)
    status = Column(String, nullable=False)
    exit_code = Column(Integer, nullable=False)
    converged = Column(Boolean)
    objective = Column(Float)
    peak = Column(Float)
    duration_seconds = Column(Float)
    error = Column(Text)

    __table_args__ = (
        Index('idx_run_history_timestamp', 'timestamp'),
    )


def init_db():
    """Create the run-history schema, deleting the file first when RESET_DB is set."""
    logger.info(f"Initializing run history at {CONFIG['HISTORY_DB_PATH']}...")

    if CONFIG['RESET_DB'] and os.path.exists(CONFIG['HISTORY_DB_PATH']):
        logger.warning(f"RESET_DB is true, deleting existing database: {CONFIG['HISTORY_DB_PATH']}")
        try:
            engine.dispose()
            os.remove(CONFIG['HISTORY_DB_PATH'])
            if os.path.exists(f"{CONFIG['HISTORY_DB_PATH']}-journal"):
                os.remove(f"{CONFIG['HISTORY_DB_PATH']}-journal")
                logger.info("Removed database journal file")
        except OSError as e:
            logger.error(f"Error removing database file: {e}")

    try:
        Base.metadata.create_all(engine)
        logger.info("Run history initialized/verified successfully.")
    except Exception as e:
        logger.error(f"Failed to initialize run history: {e}", exc_info=True)
        raise


def check_db_connection():
    """(ok, status) for the run-history database; used by `history` before reading."""
    try:
        with engine.connect() as conn:
            conn.execute(text("SELECT 1")).scalar()
        return True, "connected"
    except Exception as e:
        logger.error(f"Run history unreachable at {db_path}: {e}")
        return False, f"error: {e}"


def log_run_attempt(run_kind, status, exit_code, application=None, config_path=None,
                    output_dir=None, converged=None, objective=None, peak=None,
                    duration_seconds=None, error=None):
    """Record one CLI run. Failures to write are logged, never raised."""
    session = Session()
    try:
        session.add(RunHistory(
            timestamp=datetime.now(),
            run_kind=run_kind,
            application=application,
            config_path=config_path,
            output_dir=output_dir,
            status=status,
            exit_code=exit_code,
            converged=converged,
            objective=objective,
            peak=peak,
            duration_seconds=duration_seconds,
            error=str(error) if error else None,
        ))
        session.commit()
    except Exception as e:
        logger.error(f"Failed to log {run_kind} run due to DB error: {e}")
        session.rollback()
    finally:
        session.close()


def get_recent_runs(limit=20):
    """Most recent runs first, as plain dicts."""
    session = Session()
    try:
        rows = (
            session.query(RunHistory)
            .order_by(RunHistory.timestamp.desc(), RunHistory.id.desc())
            .limit(limit)
            .all()
        )
        return [
            {
                'id': r.id,
                'timestamp': r.timestamp.isoformat(),
                'run_kind': r.run_kind,
                'application': r.application,
                'config_path': r.config_path,
                'output_dir': r.output_dir,
                'status': r.status,
                'exit_code': r.exit_code,
                'converged': r.converged,
                'objective': r.objective,
                'peak': r.peak,
                'duration_seconds': r.duration_seconds,
                'error': r.error,
            }
            for r in rows
        ]
    except Exception as e:
        logger.error(f"Error reading run history: {e}", exc_info=True)
        return []
    finally:
        session.close()

# --- END OF FILE database.py ---
