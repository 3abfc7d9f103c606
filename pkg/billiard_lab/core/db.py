"""
Database layer using SQLAlchemy for the orbit cache
"""
from sqlalchemy import Column, Float, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from billiard_lab.config import DB_PATH, logger

Base = declarative_base()


class OrbitRecord(Base):
    __tablename__ = 'orbits'

    orbit_id = Column(Integer, primary_key=True, autoincrement=True)
    scene_hash = Column(String, nullable=False, index=True)
    word = Column(String, nullable=False)
    word_len = Column(Integer, nullable=False)
    status = Column(String, nullable=False, default='ok')  # 'ok' or 'failed'
    message = Column(Text)
    d_gamma = Column(Float)
    mu1 = Column(Float)
    mu2 = Column(Float)
    lambda_gamma = Column(Float)
    residual = Column(Float)
    solver_iters = Column(Integer)
    spectrum = Column(Text)  # JSON list of [re, im]
    points = Column(Text)  # JSON list of reflection points


class RunRecord(Base):
    __tablename__ = 'runs'

    run_id = Column(Integer, primary_key=True, autoincrement=True)
    command = Column(String, nullable=False)
    scene_hash = Column(String, nullable=False, index=True)
    max_word_len = Column(Integer)
    config = Column(Text)  # JSON
    created_at = Column(String, nullable=False)
    status = Column(String, nullable=False)


_sessions = {}


def _factory(db_path=None):
    path = str(db_path or DB_PATH)
    if path not in _sessions:
        engine = create_engine(f'sqlite:///{path}', echo=False)
        _sessions[path] = (engine, sessionmaker(bind=engine))
    return _sessions[path]


def init_db(db_path=None):
    """Initialize database tables"""
    engine, _ = _factory(db_path)
    try:
        Base.metadata.create_all(engine)
        logger.info("Orbit cache initialized")
    except Exception as e:
        logger.error(f"Failed to initialize orbit cache: {e}")
        raise


def get_session(db_path=None):
    """Get database session"""
    _, factory = _factory(db_path)
    return factory()
