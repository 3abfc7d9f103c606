"""
Orbit cache with SQLAlchemy
Stores orbit tables per scene fingerprint and keeps a log of CLI runs
"""
from datetime import datetime
import json

import numpy as np

from billiard_lab.config import logger
from billiard_lab.core.db import OrbitRecord, RunRecord, get_session, init_db
from billiard_lab.core.orbits import OrbitTable, PeriodicOrbit
from billiard_lab.core.symbolic import parse_word

TABLE_COMMAND = 'orbit-table'


class OrbitCache:
    """Persist and reload orbit tables"""

    def __init__(self, db_path=None):
        self.db_path = db_path
        init_db(db_path)

    def save_table(self, scene, table):
        """Replace the cached orbits of `scene` by `table`; returns the number of rows written"""
        scene_hash = scene.fingerprint()
        session = get_session(self.db_path)
        try:
            session.query(OrbitRecord).filter_by(scene_hash=scene_hash).delete()
            session.query(RunRecord).filter_by(scene_hash=scene_hash, command=TABLE_COMMAND).delete()
            for orbit in table:
                session.add(OrbitRecord(
                    scene_hash=scene_hash,
                    word=orbit.word,
                    word_len=len(orbit.itinerary),
                    status='ok',
                    d_gamma=orbit.d_gamma,
                    mu1=abs(orbit.mu[0]),
                    mu2=abs(orbit.mu[1]),
                    lambda_gamma=orbit.lambda_gamma,
                    residual=orbit.residual,
                    solver_iters=orbit.solver_iters,
                    spectrum=json.dumps([[z.real, z.imag] for z in map(complex, orbit.spectrum)]),
                    points=json.dumps(np.asarray(orbit.points).tolist()),
                ))
            for word, message in table.failures.items():
                session.add(OrbitRecord(
                    scene_hash=scene_hash,
                    word=word,
                    word_len=len(word.split('-')),
                    status='failed',
                    message=message,
                ))
            session.add(RunRecord(
                command=TABLE_COMMAND,
                scene_hash=scene_hash,
                max_word_len=table.max_word_len,
                config=json.dumps({'attempted': table.attempted}),
                created_at=datetime.now().isoformat(),
                status='ok',
            ))
            session.commit()
            rows = len(table.orbits) + len(table.failures)
            logger.info(f"Cached {rows} orbit rows for scene {scene_hash[:12]}")
            return rows
        except Exception as e:
            session.rollback()
            logger.error(f"Error caching orbit table: {e}")
            return None
        finally:
            session.close()

    def load_table(self, scene, max_word_len):
        """Cached table truncated to `max_word_len`, or None when the cache does not cover it"""
        scene_hash = scene.fingerprint()
        session = get_session(self.db_path)
        try:
            coverage = session.query(RunRecord).filter_by(
                scene_hash=scene_hash, command=TABLE_COMMAND, status='ok'
            ).order_by(RunRecord.max_word_len.desc()).first()
            if coverage is None or coverage.max_word_len < max_word_len:
                return None

            records = session.query(OrbitRecord).filter(
                OrbitRecord.scene_hash == scene_hash,
                OrbitRecord.word_len <= max_word_len,
            ).order_by(OrbitRecord.orbit_id).all()

            table = OrbitTable(max_word_len)
            for record in records:
                if record.status != 'ok':
                    table.failures[record.word] = record.message
                    continue
                spectrum = tuple(complex(re, im) for re, im in json.loads(record.spectrum))
                table.orbits.append(PeriodicOrbit(
                    itinerary=parse_word(record.word),
                    points=np.array(json.loads(record.points)),
                    d_gamma=record.d_gamma,
                    residual=record.residual,
                    solver_iters=record.solver_iters,
                    spectrum=spectrum,
                    mu=spectrum[2:],
                    lambda_gamma=record.lambda_gamma,
                ))
            table.attempted = len(table.orbits) + len(table.failures)
            logger.info(f"Loaded {len(table.orbits)} cached orbits up to length {max_word_len}")
            return table
        except Exception as e:
            logger.error(f"Error reading orbit cache: {e}")
            return None
        finally:
            session.close()

    def record_run(self, command, scene, config, status):
        """Append a run to the log; returns the run id"""
        session = get_session(self.db_path)
        try:
            run = RunRecord(
                command=command,
                scene_hash=scene.fingerprint(),
                max_word_len=config.get('max_word_len'),
                config=json.dumps(config, sort_keys=True, default=str),
                created_at=datetime.now().isoformat(),
                status=status,
            )
            session.add(run)
            session.commit()
            return run.run_id
        except Exception as e:
            session.rollback()
            logger.error(f"Error recording run: {e}")
            return None
        finally:
            session.close()

    def runs(self, scene=None):
        session = get_session(self.db_path)
        try:
            query = session.query(RunRecord).filter(RunRecord.command != TABLE_COMMAND)
            if scene is not None:
                query = query.filter_by(scene_hash=scene.fingerprint())
            return [
                {'command': r.command, 'status': r.status, 'config': json.loads(r.config or '{}')}
                for r in query.order_by(RunRecord.run_id).all()
            ]
        finally:
            session.close()
