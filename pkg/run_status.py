"""
Run Status Manager

Tracks the progress of a training run:
- Phase start/end wall-clock times and outcome
- Current phase, epoch and latest loss
- A bounded activity log
"""

import threading
import time
from collections import deque
from datetime import datetime
from typing import Any, Dict, List, Optional


class RunStatusManager:
    """Thread-safe progress tracker for one run."""

    def __init__(self, max_logs=500):
        """Initialize the status manager."""
        self.lock = threading.Lock()

        self.start_time: Optional[float] = None

        self.stats = {
            'completed': 0,
            'skipped': 0,
            'failed': 0
        }

        # Current phase
        self.current_phase: Optional[Dict[str, Any]] = None

        # Finished phases in execution order
        self.phase_timings: List[Dict[str, Any]] = []

        self.logs = deque(maxlen=max_logs)

    def run_started(self):
        with self.lock:
            self.start_time = time.time()
        self.add_log("Run started", "INFO")

    def phase_started(self, phase: str, session: Optional[int] = None):
        """Mark a phase as running."""
        with self.lock:
            self.current_phase = {
                'phase': phase,
                'session': session,
                'start_time': time.time(),
                'epoch': None,
                'loss': None,
                'duration': 0,
            }
        self.add_log(f"Phase started: {phase}" + (f" (session {session})" if session else ''), "INFO")

    def phase_progress(self, phase: str, epoch: int, loss: float):
        """Record the latest epoch summary; signature matches TrainingPhase callbacks."""
        with self.lock:
            if self.current_phase and self.current_phase['phase'] == phase:
                self.current_phase['epoch'] = epoch
                self.current_phase['loss'] = loss
                self.current_phase['duration'] = time.time() - self.current_phase['start_time']

    def phase_completed(self, phase: str, status: str = 'COMPLETED'):
        """Close the current phase with its final status."""
        with self.lock:
            key = {'COMPLETED': 'completed', 'SKIPPED': 'skipped'}.get(status, 'failed')
            self.stats[key] += 1
            if self.current_phase and self.current_phase['phase'] == phase:
                duration = time.time() - self.current_phase['start_time']
                self.phase_timings.append({
                    'phase': phase,
                    'session': self.current_phase['session'],
                    'status': status,
                    'seconds': round(duration, 6),
                    'epochs': self.current_phase['epoch'] + 1 if self.current_phase['epoch'] is not None else 0,
                    'last_loss': self.current_phase['loss'],
                })
            self.current_phase = None
        level = "INFO" if status != 'FAILED' else "ERROR"
        self.add_log(f"Phase finished: {phase} - {status}", level)

    def add_log(self, message: str, level: str = "INFO"):
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        with self.lock:
            self.logs.append(f"[{timestamp}] [{level}] {message}")

    def get_timings(self) -> Dict[str, Any]:
        """Per-phase wall-clock report for phase_timings.json."""
        with self.lock:
            total = time.time() - self.start_time if self.start_time else 0.0
            return {
                'phases': [dict(entry) for entry in self.phase_timings],
                'total_seconds': round(total, 6),
            }

    def get_status(self) -> Dict[str, Any]:
        """
        Get current status snapshot.

        Returns a dictionary with all current status information.
        """
        with self.lock:
            uptime = time.time() - self.start_time if self.start_time else None
            return {
                'uptime': uptime,
                'stats': self.stats.copy(),
                'current_phase': self.current_phase.copy() if self.current_phase else None,
                'finished_phases': len(self.phase_timings),
                'last_phase': dict(self.phase_timings[-1]) if self.phase_timings else None,
                'logs': list(self.logs),
            }
