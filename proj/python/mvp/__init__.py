"""Beat-aligned music video pipeline and CHARCHA liveness checks.

Thin wrappers over the native core; structured results come back as dicts.
"""

import json
import os

from . import _core
from ._core import Error, character_similarity, onset_weights, quadrant, select_actions, slerp

__all__ = [
    "Error",
    "analyze_wav",
    "character_similarity",
    "face_frame_metrics",
    "onset_weights",
    "quadrant",
    "render_mock",
    "replay_trace",
    "select_actions",
    "slerp",
]


def analyze_wav(path):
    """Rhythm and feature analysis of a WAV file."""
    return json.loads(_core.analyze_wav(os.fspath(path)))


def replay_trace(path, seed=None):
    """Replay a landmark trace through the session state machine."""
    return json.loads(_core.replay_trace(os.fspath(path), seed))


def face_frame_metrics(frames):
    """frames: iterable of (face_present, verified) pairs."""
    return json.loads(_core.face_frame_metrics([(bool(f), bool(v)) for f, v in frames]))


def render_mock(job_config, jobs_dir, job_id=None, workers=2):
    """Run a job end to end with the offline generator and LLM.

    Re-running with an existing job_id resumes that job. Returns the manifest.
    """
    return json.loads(_core.render_mock(os.fspath(job_config), os.fspath(jobs_dir), job_id, workers))
