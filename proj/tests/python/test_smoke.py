import json
import math
import os
import pathlib

import pytest

import mvp

FIXTURES = pathlib.Path(os.environ.get("MVP_FIXTURE_DIR", "build/fixtures"))

needs_fixtures = pytest.mark.skipif(not (FIXTURES / "song10.wav").exists(), reason="fixtures not built")


def test_slerp_endpoints_and_norm():
    a = [1.0, 0.0, 0.0]
    b = [0.0, 1.0, 0.0]
    assert mvp.slerp(a, b, 0.0) == a
    assert mvp.slerp(a, b, 1.0) == b
    mid = mvp.slerp(a, b, 0.5)
    assert math.isclose(mid[0], math.sqrt(0.5), abs_tol=1e-12)
    assert math.isclose(sum(x * x for x in mid), 1.0, abs_tol=1e-12)


def test_errors_carry_kind():
    with pytest.raises(mvp.Error) as info:
        mvp.slerp([0.0, 0.0], [1.0, 0.0], 0.5)
    assert info.value.kind == "domain_error"


def test_onset_weights_ramp():
    w = mvp.onset_weights([2.0] * 20, 5)
    assert w == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0], abs=1e-9)
    assert w[-1] == 1.0


def test_quadrants():
    assert mvp.quadrant(-0.5, -0.5) == "Melancholy"
    assert mvp.quadrant(0.5, -0.5) == "Serene"
    assert mvp.quadrant(-0.5, 0.5) == "Tense"
    assert mvp.quadrant(0.0, 0.0) == "Euphoric"


def test_select_actions_distinct():
    for seed in range(200):
        acts = mvp.select_actions(seed)
        assert len(acts) == 6
        assert len(set(acts)) == 6
    assert mvp.select_actions(3) == mvp.select_actions(3)


def test_face_frame_metrics_table():
    frames = [(i >= 111, 111 <= i < 921) for i in range(1000)]
    r = mvp.face_frame_metrics(frames)
    assert round(r["pct_frames_with_participant"], 1) == 81.0
    assert round(r["pct_frames_no_face"], 1) == 11.1
    assert round(r["pct_face_frames_with_participant"], 1) == 91.1


def test_character_similarity():
    assert mvp.character_similarity([1.0, 0.0], [[2.0, 0.0], [0.0, 1.0]]) == pytest.approx(0.5)


@needs_fixtures
def test_replay_golden_traces():
    passed = mvp.replay_trace(FIXTURES / "golden-pass.trace")
    assert passed["verdict"]["passed"] is True
    failed = mvp.replay_trace(FIXTURES / "golden-score5-fail.trace")
    assert failed["verdict"]["passed"] is False
    assert len(failed["attempts"]) == 2


@needs_fixtures
def test_analyze_fixture():
    a = mvp.analyze_wav(FIXTURES / "song10.wav")
    beats = a["beats"]
    assert len(beats) > 10
    gaps = sorted(b - a for a, b in zip(beats, beats[1:]))
    assert gaps[len(gaps) // 2] == pytest.approx(0.5, abs=0.02)


@needs_fixtures
def test_render_mock_is_deterministic(tmp_path):
    m1 = mvp.render_mock(FIXTURES / "job10.json", tmp_path / "a", job_id="py-job")
    m2 = mvp.render_mock(FIXTURES / "job10.json", tmp_path / "b", job_id="py-job")
    assert len(m1["frames"]) == 120
    assert m1 == m2
    assert (tmp_path / "a" / "py-job" / "manifest.json").read_text() == (
        tmp_path / "b" / "py-job" / "manifest.json"
    ).read_text()


@needs_fixtures
def test_render_mock_refuses_character_session(tmp_path):
    cfg = json.loads((FIXTURES / "job10.json").read_text())
    cfg["audio"] = str(FIXTURES / "song10.wav")
    cfg["transcript"] = str(FIXTURES / "song10.json")
    cfg["character_session"] = "someone"
    path = tmp_path / "job.json"
    path.write_text(json.dumps(cfg))
    with pytest.raises(mvp.Error) as info:
        mvp.render_mock(path, tmp_path / "jobs")
    assert info.value.kind == "forbidden"
    assert "charcha verification required" in str(info.value)
