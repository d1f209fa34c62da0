import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaffect.model import (FRAME_STEP_S, Affect, IntegrityError, Level, ManifestError, MissingDataError,
                            VideoRecord, frame_count, frame_filename, load_manifest, manifest_to_dict,
                            parse_manifest, sample_frames, save_manifest, write_image)
from conftest import toy_manifest_doc


def loop_count(duration):
    # oracle: walk the sampling clock
    n, t = 0, 0.0
    while t < duration:
        n += 1
        t = n * FRAME_STEP_S
    return n


def test_manifest_two_videos_three_raters():
    m = parse_manifest(toy_manifest_doc(2, 3))
    assert len(m.videos) == 2
    assert m.ratings.valence.shape == (3, 2)
    assert m.video("v0").label(Affect.VALENCE) is Level.HIGH


def test_dangling_gaze_reference_is_integrity_error():
    doc = toy_manifest_doc()
    doc["gaze"].append({"rater_id": "r1", "video_id": "v99", "path": "x.csv"})
    with pytest.raises(IntegrityError, match="v99"):
        parse_manifest(doc)


def test_schema_error_names_field():
    doc = toy_manifest_doc()
    del doc["videos"][1]["frame_dir"]
    with pytest.raises(ManifestError) as e:
        parse_manifest(doc)
    assert e.value.field == "videos[1].frame_dir"
    doc = toy_manifest_doc()
    doc["videos"][0]["duration_s"] = 0
    with pytest.raises(ManifestError) as e:
        parse_manifest(doc)
    assert e.value.field == "videos[0].duration_s"


@pytest.mark.parametrize("dim,bad", [("valence", 3), ("arousal", -1), ("valence", 1.5)])
def test_out_of_scale_rating_rejected(dim, bad):
    doc = toy_manifest_doc()
    doc["ratings"][dim][0][0] = bad
    with pytest.raises(ManifestError, match=dim):
        parse_manifest(doc)


def test_missing_ratings_allowed():
    doc = toy_manifest_doc()
    doc["ratings"]["valence"][1][0] = None
    m = parse_manifest(doc)
    assert np.isnan(m.ratings.valence[1, 0])


def test_round_trip(tmp_path):
    doc = toy_manifest_doc(3, 4)
    doc["ratings"]["arousal"][2][1] = None
    m = parse_manifest(doc, root=str(tmp_path))
    save_manifest(m, tmp_path / "m.json")
    again = load_manifest(tmp_path / "m.json")
    assert again == m
    assert parse_manifest(manifest_to_dict(again)) == m


def test_full_corpus_frame_total():
    # 93 videos of 54 s (18 frames) and 7 of 51 s (17 frames)
    durations = [54.0] * 93 + [51.0] * 7
    m = parse_manifest(toy_manifest_doc(100, 2, durations))
    assert m.total_frames() == 1793


@pytest.mark.parametrize("duration,count", [(60.0, 20), (3.0, 1), (48.16, 17), (0.5, 1), (3.01, 2)])
def test_frame_count_examples(duration, count):
    assert frame_count(duration) == count == loop_count(duration)


def test_frame_count_random_durations_vs_loop():
    rng = np.random.default_rng(0)
    for d in rng.uniform(0.01, 300, 10_000):
        assert frame_count(d) == loop_count(d)


def _video(tmp_path, duration, stamps_ms):
    for t in stamps_ms:
        write_image(tmp_path / "f" / frame_filename(t), np.full((4, 6, 3), t % 251, np.uint8))
    return VideoRecord("v", duration, 6, 4, "f", Level.HIGH, Level.LOW)


def test_sample_frames_sixty_seconds(tmp_path):
    v = _video(tmp_path, 60.0, range(0, 60000, 1000))
    frames = sample_frames(v, tmp_path)
    assert [f.timestamp_s for f in frames] == [3.0 * i for i in range(20)]
    assert frames[-1].timestamp_s == 57.0
    # nearest stored frame is decoded
    assert all(f.pixels[0, 0, 0] == (3000 * f.index) % 251 for f in frames)


def test_sample_frames_nearest_timestamp(tmp_path):
    v = _video(tmp_path, 7.0, [0, 2900, 3200, 6100])
    frames = sample_frames(v, tmp_path)
    assert [int(f.pixels[0, 0, 0]) for f in frames] == [0, 2900 % 251, 6100 % 251]


def test_sample_frames_empty_dir_is_missing_data(tmp_path):
    (tmp_path / "f").mkdir()
    v = VideoRecord("v", 6.0, 6, 4, "f", Level.HIGH, Level.LOW)
    with pytest.raises(MissingDataError):
        sample_frames(v, tmp_path)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e4, allow_nan=False))
def test_frame_times_strictly_before_duration(d):
    n = frame_count(d)
    assert (n - 1) * FRAME_STEP_S < d <= n * FRAME_STEP_S + 1e-9
    assert n == math.ceil(d / 3)
