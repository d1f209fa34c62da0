import numpy as np
import pytest

from adaffect.model import FrameSample
from adaffect.synthetic import make_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Six short videos with frames, detections, 3 raters' gaze and ratings."""
    root = tmp_path_factory.mktemp("toy")
    return make_corpus(root, n_videos=6, durations=(6.5, 9.5), seed=7, fc8=True)


def make_frame(pixels, video_id="v", index=0):
    return FrameSample(video_id, index, 3.0 * index, np.asarray(pixels, dtype=np.uint8))


def toy_manifest_doc(n_videos=2, n_raters=3, durations=None):
    durations = durations or [10.0] * n_videos
    vids = [f"v{i}" for i in range(n_videos)]
    return {
        "videos": [{"id": v, "duration_s": d, "frame_width": 64, "frame_height": 48,
                    "frame_dir": f"frames/{v}", "expert_valence": "High" if i % 2 == 0 else "Low",
                    "expert_arousal": "Low"} for i, (v, d) in enumerate(zip(vids, durations))],
        "ratings": {"raters": [f"r{j}" for j in range(n_raters)], "items": vids,
                    "valence": [[(i + j) % 5 - 2 for i in range(n_videos)] for j in range(n_raters)],
                    "arousal": [[(i * j) % 5 for i in range(n_videos)] for j in range(n_raters)]},
        "gaze": [{"rater_id": "r0", "video_id": vids[0], "path": "gaze/r0_v0.csv"}],
        "sidecars": {"detections": "det", "features": "feat"},
    }
