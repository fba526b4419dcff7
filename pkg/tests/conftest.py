import numpy as np
import pytest

from pathlib import Path

from toonmotion.bvh import GestureClip, Joint, Skeleton
from toonmotion.gesture_retrieval import load_gesture_dataset
from toonmotion.providers import ReferenceEmbedder

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = FIXTURES / "goldens"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def goldens_dir() -> Path:
    return GOLDENS


@pytest.fixture(scope="session")
def embedder():
    return ReferenceEmbedder()


@pytest.fixture(scope="session")
def gesture_dataset(embedder):
    return load_gesture_dataset(FIXTURES / "gestures" / "gestures.jsonl", embedder)


def make_skeleton(n_joints: int = 2) -> Skeleton:
    joints = [Joint("Hips", -1, np.array([0.0, 90.0, 0.0]), "ZXY", has_position=True)]
    for i in range(1, n_joints):
        joints.append(
            Joint(f"J{i}", i - 1, np.array([0.0, 10.0, 0.0]), "ZXY")
        )
    return Skeleton(joints)


def constant_clip(
    skeleton: Skeleton,
    quat_by_joint: np.ndarray,
    frame_count: int = 31,
    fps: float = 30.0,
    source_id: str = "clip",
) -> GestureClip:
    n = len(skeleton.joints)
    rotations = np.tile(np.asarray(quat_by_joint).reshape(1, n, 4), (frame_count, 1, 1))
    root = np.tile(np.array([0.0, 90.0, 0.0]), (frame_count, 1))
    return GestureClip(skeleton, fps, root, rotations, source_id)


def identity_quats(n_joints: int) -> np.ndarray:
    q = np.zeros((n_joints, 4))
    q[:, 0] = 1.0
    return q
