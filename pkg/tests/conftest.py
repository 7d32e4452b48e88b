import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from synthpose.motionproc import (
    RotationSequence,
    apply_lower_body_noise,
    fix_lower_body,
)
from synthpose.scenegen import RandomizerConfig
from synthpose.skeleton import KeypointSchema, SkeletonDefinition


@pytest.fixture(scope="session")
def skeleton():
    return SkeletonDefinition()


@pytest.fixture(scope="session")
def schema():
    return KeypointSchema()


@pytest.fixture(scope="session")
def config():
    cfg = RandomizerConfig()
    cfg.validate()
    return cfg


def identity_rotation_sequence(skeleton, n_frames=1, frame_rate=20.0):
    J = len(skeleton.joints)
    quats = np.tile(np.array([0.0, 0.0, 0.0, 1.0]), (n_frames, J, 1))
    return RotationSequence(skeleton, frame_rate, np.zeros((n_frames, 3)), quats)


def random_rotation_sequence(skeleton, n_frames, rng, max_angle_deg=60.0, seated=False):
    """Smoothish random animation used as test input."""
    J = len(skeleton.joints)
    quats = np.empty((n_frames, J, 4))
    for j in range(J):
        vec = rng.normal(size=3)
        vec /= np.linalg.norm(vec)
        angle = np.radians(rng.uniform(0, max_angle_deg))
        base = Rotation.from_rotvec(vec * angle)
        quats[:, j] = base.as_quat()
    roots = rng.normal(scale=0.2, size=(n_frames, 3))
    seq = RotationSequence(skeleton, 20.0, roots, quats)
    if seated:
        seq = fix_lower_body(seq)
    return seq


@pytest.fixture(scope="session")
def seated_animations(skeleton):
    """Two short seated noisy clips keyed by id."""
    out = {}
    for i, cid in enumerate(("clip_a", "clip_b")):
        base = identity_rotation_sequence(skeleton, n_frames=24)
        seq = fix_lower_body(base)
        seq = apply_lower_body_noise(seq, np.random.default_rng(100 + i))
        out[cid] = seq
    return out
