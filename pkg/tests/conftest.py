"""Shared fixtures: small cameras, objects and candidate-set builders."""

import numpy as np
import pytest

from graspselect.candidates import CandidateSet, GraspCandidate
from graspselect.geometry import CameraIntrinsics, GraspPose, GripperGeometry
from graspselect.primitives import Cylinder, Part, PrimitiveObject, Sphere


@pytest.fixture
def intr():
    return CameraIntrinsics(fx=300.0, fy=300.0, cx=160.0, cy=120.0,
                            width=320, height=240)


@pytest.fixture
def grip():
    return GripperGeometry()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def sphere_object():
    part = Part(shape=Sphere(radius=0.03), name="ball")
    return PrimitiveObject(name="ball", parts=(part,), regions={"ball": part})


@pytest.fixture
def barbell_object():
    """Two spheres joined by a bar; regions on each end."""
    lo = Part(shape=Sphere(radius=0.025),
              pose=GraspPose(np.eye(3), np.array([0.0, 0.0, 0.025])), name="lo")
    bar = Part(shape=Cylinder(radius=0.008, height=0.08),
               pose=GraspPose(np.eye(3), np.array([0.0, 0.0, 0.09])), name="bar")
    hi = Part(shape=Sphere(radius=0.025),
              pose=GraspPose(np.eye(3), np.array([0.0, 0.0, 0.155])), name="hi")
    return PrimitiveObject(name="barbell", parts=(lo, bar, hi),
                           regions={"lo": lo, "bar": bar, "hi": hi})


def pose_at(contact, grip=GripperGeometry(), rotation=None):
    """Gripper pose whose contact point lands at ``contact``."""
    rot = np.eye(3) if rotation is None else rotation
    t = np.asarray(contact, dtype=np.float64) - grip.finger_length * rot[:, 2]
    return GraspPose(rot, t)


def make_candidates(contacts, confidences, grip=GripperGeometry()):
    """Candidate set with identity-rotation poses placed at given contacts."""
    cands = [GraspCandidate(pose=pose_at(c, grip), confidence=conf,
                            contact=np.asarray(c, dtype=np.float64), id=i)
             for i, (c, conf) in enumerate(zip(contacts, confidences))]
    return CandidateSet(candidates=tuple(cands))
