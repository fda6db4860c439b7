import math

import numpy as np
import pytest

from robust_bundle_adjust.errors import BehindCamera, ValidationError
from robust_bundle_adjust.geometry import (
    CameraPose,
    Intrinsics,
    WorldPoint,
    back_project,
    canonicalize_rotation,
    default_intrinsics,
    jacobians,
    left_jacobian,
    project,
)

INTR = Intrinsics(focal_length=800.0, principal_point=(512.0, 384.0), image_size=(1024.0, 768.0))


def rodrigues(r):
    theta = np.linalg.norm(r)
    if theta == 0:
        return np.eye(3)
    k = r / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * K + (1 - math.cos(theta)) * K @ K


def homogeneous_projection(pose, intr, X):
    K = np.array(
        [[intr.focal_length, 0, intr.principal_point[0]], [0, intr.focal_length, intr.principal_point[1]], [0, 0, 1]]
    )
    R = rodrigues(np.asarray(pose.rotation))
    P = K @ np.hstack([R, (-R @ pose.position)[:, None]])
    x = P @ np.append(X, 1.0)
    return x[:2] / x[2]


def random_configuration(rng):
    pose = CameraPose(position=rng.uniform(-50, 50, 3) + [0, 0, -100], rotation=rng.normal(0, 0.3, 3))
    R = rodrigues(pose.rotation)
    # a point in front of the camera, expressed in the world frame
    local = np.array([rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(50, 150)])
    return pose, WorldPoint(R.T @ local + pose.position)


def test_point_on_optical_axis_projects_to_principal_point():
    pixel = project(CameraPose(position=np.zeros(3)), INTR, WorldPoint([0, 0, 7.5]))
    np.testing.assert_allclose(pixel, INTR.principal_point)


def test_similar_triangles():
    pixel = project(CameraPose(position=np.zeros(3)), INTR, WorldPoint([2.0, 0, 10.0]))
    np.testing.assert_allclose(pixel, [512.0 + 800.0 * 0.2, 384.0])


def test_matches_homogeneous_matrix_pipeline(rng):
    for _ in range(50):
        pose, point = random_configuration(rng)
        expected = homogeneous_projection(pose, INTR, point.coords)
        np.testing.assert_allclose(project(pose, INTR, point), expected, rtol=1e-12)


def test_behind_camera():
    with pytest.raises(BehindCamera) as info:
        project(CameraPose(position=np.zeros(3)), INTR, WorldPoint([0, 0, -1.0]))
    assert info.value.depth == -1.0


def central_differences(pose, point, h_rot=1e-6, h_pos=1e-4):
    vec = pose.as_vector()
    A = np.zeros((2, 6))
    for k in range(6):
        h = h_rot if k < 3 else h_pos
        e = np.zeros(6)
        e[k] = h
        plus = project(CameraPose.from_vector(vec + e), INTR, point)
        minus = project(CameraPose.from_vector(vec - e), INTR, point)
        A[:, k] = (plus - minus) / (2 * h)
    B = np.zeros((2, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h_pos
        plus = project(pose, INTR, WorldPoint(point.coords + e))
        minus = project(pose, INTR, WorldPoint(point.coords - e))
        B[:, k] = (plus - minus) / (2 * h_pos)
    return A, B


def test_jacobians_match_finite_differences(rng):
    for _ in range(30):
        pose, point = random_configuration(rng)
        A, B = jacobians(pose, INTR, point)
        A_fd, B_fd = central_differences(pose, point)
        assert np.linalg.norm(A - A_fd) < 1e-5 * np.linalg.norm(A)
        assert np.linalg.norm(B - B_fd) < 1e-5 * np.linalg.norm(B)


def test_jacobians_at_larger_rotation(rng):
    pose = CameraPose(position=[0, 0, -100], rotation=[2.0, -1.0, 0.5])
    R = rodrigues(pose.rotation)
    point = WorldPoint(R.T @ np.array([5.0, -3.0, 80.0]) + pose.position)
    A, B = jacobians(pose, INTR, point)
    A_fd, B_fd = central_differences(pose, point)
    assert np.linalg.norm(A - A_fd) < 1e-5 * np.linalg.norm(A)
    assert np.linalg.norm(B - B_fd) < 1e-5 * np.linalg.norm(B)


def test_translating_camera_and_point_together_is_a_gauge_direction(rng):
    pose, point = random_configuration(rng)
    A, B = jacobians(pose, INTR, point)
    np.testing.assert_allclose(A[:, 3] + B[:, 0], 0.0, atol=1e-9)


def test_on_axis_symmetry():
    _, B = jacobians(CameraPose(position=np.zeros(3)), INTR, WorldPoint([0, 0, 10.0]))
    assert B[0, 1] == 0.0
    assert B[1, 0] == 0.0
    assert B[0, 2] == 0.0 and B[1, 2] == 0.0


def test_projection_invariant_under_canonicalization(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    r = 2.5 * axis
    r_alt = (2.5 - 2 * math.pi) * axis
    position = np.array([1.0, 2.0, -100.0])
    point = WorldPoint(rodrigues(r).T @ np.array([3.0, -4.0, 90.0]) + position)
    a = project(CameraPose(position=position, rotation=r), INTR, point)
    b = project(CameraPose(position=position, rotation=r_alt), INTR, point)
    np.testing.assert_allclose(a, b, rtol=1e-12)
    np.testing.assert_allclose(canonicalize_rotation(r_alt), r, atol=1e-12)


def test_canonical_rotation_magnitude_at_most_pi():
    r = canonicalize_rotation([0.0, 0.0, 5.0])
    assert np.linalg.norm(r) <= math.pi
    np.testing.assert_allclose(r, [0.0, 0.0, 5.0 - 2 * math.pi])


def test_left_jacobian_series_is_continuous():
    r = np.array([[0.0, 0.0, 0.99e-4], [0.0, 0.0, 1.01e-4]])
    J = left_jacobian(r)
    np.testing.assert_allclose(J[0], J[1], atol=1e-5)
    np.testing.assert_allclose(left_jacobian(np.zeros(3))[0], np.eye(3))


def test_back_project_ray_hits_point(rng):
    pose, point = random_configuration(rng)
    centre, ray = back_project(pose, INTR, project(pose, INTR, point))
    offset = point.coords - centre
    assert np.linalg.norm(np.cross(offset, ray)) < 1e-9 * np.linalg.norm(offset)
    assert offset @ ray > 0
    assert math.isclose(np.linalg.norm(ray), 1.0)


def test_default_intrinsics_field_of_view():
    intr = default_intrinsics(1024.0, 74.0)
    assert intr.principal_point == (512.0, 512.0)
    assert math.isclose(2 * math.degrees(math.atan(512.0 / intr.focal_length)), 74.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"focal_length": 0.0, "principal_point": (1, 1), "image_size": (2, 2)},
        {"focal_length": 1.0, "principal_point": (1, 1), "image_size": (0, 2)},
    ],
)
def test_invalid_intrinsics(kwargs):
    with pytest.raises(ValidationError):
        Intrinsics(**kwargs)


def test_pose_vector_layout():
    pose = CameraPose(position=[1, 2, 3], rotation=[0.1, 0.2, 0.3])
    np.testing.assert_array_equal(pose.as_vector(), [0.1, 0.2, 0.3, 1, 2, 3])
    with pytest.raises(ValueError):
        pose.position[0] = 5.0


def test_frozen_pose_arrays_reach_scipy_as_writable_copies():
    pose = CameraPose(position=[1.0, -2.0, -100.0], rotation=[0.01, -0.02, 0.03])
    assert not pose.rotation.flags.writeable
    R = pose.rotation_matrix()
    np.testing.assert_allclose(R, rodrigues(np.array(pose.rotation)), atol=1e-14)
    np.testing.assert_allclose(canonicalize_rotation(pose.rotation), pose.rotation, atol=1e-15)
    pixel = project(pose, INTR, WorldPoint([1.0, -2.0, 0.0]))
    np.testing.assert_allclose(pixel, homogeneous_projection(pose, INTR, np.array([1.0, -2.0, 0.0])))
    assert not pose.rotation.flags.writeable
