"""Kinematic body and camera model tests."""

from __future__ import annotations

import numpy as np
import pytest

from bayesbody.body import (CameraIntrinsics, KinematicBody, backproject,
                            default_body, local_from_world, project,
                            project_points, root_body_from_world,
                            world_from_local, world_from_root_body)
from bayesbody.errors import (BehindCamera, DimensionMismatch,
                              NonPositiveDepth, ParamOutOfRange)
from bayesbody.so3 import Rotation


def _camera(f=1000.0, p=(500.0, 500.0), size=(1000, 1000)):
    return CameraIntrinsics(f=f, p=np.array(p), image_size=size)


class TestCamera:
    def test_validation(self):
        with pytest.raises(ParamOutOfRange):
            _camera(f=-1.0)
        with pytest.raises(ParamOutOfRange):
            _camera(p=(1500.0, 500.0))
        with pytest.raises(DimensionMismatch):
            CameraIntrinsics(f=1.0, p=np.zeros(3), image_size=(10, 10))

    def test_project_optical_axis(self):
        k = _camera()
        for d in (0.1, 1.0, 37.5):
            assert np.allclose(project(k, (0.0, 0.0, d)), k.p)

    def test_project_example(self):
        k = _camera()
        assert np.allclose(project(k, (1.0, 0.0, 10.0)), (600.0, 500.0))

    def test_project_focal_depth_ambiguity(self):
        # doubling f and z with fixed (x, y) leaves the pixel unchanged
        k1, k2 = _camera(f=900.0), _camera(f=1800.0)
        x = np.array([0.3, -0.2, 4.0])
        x2 = np.array([0.3, -0.2, 8.0])
        assert np.allclose(project(k1, x), project(k2, x2))

    def test_project_behind_camera(self):
        k = _camera()
        with pytest.raises(BehindCamera):
            project(k, (0.0, 0.0, 0.0))
        with pytest.raises(BehindCamera):
            project(k, (1.0, 1.0, -2.0))
        with pytest.raises(BehindCamera):
            project_points(k, np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1e-7]]))

    def test_project_points_matches_single(self):
        k = _camera(f=640.0, p=(320.0, 240.0), size=(640, 480))
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(20, 3))
        pts[:, 2] = rng.uniform(1.0, 5.0, size=20)
        batch = project_points(k, pts)
        for i in range(20):
            assert np.allclose(batch[i], project(k, pts[i]))

    def test_backproject_examples(self):
        k = _camera()
        assert np.allclose(backproject(k, k.p, 5.0), (0.0, 0.0, 5.0))
        assert np.allclose(backproject(k, (600.0, 500.0), 10.0), (1.0, 0.0, 10.0))

    def test_backproject_roundtrip(self):
        k = _camera(f=777.0, p=(480.0, 270.0), size=(960, 540))
        rng = np.random.default_rng(1)
        for _ in range(50):
            c = rng.uniform(0, 960, size=2)
            d = rng.uniform(0.1, 30.0)
            assert np.allclose(project(k, backproject(k, c, d)), c, atol=1e-9)

    def test_backproject_depth_validation(self):
        k = _camera()
        with pytest.raises(NonPositiveDepth):
            backproject(k, k.p, 0.0)
        with pytest.raises(NonPositiveDepth):
            backproject(k, k.p, -3.0)

    def test_intrinsics_serde(self):
        k = _camera(f=512.5, p=(100.0, 200.0), size=(800, 600))
        k2 = CameraIntrinsics.from_dict(k.to_dict())
        assert k2.f == k.f
        assert np.array_equal(k2.p, k.p)
        assert k2.image_size == k.image_size


class TestKinematicBody:
    def test_default_dimensions(self):
        body = default_body()
        assert body.n_joints == 53
        assert body.beta_dim == 11
        assert body.n_points == 53 + 2 * 52 == 157
        assert default_body() is body

    def test_tree_validation(self):
        with pytest.raises(DimensionMismatch):
            KinematicBody(np.array([0, 0]), np.zeros((2, 12, 3)))
        with pytest.raises(DimensionMismatch):
            KinematicBody(np.array([-1, 2, 1]), np.zeros((3, 12, 3)))

    def test_identity_pose_is_cumulative_offsets(self):
        body = default_body()
        beta = np.zeros(body.beta_dim)
        theta = [Rotation.identity()] * body.n_joints
        joints = body.joint_positions(theta, beta, np.zeros(3))
        offsets = body.rest_offsets(beta)
        expected = np.zeros((body.n_joints, 3))
        for j in range(1, body.n_joints):
            expected[j] = expected[body.parents[j]] + offsets[j]
        assert np.allclose(joints, expected)

    def test_global_rotation_equivariance(self):
        body = default_body()
        beta = np.zeros(body.beta_dim)
        t = np.array([0.5, -0.2, 3.0])
        rz = Rotation.from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi)
        theta_id = [Rotation.identity()] * body.n_joints
        theta_rot = [rz] + [Rotation.identity()] * (body.n_joints - 1)
        base = body.forward_kinematics(theta_id, beta, t)
        rotated = body.forward_kinematics(theta_rot, beta, t)
        expected = (base - t) @ rz.as_matrix().T + t
        assert np.allclose(rotated, expected, atol=1e-12)

    def test_translation_equivariance(self):
        body = default_body()
        rng = np.random.default_rng(2)
        beta = rng.normal(size=body.beta_dim) * 0.5
        theta = [Rotation.random(rng) for _ in range(body.n_joints)]
        shift = np.array([1.0, 2.0, 3.0])
        a = body.forward_kinematics(theta, beta, np.zeros(3))
        b = body.forward_kinematics(theta, beta, shift)
        assert np.allclose(b, a + shift, atol=1e-12)

    def test_root_at_t(self):
        body = default_body()
        rng = np.random.default_rng(3)
        theta = [Rotation.random(rng) for _ in range(body.n_joints)]
        t = np.array([0.1, 0.2, 2.5])
        joints = body.joint_positions(theta, np.zeros(body.beta_dim), t)
        assert np.allclose(joints[0], t)

    def test_interpolated_points_on_bones(self):
        body = default_body()
        rng = np.random.default_rng(4)
        theta = [Rotation.random(rng) for _ in range(body.n_joints)]
        joints = body.joint_positions(theta, np.zeros(body.beta_dim), np.zeros(3))
        pts = body.body_points(joints)
        nb = body.n_joints - 1
        third = pts[body.n_joints:body.n_joints + nb]
        two_third = pts[body.n_joints + nb:]
        par = joints[body.parents[1:]]
        assert np.allclose(third, par + (joints[1:] - par) / 3.0)
        assert np.allclose(two_third, par + 2.0 * (joints[1:] - par) / 3.0)

    def test_bone_lengths_positive_in_shape_ball(self):
        body = default_body()
        rng = np.random.default_rng(5)
        for _ in range(200):
            beta = rng.standard_normal(body.beta_dim)
            beta *= 3.0 / np.linalg.norm(beta)  # worst case: on the boundary
            assert np.all(body.bone_lengths(beta) > 0)

    def test_scale_component_monotonic(self):
        body = default_body()
        rng = np.random.default_rng(6)
        for _ in range(20):
            beta = rng.standard_normal(body.beta_dim)
            beta *= rng.uniform(0, 3) / np.linalg.norm(beta)
            lo, hi = beta.copy(), beta.copy()
            lo[0] -= 0.25
            hi[0] += 0.25
            assert np.all(body.bone_lengths(hi) > body.bone_lengths(lo))

    def test_theta_length_validation(self):
        body = default_body()
        with pytest.raises(DimensionMismatch):
            body.joint_positions([Rotation.identity()] * 5, np.zeros(11), np.zeros(3))
        with pytest.raises(DimensionMismatch):
            body.rest_offsets(np.zeros(4))

    def test_json_roundtrip(self):
        body = default_body()
        body2 = KinematicBody.from_json(body.to_json())
        assert np.array_equal(body2.parents, body.parents)
        assert np.allclose(body2.basis, body.basis)
        rng = np.random.default_rng(7)
        theta = [Rotation.random(rng) for _ in range(body.n_joints)]
        beta = rng.normal(size=body.beta_dim)
        a = body.forward_kinematics(theta, beta, np.zeros(3))
        b = body2.forward_kinematics(theta, beta, np.zeros(3))
        assert np.array_equal(a, b)

    def test_custom_size(self):
        small = KinematicBody.random(seed=9, n_joints=7, beta_dim=4)
        assert small.n_joints == 7
        assert small.n_points == 7 + 12
        pts = small.forward_kinematics(
            [Rotation.identity()] * 7, np.zeros(4), np.zeros(3))
        assert pts.shape == (19, 3)


class TestPoseConversions:
    def test_local_world_inverse(self):
        body = default_body()
        rng = np.random.default_rng(8)
        local = np.stack([Rotation.random(rng).as_matrix() for _ in range(body.n_joints)])
        world = world_from_local(body.parents, local)
        back = local_from_world(body.parents, world)
        assert np.allclose(back, local, atol=1e-12)

    def test_root_body_inverse(self):
        body = default_body()
        rng = np.random.default_rng(9)
        world = np.stack([Rotation.random(rng).as_matrix() for _ in range(body.n_joints)])
        rb = root_body_from_world(body.parents, world)
        assert np.allclose(rb[0], world[0])
        assert np.allclose(world_from_root_body(body.parents, rb), world, atol=1e-12)

    def test_root_body_semantics(self):
        # body-frame entries are root-relative world orientations
        body = default_body()
        rng = np.random.default_rng(10)
        local = np.stack([Rotation.random(rng).as_matrix() for _ in range(body.n_joints)])
        world = world_from_local(body.parents, local)
        rb = root_body_from_world(body.parents, world)
        for j in range(1, body.n_joints):
            assert np.allclose(rb[j], world[0].T @ world[j], atol=1e-12)


class TestDepthEncodingAmbiguity:
    def test_planar_extent_exactly_ratio_invariant(self):
        # frontoparallel person: equal ln(d/f) gives bitwise-equal extents
        body = default_body()
        rng = np.random.default_rng(11)
        theta = [Rotation.random(rng) for _ in range(body.n_joints)]
        beta = rng.normal(size=body.beta_dim) * 0.5
        flat = body.forward_kinematics(theta, beta, np.zeros(3))
        flat[:, 2] = 0.0
        encoded = np.log(3.0 / 1000.0)
        extents = []
        for f in (500.0, 1000.0, 2000.0):
            d = f * np.exp(encoded)
            k = _camera(f=f)
            px = project_points(k, flat + np.array([0.0, 0.0, d]))
            extents.append(px.max(axis=0) - px.min(axis=0))
        assert np.allclose(extents[0], extents[1], atol=1e-9)
        assert np.allclose(extents[0], extents[2], atol=1e-9)

    def test_full_body_extent_approximately_ratio_invariant(self):
        # true 3D person: invariance holds to first order in (body depth)/d
        body = default_body()
        rng = np.random.default_rng(12)
        theta = [Rotation.random(rng) for _ in range(body.n_joints)]
        beta = rng.normal(size=body.beta_dim) * 0.5
        encoded = np.log(4.0 / 1000.0)
        extents = []
        for f in (800.0, 1600.0):
            d = f * np.exp(encoded)
            k = _camera(f=f)
            t = backproject(k, k.p, d)
            px = project_points(k, body.forward_kinematics(theta, beta, t))
            extents.append(px.max(axis=0) - px.min(axis=0))
        assert np.allclose(extents[0], extents[1], rtol=5e-2)
