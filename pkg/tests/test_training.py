"""Objective, mode-guiding losses, and the Adam training loop."""

from __future__ import annotations

import numpy as np
import pytest

import bayesbody.autodiff as ad
from bayesbody.body import CameraIntrinsics, KinematicBody, backproject
from bayesbody.distributions import fisher_log_density, gaussian_log_density
from bayesbody.errors import EmptyList, NonFiniteLoss, ParamOutOfRange
from bayesbody.graph import (ED_BASE, BayesNet, camera_log_density,
                             camera_ray_augment,
                             detection_scores, predict_node)
from bayesbody.so3 import Rotation
from bayesbody.synthdata import (GeneratorConfig, GtPerson, SceneObservation,
                                 generate_dataset, gt_assignment)
from bayesbody.training import (Adam, LossBreakdown, TrainConfig, loss_mesh,
                                loss_prob, loss_reproj, train, write_loss_csv)


def _toy_body(seed=2, n_joints=4, beta_dim=3):
    return KinematicBody.random(seed=seed, n_joints=n_joints, beta_dim=beta_dim)


def _toy_net(body, preset="condimen", seed=0, **kw):
    args = dict(feature_dim=8, hidden_dim=8, n_bones=body.n_joints,
                beta_dim=body.beta_dim, gamma_dim=10, grid_level=0)
    args.update(kw)
    return BayesNet(preset=preset, seed=seed, **args)


def _toy_dataset(body, n_scenes=2, seed=11, fdim=8):
    cfg = GeneratorConfig(feature_dim=fdim, grid=(4, 4), image_size=(128, 128),
                          head_margin=16.0)
    return generate_dataset(n_scenes=n_scenes, n_views=1, seed=seed,
                            people_range=(1, 2), config=cfg, body=body)


def _randomize(net, seed=7, scale=0.1):
    rng = np.random.default_rng(seed)
    for p in net.parameters:
        p.value = p.value + rng.normal(0.0, scale, size=p.value.shape)


def _crafted_obs(body, head_px, d, f=900.0, theta_local=None, beta=None,
                 cell=None, fdim=8, grid=(4, 4), image=(128, 128)):
    """Single-person observation with hand-chosen ground truth."""
    rng = np.random.default_rng(99)
    k = CameraIntrinsics(f=f, p=np.array(image) / 2.0, image_size=image)
    head_px = np.asarray(head_px, dtype=float)
    cw, ch = image[0] / grid[1], image[1] / grid[0]
    cell = cell or (int(head_px[0] // cw), int(head_px[1] // ch))
    theta = (np.tile(np.eye(3), (body.n_joints, 1, 1))
             if theta_local is None else np.asarray(theta_local, float))
    gt = GtPerson(person_id=0, t=backproject(k, head_px, d), theta_local=theta,
                  beta=np.zeros(body.beta_dim) if beta is None else beta,
                  gamma=np.zeros(10), head_px=head_px, cell=cell)
    return SceneObservation(patch_features=rng.normal(size=(*grid, fdim)),
                            global_feature=rng.normal(size=fdim), gt=[gt],
                            k=k, view_id=0, scene_id=0)


def _fd_check(loss_fn, params, rng, n_coords, tol=1e-3, step=1e-5):
    """Sampled central-difference check of d(loss)/d(param coordinates)."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    ad.backward(loss)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.value)
             for p in params]
    worst = 0.0
    for _ in range(n_coords):
        pi = int(rng.integers(len(params)))
        ci = int(rng.integers(params[pi].value.size))
        p = params[pi]
        orig = float(p.value.flat[ci])
        p.value.flat[ci] = orig + step
        with ad.no_grad():
            up = float(loss_fn().value)
        p.value.flat[ci] = orig - step
        with ad.no_grad():
            dn = float(loss_fn().value)
        p.value.flat[ci] = orig
        fd = (up - dn) / (2.0 * step)
        an = float(grads[pi].flat[ci])
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    assert worst < tol, f"worst relative gradient error {worst:.3g}"


class TestLossProb:
    def test_factorizes_on_independent_attributes(self):
        body = _toy_body()
        net = _toy_net(body, preset="naive_bayes")
        _randomize(net)
        obs = _toy_dataset(body, n_scenes=1, seed=4)[0].views[0]
        asg = gt_assignment(obs, body=body)
        got = float(loss_prob(net, [(obs, asg)]).value)

        k = asg.intrinsics
        total = camera_log_density(
            predict_node(net, "intrinsics",
                         {"global_feature": obs.global_feature}), k)
        h, w, _ = obs.patch_features.shape
        probs = detection_scores(net, obs, k).scores
        y = np.zeros((h, w))
        for person in asg.persons:
            y[person.cell[1], person.cell[0]] = 1.0
        total += float(np.sum(y * np.log(probs) + (1 - y) * np.log1p(-probs)))
        for person in asg.persons:
            u, v = person.cell
            feats = camera_ray_augment(obs.patch_features[v, u], (u, v), k,
                                       (h, w))
            for node in ("center2d", "encoded_depth", "shape", "expression"):
                params = predict_node(net, node, {"detection_features": feats})
                total += gaussian_log_density(
                    params, np.atleast_1d(person.value_of(node)))
            pose_params = predict_node(net, "pose",
                                       {"detection_features": feats})
            for j, pj in enumerate(pose_params):
                total += fisher_log_density(
                    pj, Rotation.from_matrix(person.pose[j]), net.normalizer)
        assert got == pytest.approx(-total, rel=1e-9)

    def test_mean_over_batch(self):
        body = _toy_body()
        net = _toy_net(body)
        _randomize(net)
        scenes = _toy_dataset(body, n_scenes=2, seed=5)
        pairs = [(s.views[0], gt_assignment(s.views[0], body=body))
                 for s in scenes]
        separate = [float(loss_prob(net, [p]).value) for p in pairs]
        together = float(loss_prob(net, pairs).value)
        assert together == pytest.approx(np.mean(separate), rel=1e-12)

    def test_entropy_floor_monotone_in_dispersion(self):
        # mu equals ground truth, so the only sigma dependence is sum(ln sigma)
        body = _toy_body()
        net = _toy_net(body)
        obs = _crafted_obs(body, head_px=(48.0, 80.0), d=900.0)
        asg = gt_assignment(obs, body=body)
        head = net.heads["shape"]
        dim = net.nodes["shape"].dim
        raws = [2.0, 0.0, -2.0, -5.0, -40.0]
        losses = []
        for s in raws:
            head.b_out.value = head.b_out.value.copy()
            head.b_out.value[dim:] = s
            losses.append(float(loss_prob(net, [(obs, asg)]).value))
        assert all(a > b for a, b in zip(losses, losses[1:]))
        for s, ls in zip(raws, losses):
            gap = dim * (np.log1p(np.exp(s)) - np.log1p(np.exp(-40.0)))
            assert ls - losses[-1] == pytest.approx(gap, abs=1e-9)

    def test_empty_batch_raises(self):
        body = _toy_body()
        with pytest.raises(EmptyList):
            loss_prob(_toy_net(body), [])

    def test_gradients_match_finite_differences(self):
        body = _toy_body()
        net = _toy_net(body)
        _randomize(net)
        obs = _toy_dataset(body, n_scenes=1, seed=4)[0].views[0]
        asg = gt_assignment(obs, body=body)
        _fd_check(lambda: loss_prob(net, [(obs, asg)]), net.parameters,
                  np.random.default_rng(0), n_coords=70)


class TestLossReproj:
    def test_zero_when_modes_equal_ground_truth(self):
        # untrained heads decode zero offsets, ln(d/f) = ED_BASE and identity
        # pose; a person crafted to exactly those values reprojects onto itself
        body = _toy_body()
        net = _toy_net(body)
        obs = _crafted_obs(body, head_px=(48.0, 80.0),
                           d=900.0 * np.exp(ED_BASE), f=900.0)
        asg = gt_assignment(obs, body=body)
        assert float(loss_reproj(net, obs, obs.k, asg, body=body).value) \
            == pytest.approx(0.0, abs=1e-9)

    def test_uniform_pixel_offset_equals_delta(self):
        # planar body at uniform depth: a head-keypoint offset of delta
        # pixels shifts every projected point by exactly (delta, 0)
        parents = np.array([-1, 0, 1, 2])
        basis = np.zeros((4, 4, 3))
        basis[1, 0] = [0.10, 0.02, 0.0]
        basis[2, 0] = [-0.05, 0.08, 0.0]
        basis[3, 0] = [0.03, -0.07, 0.0]
        basis[1:, 1] = 0.1 * basis[1:, 0]
        body = KinematicBody(parents, basis)
        net = _toy_net(body)
        delta = 3.0
        obs = _crafted_obs(body, head_px=(48.0 + delta, 80.0),
                           d=900.0 * np.exp(ED_BASE), f=900.0, cell=(1, 2))
        asg = gt_assignment(obs, body=body)
        for norm in ("l1", "l2"):
            val = float(loss_reproj(net, obs, obs.k, asg, body=body,
                                    point_norm=norm).value)
            assert val == pytest.approx(delta, rel=1e-9)

    def test_depth_floor_penalty_engages(self):
        body = _toy_body()
        net = _toy_net(body)
        net.heads["encoded_depth"].b_out.value = \
            net.heads["encoded_depth"].b_out.value.copy()
        net.heads["encoded_depth"].b_out.value[0] = -20.0  # d ~ 2e-6 f
        obs = _crafted_obs(body, head_px=(48.0, 80.0), d=900.0)
        asg = gt_assignment(obs, body=body)
        with_pen = loss_reproj(net, obs, obs.k, asg, body=body,
                               behind_penalty=1.0)
        without = loss_reproj(net, obs, obs.k, asg, body=body,
                              behind_penalty=0.0)
        assert np.isfinite(with_pen.value)
        assert float(with_pen.value) > float(without.value)
        ad.backward(with_pen)
        assert all(p.grad is None or np.all(np.isfinite(p.grad))
                   for p in net.parameters)

    def test_gradients_match_finite_differences(self):
        body = _toy_body()
        net = _toy_net(body)
        _randomize(net)
        obs = _toy_dataset(body, n_scenes=1, seed=4)[0].views[0]
        wpx, hpx = obs.k.image_size
        k_in = CameraIntrinsics(f=0.7 * obs.k.f,
                                p=np.array([wpx / 2.0, hpx / 2.0]),
                                image_size=obs.k.image_size)
        asg = gt_assignment(obs, k_input=k_in, body=body)
        _fd_check(lambda: loss_reproj(net, obs, k_in, asg, body=body),
                  net.parameters, np.random.default_rng(1), n_coords=70)

    def test_overfitting_one_scene_halves_the_loss(self):
        body = _toy_body()
        net = _toy_net(body)
        data = _toy_dataset(body, n_scenes=1, seed=21)
        config = TrainConfig(learning_rate=3e-3, batch_size=2, steps=200,
                             seed=0, gt_intrinsics_fraction=1.0)
        curve = train(net, data, config, body=body)
        assert curve[-1].l_reproj < 0.5 * curve[0].l_reproj


class TestLossMesh:
    def test_translation_error_cancels(self):
        # modes match gt in shape and pose but not in depth: human-centered
        # residual is zero while the reprojection residual is not
        body = _toy_body()
        net = _toy_net(body)
        obs = _crafted_obs(body, head_px=(48.0, 80.0), d=1.0, f=900.0)
        asg = gt_assignment(obs, body=body)
        assert float(loss_mesh(net, obs, asg, body=body).value) \
            == pytest.approx(0.0, abs=1e-9)
        assert float(loss_reproj(net, obs, obs.k, asg, body=body).value) > 1.0

    def test_global_rotation_matches_chord_formula(self):
        body = _toy_body()
        net = _toy_net(body)
        phi = 0.7
        axis = np.array([0.36, -0.48, 0.8])
        theta = np.tile(np.eye(3), (body.n_joints, 1, 1))
        theta[0] = Rotation.from_axis_angle(axis, phi).as_matrix()
        obs = _crafted_obs(body, head_px=(48.0, 80.0), d=900.0, f=900.0,
                           theta_local=theta)
        asg = gt_assignment(obs, body=body)
        got = float(loss_mesh(net, obs, asg, body=body,
                              point_norm="l2").value)
        rest = body.forward_kinematics(
            np.tile(np.eye(3), (body.n_joints, 1, 1)),
            np.zeros(body.beta_dim), np.zeros(3))
        radial = rest - np.outer(rest @ axis, axis)
        expect = float(np.mean(2.0 * np.sin(phi / 2.0)
                               * np.linalg.norm(radial, axis=1)))
        assert got == pytest.approx(expect, rel=1e-5)

    def test_gradients_match_finite_differences(self):
        body = _toy_body()
        net = _toy_net(body)
        _randomize(net)
        obs = _toy_dataset(body, n_scenes=1, seed=4)[0].views[0]
        asg = gt_assignment(obs, body=body)
        _fd_check(lambda: loss_mesh(net, obs, asg, body=body),
                  net.parameters, np.random.default_rng(2), n_coords=70)


class TestTrainLoop:
    def test_progress_on_small_dataset(self):
        body = _toy_body()
        net = _toy_net(body)
        data = _toy_dataset(body, n_scenes=16, seed=31)
        config = TrainConfig(learning_rate=1e-4, batch_size=8, steps=500,
                             seed=0)
        curve = train(net, data, config, body=body)
        assert curve[-1].l_prob < curve[0].l_prob
        assert all(np.all(np.isfinite(p.value)) for p in net.parameters)

    def test_breakdown_identity_and_mesh_schedule(self):
        body = _toy_body()
        net = _toy_net(body)
        data = _toy_dataset(body, n_scenes=4, seed=13)
        config = TrainConfig(learning_rate=1e-4, batch_size=4, steps=12,
                             seed=5, gt_intrinsics_fraction=0.5)
        curve = train(net, data, config, body=body)
        for row in curve:
            assert row.total == row.l_prob + row.l_mesh + row.l_reproj
        flags = [row.l_mesh != 0.0 for row in curve]
        assert any(flags) and not all(flags)

    def test_fraction_one_keeps_mesh_every_step(self):
        body = _toy_body()
        data = _toy_dataset(body, n_scenes=4, seed=13)
        net = _toy_net(body)
        curve = train(net, data,
                      TrainConfig(learning_rate=1e-4, batch_size=4, steps=8,
                                  seed=5, gt_intrinsics_fraction=1.0),
                      body=body)
        assert all(row.l_mesh != 0.0 for row in curve)
        net = _toy_net(body)
        curve = train(net, data,
                      TrainConfig(learning_rate=1e-4, batch_size=4, steps=8,
                                  seed=5, gt_intrinsics_fraction=0.0),
                      body=body)
        assert all(row.l_mesh == 0.0 for row in curve)

    def test_zero_learning_rate_is_bitwise_noop(self):
        body = _toy_body()
        net = _toy_net(body)
        _randomize(net)
        before = [p.value.copy() for p in net.parameters]
        data = _toy_dataset(body, n_scenes=2, seed=13)
        train(net, data, TrainConfig(learning_rate=0.0, batch_size=2,
                                     steps=3, seed=1), body=body)
        for b, p in zip(before, net.parameters):
            assert np.array_equal(b, p.value)

    def test_same_seed_reproduces_curve(self):
        body = _toy_body()
        data = _toy_dataset(body, n_scenes=4, seed=13)
        runs = []
        for _ in range(2):
            net = _toy_net(body)
            runs.append(train(net, data,
                              TrainConfig(learning_rate=1e-3, batch_size=4,
                                          steps=6, seed=9), body=body))
        assert runs[0] == runs[1]
        net = _toy_net(body)
        other = train(net, data,
                      TrainConfig(learning_rate=1e-3, batch_size=4,
                                  steps=6, seed=10), body=body)
        assert other != runs[0]

    def test_non_finite_loss_names_the_batch(self):
        body = _toy_body()
        net = _toy_net(body)
        net.heads["shape"].b_out.value = net.heads["shape"].b_out.value.copy()
        net.heads["shape"].b_out.value[0] = np.nan
        data = _toy_dataset(body, n_scenes=2, seed=13)
        with pytest.raises(NonFiniteLoss, match="batch 0"):
            train(net, data, TrainConfig(learning_rate=1e-4, batch_size=2,
                                         steps=2, seed=1), body=body)

    def test_empty_dataset_raises(self):
        body = _toy_body()
        with pytest.raises(EmptyList):
            train(_toy_net(body), [], TrainConfig(steps=1), body=body)

    def test_checkpoint_and_csv_outputs(self, tmp_path):
        body = _toy_body()
        net = _toy_net(body)
        data = _toy_dataset(body, n_scenes=2, seed=13)
        csv = tmp_path / "loss.csv"
        ckpt = tmp_path / "net.json"
        curve = train(net, data,
                      TrainConfig(learning_rate=1e-3, batch_size=2, steps=4,
                                  seed=2),
                      body=body, loss_csv=str(csv), checkpoint=str(ckpt))
        lines = csv.read_text().splitlines()
        assert lines[0] == "step,l_prob,l_mesh,l_reproj,total"
        assert len(lines) == len(curve) + 1
        write_loss_csv(curve, str(tmp_path / "again.csv"))
        assert (tmp_path / "again.csv").read_bytes() == csv.read_bytes()
        loaded = BayesNet.load(str(ckpt))
        for a, b in zip(loaded.parameters, net.parameters):
            assert np.array_equal(a.value, b.value)


class TestConfigAndOptimizer:
    def test_config_validation(self):
        with pytest.raises(ParamOutOfRange):
            TrainConfig(batch_size=0)
        with pytest.raises(ParamOutOfRange):
            TrainConfig(gt_intrinsics_fraction=1.5)
        with pytest.raises(ParamOutOfRange):
            TrainConfig(fov_range_deg=(0.0, 170.0))
        with pytest.raises(ParamOutOfRange):
            TrainConfig(fov_range_deg=(170.0, 5.0))
        with pytest.raises(ParamOutOfRange):
            TrainConfig(point_norm="linf")

    def test_adam_first_step_formula(self):
        p = ad.var(np.array([1.0, -2.0]))
        opt = Adam([p], learning_rate=0.1)
        p.grad = np.array([0.5, -0.25])
        opt.step()
        expect = np.array([1.0, -2.0]) - 0.1 * np.array([0.5, -0.25]) / (
            np.abs(np.array([0.5, -0.25])) + 1e-8)
        assert np.allclose(p.value, expect, rtol=0, atol=1e-12)

    def test_adam_none_grads_are_zero(self):
        p = ad.var(np.array([3.0]))
        opt = Adam([p], learning_rate=0.1)
        opt.step()
        assert np.array_equal(p.value, np.array([3.0]))

    def test_loss_breakdown_is_frozen(self):
        row = LossBreakdown(1.0, 2.0, 3.0, 6.0)
        with pytest.raises(AttributeError):
            row.total = 0.0
