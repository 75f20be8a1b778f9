import numpy as np
import pytest

from relumo import (
    ColorSpace,
    CrossProjector,
    DecomposeInit,
    Decomposition,
    DivergenceError,
    Image,
    Mask,
    OptimizerConfig,
    albedo_consistency_loss,
    appearance_loss,
    cross_render_loss,
    decompose,
    load_decomposition,
    normals_from_depth,
    relative_rotation,
    save_decomposition,
    shade,
)
from relumo.decompose import (
    _NeighborContext,
    _objective,
    normals_to_stereo,
    stereo_jacobian,
    stereo_to_normals,
)
from relumo.imaging import lab_from_linear
from relumo.shlight import ShLighting

from conftest import (
    make_lambertian_scene,
    make_plane_camera,
    random_lighting,
    random_unit_normals,
    two_view_plane_scene,
)


def truth_decomposition(scene, residual=None):
    h, w = scene["image"].height, scene["image"].width
    return Decomposition(
        albedo=scene["albedo"],
        normals=scene["normals"],
        shadow=scene["shadow"],
        lighting=scene["lighting"],
        residual=residual or Image(np.zeros((h, w, 3))),
        mask=scene["mask"],
    )


class TestStereographic:
    def test_round_trip(self, rng):
        uv = rng.uniform(-3, 3, size=(50, 2))
        n = stereo_to_normals(uv)
        assert np.abs(np.linalg.norm(n, axis=-1) - 1).max() < 1e-12
        back = normals_to_stereo(n)
        assert np.abs(back - uv).max() < 1e-9

    def test_camera_facing_at_origin(self):
        n = stereo_to_normals(np.zeros((1, 2)))
        assert np.allclose(n, [0.0, 0.0, -1.0])

    def test_jacobian_matches_fd(self, rng):
        uv = rng.uniform(-2, 2, size=(20, 2))
        J = stereo_jacobian(uv)
        h = 1e-6
        for k in range(2):
            d = np.zeros(2)
            d[k] = h
            fd = (stereo_to_normals(uv + d) - stereo_to_normals(uv - d)) / (2 * h)
            assert np.abs(J[..., k] - fd).max() < 1e-8


class TestAppearanceLoss:
    def test_exact_model_is_zero(self, rng):
        shadow = np.where(rng.uniform(size=(16, 16)) > 0.5, 1.0, 0.6)
        scene = make_lambertian_scene(rng, shadow=shadow)
        loss, grads = appearance_loss(scene["image"], truth_decomposition(scene))
        assert loss < 1e-20
        assert np.abs(grads["albedo"]).max() < 1e-10

    def test_s_equal_one_reduces_to_plain_residual(self, rng):
        scene = make_lambertian_scene(rng, h=8, w=8)
        d = truth_decomposition(scene)
        img = Image(rng.uniform(0.05, 0.9, size=(8, 8, 3)))
        loss, _ = appearance_loss(img, d)
        model = d.albedo.data * shade(d.normals, d.lighting).data
        direct = float(((img.data - model) ** 2).sum())
        assert abs(loss - direct) < 1e-12 * max(direct, 1.0)

    def test_gradients_match_fd_per_key(self, rng):
        h = w = 6
        scene = make_lambertian_scene(rng, h=h, w=w)
        img = Image(rng.uniform(0.05, 0.5, size=(h, w, 3)))
        albedo = Image(rng.uniform(0.2, 0.8, size=(h, w, 3)))
        normals = Image(random_unit_normals(rng, h, w), ColorSpace.SCALAR)
        shadow = Image(rng.uniform(0.55, 0.9, size=(h, w, 1)), ColorSpace.SCALAR)
        d = Decomposition(albedo, normals, shadow, scene["lighting"],
                          Image(np.zeros((h, w, 3))), scene["mask"])
        loss, grads = appearance_loss(img, d)
        step = 1e-6

        def loss_at(dd):
            return appearance_loss(img, dd)[0]

        # albedo coordinate
        for _ in range(5):
            i, j, c = rng.integers(h), rng.integers(w), rng.integers(3)
            bump = np.zeros((h, w, 3))
            bump[i, j, c] = step
            fd = (loss_at(Decomposition(Image(albedo.data + bump), normals, shadow,
                                        d.lighting, d.residual, d.mask))
                  - loss_at(Decomposition(Image(albedo.data - bump), normals, shadow,
                                          d.lighting, d.residual, d.mask))) / (2 * step)
            assert abs(grads["albedo"][i, j, c] - fd) < 1e-4 * max(abs(fd), 1e-3)

        # shadow coordinate
        for _ in range(5):
            i, j = rng.integers(h), rng.integers(w)
            bump = np.zeros((h, w, 1))
            bump[i, j, 0] = step
            fd = (loss_at(Decomposition(albedo, normals, Image(shadow.data + bump, ColorSpace.SCALAR),
                                        d.lighting, d.residual, d.mask))
                  - loss_at(Decomposition(albedo, normals, Image(shadow.data - bump, ColorSpace.SCALAR),
                                          d.lighting, d.residual, d.mask))) / (2 * step)
            assert abs(grads["shadow"][i, j] - fd) < 1e-4 * max(abs(fd), 1e-3)

        # lighting coordinate
        for _ in range(5):
            c, q = rng.integers(3), rng.integers(9)
            bump = np.zeros((3, 9))
            bump[c, q] = step
            fd = (loss_at(Decomposition(albedo, normals, shadow, ShLighting(d.lighting.coeffs + bump),
                                        d.residual, d.mask))
                  - loss_at(Decomposition(albedo, normals, shadow, ShLighting(d.lighting.coeffs - bump),
                                          d.residual, d.mask))) / (2 * step)
            assert abs(grads["lighting"][c, q] - fd) < 1e-4 * max(abs(fd), 1e-3)

        # normal (stereographic) coordinate
        uv = normals_to_stereo(normals.data)
        for _ in range(5):
            i, j, k = rng.integers(h), rng.integers(w), rng.integers(2)
            bump = np.zeros((h, w, 2))
            bump[i, j, k] = step
            np_ = Image(stereo_to_normals(uv + bump), ColorSpace.SCALAR)
            nm_ = Image(stereo_to_normals(uv - bump), ColorSpace.SCALAR)
            fd = (loss_at(Decomposition(albedo, np_, shadow, d.lighting, d.residual, d.mask))
                  - loss_at(Decomposition(albedo, nm_, shadow, d.lighting, d.residual, d.mask))) / (2 * step)
            assert abs(grads["normal_uv"][i, j, k] - fd) < 1e-4 * max(abs(fd), 1e-3)

    def test_empty_mask_rejected(self, rng):
        scene = make_lambertian_scene(rng, h=6, w=6)
        d = truth_decomposition(scene)
        empty = Decomposition(d.albedo, d.normals, d.shadow, d.lighting, d.residual,
                              Mask(np.zeros((6, 6), dtype=bool)))
        with pytest.raises(ValueError, match="mask"):
            appearance_loss(scene["image"], empty)


def fd_probe_objective(rng, img, mask, cfg, contexts, h, w):
    """One full-objective directional FD probe, avoiding the model's
    non-smooth sets (the min(1, i/s) kink and the shading clamp)."""
    while True:
        A = rng.uniform(0.25, 0.55, size=(h, w, 3))
        UV = rng.uniform(-0.6, 0.6, size=(h, w, 2))
        US = rng.uniform(-3.5, 3.5, size=(h, w))
        L = rng.uniform(-0.05, 0.05, size=(3, 9))
        L[:, 0] += 1.0
        s = 1.0 / (1.0 + np.exp(-US))
        ratio = img.data / np.clip(s, 1e-3, 1.0)[..., None]
        if np.abs(ratio - 1.0).min() > 0.02:
            break
    params = {"A": A, "UV": UV, "US": US, "L": L}
    direction = {k: rng.standard_normal(v.shape) for k, v in params.items()}
    _, grads = _objective(img.data, mask, cfg, contexts, A, UV, US, L)
    analytic = sum(float((grads[k] * direction[k]).sum()) for k in params)
    hs = 1e-4
    fp, _ = _objective(img.data, mask, cfg, contexts,
                       *[params[k] + hs * direction[k] for k in ("A", "UV", "US", "L")])
    fm, _ = _objective(img.data, mask, cfg, contexts,
                       *[params[k] - hs * direction[k] for k in ("A", "UV", "US", "L")])
    fd = (fp - fm) / (2 * hs)
    return abs(analytic - fd) / max(abs(fd), abs(analytic), 1e-8)


class TestObjectiveGradients:
    def test_single_image_objective_fd(self, rng):
        h = w = 8
        img = Image(rng.uniform(0.05, 0.6, size=(h, w, 3)))
        mask = Mask(rng.uniform(size=(h, w)) > 0.2)
        cfg = OptimizerConfig(lambda_albedo=0.3, lambda_shadow=0.1)
        rels = [fd_probe_objective(rng, img, mask, cfg, [], h, w) for _ in range(30)]
        assert max(rels) < 1e-4

    def test_multiview_objective_fd(self, rng):
        h = w = 16
        scene = two_view_plane_scene(rng, h=h, w=w, yaw_deg=4.0)
        mask = scene["mask"]
        ctx = _NeighborContext(scene["b"]["image"], scene["b"]["camera"],
                               scene["a"]["camera"], mask)
        ctx.refresh(scene["a"]["albedo"].data, scene["a"]["normals"].data, mask)
        # bounded stand-in lighting keeps the probe off the shading clamp
        ctx.L_ab = ShLighting(
            np.concatenate([np.full((3, 1), 1.0), rng.uniform(-0.04, 0.04, (3, 8))], axis=1)
        )
        cfg = OptimizerConfig(lambda_albedo=0.05, lambda_shadow=0.02)
        img = scene["a"]["image"]
        rels = [fd_probe_objective(rng, img, mask, cfg, [ctx], h, w) for _ in range(20)]
        assert max(rels) < 1e-4


class TestDecompose:
    def test_fixed_point_at_ground_truth(self, rng):
        scene = make_lambertian_scene(rng, h=12, w=12)
        init = DecomposeInit(normals=scene["normals"], lighting=scene["lighting"],
                             albedo=scene["albedo"], shadow=scene["shadow"])
        d = decompose(scene["image"], scene["mask"], init=init,
                      cfg=OptimizerConfig(iterations=150))
        assert d.trace[-1][1] < 1e-10
        assert np.abs(d.albedo.data - scene["albedo"].data).max() < 1e-8
        assert np.abs(d.normals.data - scene["normals"].data).max() < 1e-8
        assert np.abs(d.lighting.coeffs - scene["lighting"].coeffs).max() < 1e-8

    def test_albedo_shading_product_recovery(self, rng):
        scene = make_lambertian_scene(rng, h=12, w=12)
        init = DecomposeInit(normals=scene["normals"])
        cfg = OptimizerConfig(iterations=4000, step_size=0.02, decay_every=1500,
                              fit_normals=False, fit_shadow=False)
        d = decompose(scene["image"], scene["mask"], init=init, cfg=cfg)
        recon = d.shadow.data * d.albedo.data * shade(d.normals, d.lighting).data
        assert np.abs(recon - scene["image"].data).max() < 1e-4

    def test_planted_shadow_band_all_channels_free(self):
        # same band fixture with every channel optimized from default init;
        # the smoothness term alone must pull the band out of the albedo
        rng = np.random.default_rng(42)
        h = w = 24
        albedo = np.tile(np.array([0.55, 0.5, 0.45]), (h, w, 1))
        normals = random_unit_normals(rng, h, w, spread=0.35)
        L = ShLighting(np.concatenate(
            [np.full((3, 1), 1.0), rng.uniform(-0.15, 0.15, (3, 8))], axis=1))
        sh = shade(Image(normals, ColorSpace.SCALAR), L).data
        lum = sh @ np.array([0.2126, 0.7152, 0.0722])
        L = ShLighting(L.coeffs / lum.mean())
        sh = shade(Image(normals, ColorSpace.SCALAR), L).data
        band = np.zeros((h, w), dtype=bool)
        band[:, 9:15] = True
        s_true = np.where(band, 0.3, 1.0)
        img = Image(s_true[..., None] * albedo * sh)
        cfg = OptimizerConfig(iterations=6000, step_size=0.05, decay_every=10**9,
                              lambda_albedo=1.0, lambda_shadow=0.0)
        d = decompose(img, Mask.full(h, w), cfg=cfg)
        s_rec = d.shadow.data[..., 0]
        assert s_rec[band].max() < 0.5
        assert s_rec[~band].min() > 0.9
        a_in = d.albedo.data[band].mean()
        a_out = d.albedo.data[~band].mean()
        assert abs(a_in - a_out) / a_out < 0.05

    def test_reconstruction_identity_bit_exact(self, rng):
        scene = make_lambertian_scene(rng, h=10, w=10)
        d = decompose(scene["image"], scene["mask"], cfg=OptimizerConfig(iterations=40))
        recon = d.reconstruct()
        assert np.array_equal(recon.data, scene["image"].data)

    def test_shadow_only_darkens(self, rng):
        scene = make_lambertian_scene(rng, h=10, w=10)
        d = decompose(scene["image"], scene["mask"], cfg=OptimizerConfig(iterations=60))
        shading = shade(d.normals, d.lighting).data
        with_shadow = d.shadow.data * d.albedo.data * shading
        without = d.albedo.data * shading
        assert (with_shadow <= without + 1e-15).all()

    def test_trace_monotone_non_increasing(self, rng):
        scene = make_lambertian_scene(rng, h=10, w=10)
        d = decompose(scene["image"], scene["mask"], cfg=OptimizerConfig(iterations=300))
        losses = [l for _, l in d.trace]
        assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_divergence_reports_trace(self, rng):
        scene = make_lambertian_scene(rng, h=8, w=8)
        data = scene["image"].data.copy()
        data[3, 3, 0] = np.nan  # loss turns non-finite at iteration 0
        init = DecomposeInit(normals=scene["normals"], lighting=scene["lighting"],
                             albedo=scene["albedo"], shadow=scene["shadow"])
        with pytest.raises(DivergenceError) as err:
            decompose(Image(data), Mask.full(8, 8), init=init,
                      cfg=OptimizerConfig(iterations=10))
        assert hasattr(err.value, "trace")

    def test_empty_mask_rejected(self, rng):
        scene = make_lambertian_scene(rng, h=6, w=6)
        with pytest.raises(ValueError, match="mask"):
            decompose(scene["image"], Mask(np.zeros((6, 6), dtype=bool)))

    def test_neighbor_order_invariant_loss(self, rng):
        scene = two_view_plane_scene(rng, h=16, w=16, yaw_deg=3.0)
        # a second neighbor: the same plane from a slightly different pose
        scene2 = two_view_plane_scene(rng, h=16, w=16, yaw_deg=-2.0, baseline=-0.1)
        mask = scene["mask"]
        img_a = scene["a"]["image"]
        cam_a = scene["a"]["camera"]
        n1 = (scene["b"]["image"], scene["b"]["camera"])
        n2 = (scene2["b"]["image"], scene2["b"]["camera"])
        init = DecomposeInit(camera=cam_a)
        cfg = OptimizerConfig(iterations=5)
        d12 = decompose(img_a, mask, init=init, cfg=cfg, neighbors=[n1, n2])
        d21 = decompose(img_a, mask, init=init, cfg=cfg, neighbors=[n2, n1])
        assert d12.trace[-1][1] == d21.trace[-1][1]

    def test_multiview_improves_toward_truth(self, rng):
        scene = two_view_plane_scene(rng, h=16, w=16, yaw_deg=2.0)
        init = DecomposeInit(camera=scene["a"]["camera"])
        cfg = OptimizerConfig(iterations=300, neighbor_refresh=100)
        d = decompose(scene["a"]["image"], scene["mask"], init=init, cfg=cfg,
                      neighbors=[(scene["b"]["image"], scene["b"]["camera"])])
        assert d.trace[-1][1] < d.trace[0][1]


class TestCrossRenderLoss:
    def test_same_view_exact_data_is_zero(self, rng):
        scene = two_view_plane_scene(rng, h=12, w=12)
        a = scene["a"]
        d_a = Decomposition(a["albedo"], a["normals"],
                            Image(np.ones((12, 12, 1)), ColorSpace.SCALAR), a["lighting"],
                            Image(np.zeros((12, 12, 3))), scene["mask"])
        proj = CrossProjector(a["camera"], a["camera"])
        loss = cross_render_loss(d_a, a["image"], a["lighting"], np.eye(3), proj)
        assert loss < 1e-12

    def test_two_view_translation_exact(self, rng):
        scene = two_view_plane_scene(rng, h=16, w=16, yaw_deg=0.0, baseline=0.15)
        a, b = scene["a"], scene["b"]
        d_a = Decomposition(a["albedo"], a["normals"],
                            Image(np.ones((16, 16, 1)), ColorSpace.SCALAR), a["lighting"],
                            Image(np.zeros((16, 16, 3))), scene["mask"])
        proj = CrossProjector(b["camera"], a["camera"])
        R_ab = relative_rotation(a["camera"], b["camera"])
        loss = cross_render_loss(d_a, b["image"], b["lighting"], R_ab, proj)
        assert loss < 1e-6

    def test_two_view_rotation_within_resampling_tolerance(self, rng):
        scene = two_view_plane_scene(rng, h=16, w=16, yaw_deg=4.0, baseline=0.15)
        a, b = scene["a"], scene["b"]
        d_a = Decomposition(a["albedo"], a["normals"],
                            Image(np.ones((16, 16, 1)), ColorSpace.SCALAR), a["lighting"],
                            Image(np.zeros((16, 16, 3))), scene["mask"])
        proj = CrossProjector(b["camera"], a["camera"])
        R_ab = relative_rotation(a["camera"], b["camera"])
        loss = cross_render_loss(d_a, b["image"], b["lighting"], R_ab, proj)
        assert loss < 1e-4

    def test_disjoint_views_error(self, rng):
        scene = two_view_plane_scene(rng, h=8, w=8)
        a = scene["a"]
        d_a = Decomposition(a["albedo"], a["normals"],
                            Image(np.ones((8, 8, 1)), ColorSpace.SCALAR), a["lighting"],
                            Image(np.zeros((8, 8, 3))), scene["mask"])
        from relumo import CameraView
        far = CameraView(8.0, 8.0, 3.5, 3.5, np.eye(3), np.array([-100.0, 0.0, 0.0]),
                         a["camera"].depth)
        proj = CrossProjector(far, a["camera"])
        with pytest.raises(ValueError, match="co-visible"):
            cross_render_loss(d_a, a["image"], a["lighting"], np.eye(3), proj)


class TestAlbedoConsistencyLoss:
    def _decomp(self, scene, view):
        h, w = view["image"].height, view["image"].width
        return Decomposition(view["albedo"], view["normals"],
                             Image(np.ones((h, w, 1)), ColorSpace.SCALAR), view["lighting"],
                             Image(np.zeros((h, w, 3))), scene["mask"])

    def test_identical_identity_projector_zero(self, rng):
        scene = two_view_plane_scene(rng, h=10, w=10)
        d_a = self._decomp(scene, scene["a"])
        proj = CrossProjector(scene["a"]["camera"], scene["a"]["camera"])
        assert albedo_consistency_loss(d_a, d_a, proj) < 1e-12

    def test_constant_offset_matches_direct_computation(self, rng):
        scene = two_view_plane_scene(rng, h=10, w=10)
        d_a = self._decomp(scene, scene["a"])
        shifted = Decomposition(Image(np.clip(d_a.albedo.data + 0.1, 0, 1)), d_a.normals,
                                d_a.shadow, d_a.lighting, d_a.residual, d_a.mask)
        proj = CrossProjector(scene["a"]["camera"], scene["a"]["camera"])
        loss = albedo_consistency_loss(d_a, shifted, proj)
        la = lab_from_linear(d_a.albedo.data)
        lb = lab_from_linear(np.clip(d_a.albedo.data + 0.1, 0, 1))
        direct = float(((la - lb) ** 2).sum()) / (10 * 10)
        assert abs(loss - direct) < 1e-9 * max(direct, 1.0)

    def test_fully_masked_overlap_errors(self, rng):
        scene = two_view_plane_scene(rng, h=10, w=10)
        d_a = self._decomp(scene, scene["a"])
        d_b = Decomposition(d_a.albedo, d_a.normals, d_a.shadow, d_a.lighting,
                            d_a.residual, Mask(np.zeros((10, 10), dtype=bool)))
        proj = CrossProjector(scene["a"]["camera"], scene["a"]["camera"])
        with pytest.raises(ValueError, match="co-visible"):
            albedo_consistency_loss(d_a, d_b, proj)


class TestNormalsFromDepth:
    def test_ground_plane_orientation(self):
        h, w, fy = 12, 16, 20.0
        v = np.arange(h, dtype=np.float64)
        cy = -2.0
        depth = np.tile((fy / (v - cy))[:, None], (1, w))[..., None]
        from relumo import CameraView
        cam = CameraView(20.0, fy, (w - 1) / 2, cy, np.eye(3), np.zeros(3),
                         Image(depth, ColorSpace.SCALAR))
        normals = normals_from_depth(cam)
        interior = normals.data[2:-2, 2:-2]
        dots = interior @ np.array([0.0, -1.0, 0.0])
        assert np.degrees(np.arccos(np.clip(dots, -1, 1))).max() < 1.0

    def test_fronto_parallel_plane(self):
        cam = make_plane_camera(h=8, w=8, depth_value=2.0)
        normals = normals_from_depth(cam)
        assert np.abs(normals.data - np.array([0.0, 0.0, -1.0])).max() < 1e-9

    def test_unit_length_everywhere(self, rng):
        cam = make_plane_camera(h=8, w=8, depth_value=2.0)
        bumpy = cam.depth.data + rng.uniform(0, 0.2, size=(8, 8, 1))
        normals = normals_from_depth(cam.with_depth(Image(bumpy, ColorSpace.SCALAR)))
        assert np.abs(np.linalg.norm(normals.data, axis=-1) - 1).max() < 1e-12


class TestPersistence:
    def test_seven_files(self, tmp_path, rng):
        scene = make_lambertian_scene(rng, h=10, w=10)
        d = decompose(scene["image"], scene["mask"], cfg=OptimizerConfig(iterations=30))
        save_decomposition(d, tmp_path / "out")
        names = sorted(p.name for p in (tmp_path / "out").iterdir())
        assert names == sorted([
            "albedo.png", "normals.pfm", "shadow.png", "residual.pfm",
            "lighting.json", "mask.png", "manifest.json",
        ])

    def test_disk_reconstruction_matches_source(self, tmp_path, rng):
        scene = make_lambertian_scene(rng, h=10, w=10)
        d = decompose(scene["image"], scene["mask"], cfg=OptimizerConfig(iterations=30))
        save_decomposition(d, tmp_path / "out")
        back = load_decomposition(tmp_path / "out")
        recon = back.reconstruct()
        assert np.abs(recon.data - scene["image"].data).max() < 1e-6

    def test_lighting_and_mask_preserved(self, tmp_path, rng):
        scene = make_lambertian_scene(rng, h=10, w=10)
        mask = Mask(rng.uniform(size=(10, 10)) > 0.3)
        d = decompose(scene["image"], mask, cfg=OptimizerConfig(iterations=20))
        save_decomposition(d, tmp_path / "out")
        back = load_decomposition(tmp_path / "out")
        assert np.array_equal(back.mask.values, mask.values)
        assert np.array_equal(back.lighting.coeffs, d.lighting.coeffs)
        assert tuple(back.trace) == tuple(d.trace)

    def test_normals_pfm_stores_z_toward_viewer(self, tmp_path, rng):
        from relumo import load_image

        scene = make_lambertian_scene(rng, h=10, w=10)
        d = decompose(scene["image"], scene["mask"], cfg=OptimizerConfig(iterations=10))
        save_decomposition(d, tmp_path / "out")
        stored = load_image(tmp_path / "out" / "normals.pfm")
        # camera-facing pixels carry positive z in the file
        assert stored.data[..., 2].mean() > 0
        back = load_decomposition(tmp_path / "out")
        assert np.abs(back.normals.data - d.normals.data).max() < 1e-6
