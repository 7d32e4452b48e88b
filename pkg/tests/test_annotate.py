import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from synthpose.annotate import (
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    NOT_VISIBLE,
    OCCLUDED,
    VISIBLE,
    AnnotateError,
    CameraModel,
    annotate_scene,
    classify_visibility,
    frame_to_records,
    project_point,
    project_points,
    render_debug_frame,
    unproject_pixel,
    write_coco_dataset,
)
from synthpose.geometry import SolidSet, oracle_occluded, sphere
from synthpose.scenegen import (
    CameraSample,
    HumanSample,
    RandomizerConfig,
    SceneSample,
    sample_scene,
)
from synthpose.skeleton import COCO_KEYPOINTS

from conftest import identity_rotation_sequence


def simple_camera(position=(0.0, 0.0, 0.0), euler=(0.0, 0.0, 0.0), fov=90.0):
    return CameraModel(
        position=np.asarray(position, dtype=float),
        rotation=Rotation.from_euler("xyz", euler, degrees=True),
        vfov_deg=fov,
    )


def make_scene(humans, occluders=(), camera=None, frame_index=0, seed=0):
    cam = camera or CameraSample(
        position=(0.0, 1.0, -4.0), rotation_euler=(0, 0, 0), vfov_deg=50.0,
        focal_length_mm=10.0,
    )
    return SceneSample(
        frame_index=frame_index, seed=seed, humans=tuple(humans),
        occluders=tuple(occluders), background_id=0, camera=cam, lights=(),
        sun={}, post={},
    )


def centered_human(**kw):
    args = dict(
        clip_id="a", pose_frame=0, position=(0.0, 0.0, 0.0),
        rotation_euler=(0.0, 180.0, 0.0), scale=(1.0, 1.0, 1.0), pool_index=0,
        wheelchair_dims=(0.66, 0.95, 0.85),
    )
    args.update(kw)
    return HumanSample(**args)


@pytest.fixture(scope="module")
def rest_anims(skeleton):
    return {"a": identity_rotation_sequence(skeleton, n_frames=2)}


class TestProjection:
    def test_optical_axis_hits_center(self):
        cam = simple_camera()
        assert project_point((0.0, 0.0, 5.0), cam) == (640.0, 360.0)

    def test_behind_camera_out_of_view(self):
        cam = simple_camera()
        assert project_point((0.0, 0.0, -5.0), cam) is None

    def test_45_degree_elevation_hits_top_edge(self):
        # At 90-degree vertical FOV a point as high as it is deep lands on y=0.
        cam = simple_camera(fov=90.0)
        pix, _, ok = project_points(np.array([[0.0, 4.0, 4.0]]), cam)
        assert ok[0]
        assert abs(pix[0, 1] - 0.0) < 1e-6
        assert abs(pix[0, 0] - 640.0) < 1e-6

    def test_aspect_ratio(self):
        # The horizontal half-angle covers 16/9 of the vertical tangent.
        cam = simple_camera(fov=90.0)
        x_edge = 4.0 * (16.0 / 9.0)
        pix, _, ok = project_points(np.array([[x_edge, 0.0, 4.0]]), cam)
        assert ok[0] and abs(pix[0, 0] - IMAGE_WIDTH) < 1e-9

    def test_unproject_round_trip(self):
        rng = np.random.default_rng(3)
        cam = simple_camera(position=(1.0, -2.0, 0.5), euler=(10, 40, -5), fov=48.0)
        for _ in range(50):
            p = cam.position + Rotation.from_euler("xyz", (0, 0, 0)).apply(
                rng.uniform(-3, 3, 3)
            )
            p[2] = abs(p[2]) + 1.0  # keep it in front in camera coords
            local = cam.rotation.apply(p) + cam.position
            pix, depth, ok = project_points(local[None], cam)
            if not ok[0]:
                continue
            origin, direction = unproject_pixel(cam, pix[0, 0], pix[0, 1])
            to_p = local - origin
            dist = np.linalg.norm(np.cross(to_p, direction))
            assert dist < 1e-6

    def test_bad_fov_rejected(self):
        with pytest.raises(AnnotateError):
            simple_camera(fov=0.0)


class TestClassifyVisibility:
    def test_empty_scene_visible(self):
        cam = simple_camera()
        labels = classify_visibility(np.array([[0.0, 0.0, 5.0]]), SolidSet([]), cam)
        assert labels[0] == VISIBLE

    def test_sphere_on_ray_midpoint_occludes(self):
        cam = simple_camera()
        blocker = sphere((0.0, 0.0, 2.5), 0.5)
        labels = classify_visibility(
            np.array([[0.0, 0.0, 5.0]]), SolidSet([blocker]), cam
        )
        assert labels[0] == OCCLUDED
        # Independent ray-sphere oracle agrees.
        d = np.array([[0.0, 0.0, 1.0]])
        assert oracle_occluded(SolidSet([blocker]), np.zeros((1, 3)), d, np.array([4.98]))[0]

    def test_outside_frustum_not_visible(self):
        cam = simple_camera(fov=60.0)
        # 1 m beyond the top frustum plane at depth 4.
        top_y = 4.0 * np.tan(np.radians(30.0))
        labels = classify_visibility(
            np.array([[0.0, top_y + 1.0, 4.0]]), SolidSet([]), cam
        )
        assert labels[0] == NOT_VISIBLE

    def test_threshold_spares_grazing_contact(self):
        cam = simple_camera()
        # Surface touching the keypoint within tau: not occlusion.
        blocker = sphere((0.0, 0.0, 4.995), 0.01)
        labels = classify_visibility(
            np.array([[0.0, 0.0, 5.0]]), SolidSet([blocker]), cam, threshold=0.02
        )
        assert labels[0] == VISIBLE


class TestAnnotateScene:
    def test_centered_human_all_visible(self, rest_anims, skeleton, schema, config):
        scene = make_scene([centered_human()])
        frame = annotate_scene(scene, rest_anims, skeleton, schema, config)
        assert len(frame.instances) == 1
        inst = frame.instances[0]
        assert (inst.visibility == VISIBLE).all()
        x, y, w, h = inst.bbox
        kp = inst.keypoints_px
        assert w > 0 and h > 0
        inside = (
            (kp[:, 0] >= x) & (kp[:, 0] <= x + w) & (kp[:, 1] >= y) & (kp[:, 1] <= y + h)
        )
        assert inside.all()

    def test_human_behind_camera_dropped(self, rest_anims, skeleton, schema, config):
        scene = make_scene([centered_human(position=(0.0, 0.0, -10.0))])
        frame = annotate_scene(scene, rest_anims, skeleton, schema, config)
        assert len(frame.instances) == 0

    def test_wheelchair_blocks_hips_not_shoulders(self, skeleton, schema, config):
        from synthpose.motionproc import fix_lower_body

        anims = {"a": fix_lower_body(identity_rotation_sequence(skeleton, 2))}
        cam = CameraSample(
            position=(0.0, 0.2, -2.0), rotation_euler=(-10, 0, 0), vfov_deg=60.0,
            focal_length_mm=10.0,
        )
        scene = make_scene([centered_human()], camera=cam)
        frame = annotate_scene(scene, anims, skeleton, schema, config)
        inst = frame.instances[0]
        vis = dict(zip(COCO_KEYPOINTS, inst.visibility))
        assert vis["left_hip"] == OCCLUDED and vis["right_hip"] == OCCLUDED
        assert vis["left_shoulder"] == VISIBLE and vis["right_shoulder"] == VISIBLE
        assert inst.occluded_fraction > 0.0

    def test_bbox_contains_labeled_keypoints_random_scenes(
        self, seated_animations, skeleton, schema, config
    ):
        lengths = {k: v.n_frames for k, v in seated_animations.items()}
        for i in range(12):
            scene = sample_scene(config, 21, i, lengths)
            frame = annotate_scene(scene, seated_animations, skeleton, schema, config)
            for inst in frame.instances:
                x, y, w, h = inst.bbox
                labeled = inst.visibility > 0
                kp = inst.keypoints_px[labeled]
                assert ((kp[:, 0] >= x - 1e-9) & (kp[:, 0] <= x + w + 1e-9)).all()
                assert ((kp[:, 1] >= y - 1e-9) & (kp[:, 1] <= y + h + 1e-9)).all()
                assert (inst.visibility > 0).sum() >= 1

    def test_visibility_matches_oracle_small(
        self, seated_animations, skeleton, schema, config
    ):
        # Module-scale version of the acceptance oracle check.
        from synthpose.annotate import OCCLUSION_THRESHOLD_M
        import synthpose.annotate as A

        lengths = {k: v.n_frames for k, v in seated_animations.items()}
        small = RandomizerConfig(occluder_max_count=8)
        for i in range(4):
            scene = sample_scene(small, 33, i, lengths)
            frame = annotate_scene(scene, seated_animations, skeleton, schema, small)
            # Rebuild the scene's solid set through the public path by
            # re-annotating with a patched classifier that records inputs.
            recorded = {}
            orig = A.classify_visibility

            def spy(kps, solids, cam, exclude=None, threshold=OCCLUSION_THRESHOLD_M):
                recorded["args"] = (kps, solids, cam, exclude, threshold)
                return orig(kps, solids, cam, exclude=exclude, threshold=threshold)

            A.classify_visibility = spy
            try:
                frame2 = annotate_scene(scene, seated_animations, skeleton, schema, small)
            finally:
                A.classify_visibility = orig
            kps, solids, cam, exclude, threshold = recorded["args"]
            _, _, in_frustum = project_points(kps, cam)
            dirs = kps - cam.position
            dist = np.linalg.norm(dirs, axis=1)
            dirs = dirs / dist[:, None]
            brute = oracle_occluded(
                solids,
                np.broadcast_to(cam.position, kps.shape),
                dirs,
                t_max=dist - threshold,
                exclude=exclude,
            )
            analytic = orig(kps, solids, cam, exclude=exclude, threshold=threshold)
            expect = np.where(in_frustum, np.where(brute, OCCLUDED, VISIBLE), NOT_VISIBLE)
            assert np.array_equal(analytic, expect)
            assert all(
                np.array_equal(i1.visibility, i2.visibility)
                for i1, i2 in zip(frame.instances, frame2.instances)
            )


class TestCocoWriter:
    def test_single_frame_schema(self, rest_anims, skeleton, schema, config, tmp_path):
        scene = make_scene([centered_human()])
        frame = annotate_scene(scene, rest_anims, skeleton, schema, config)
        paths = write_coco_dataset([frame_to_records(frame)], tmp_path / "ds")
        with open(paths["annotations"]) as f:
            doc = json.load(f)
        assert len(doc["images"]) == 1
        assert len(doc["annotations"]) == 1
        ann = doc["annotations"][0]
        assert len(ann["keypoints"]) == 51
        assert ann["num_keypoints"] == 17
        assert ann["iscrowd"] == 0
        assert abs(ann["area"] - ann["bbox"][2] * ann["bbox"][3]) < 1e-9
        assert doc["categories"][0]["name"] == "person"
        assert doc["images"][0]["width"] == IMAGE_WIDTH
        assert doc["images"][0]["height"] == IMAGE_HEIGHT

    def test_not_visible_keypoints_zeroed(self, skeleton, schema, config, tmp_path):
        from synthpose.motionproc import fix_lower_body

        anims = {"a": fix_lower_body(identity_rotation_sequence(skeleton, 2))}
        cam = CameraSample(
            position=(0.0, 0.2, -2.0), rotation_euler=(-10, 0, 0), vfov_deg=20.0,
            focal_length_mm=10.0,
        )
        scene = make_scene([centered_human()], camera=cam)
        frame = annotate_scene(scene, anims, skeleton, schema, config)
        rec = frame_to_records(frame)
        for inst in rec["instances"]:
            kp = np.asarray(inst["keypoints"]).reshape(17, 3)
            off = kp[:, 2] == 0
            assert np.all(kp[off, :2] == 0.0)
            assert inst["num_keypoints"] == int((kp[:, 2] > 0).sum())

    def test_deterministic_bytes(
        self, seated_animations, skeleton, schema, config, tmp_path
    ):
        lengths = {k: v.n_frames for k, v in seated_animations.items()}

        def build(out):
            records = []
            for i in range(5):
                scene = sample_scene(config, 77, i, lengths)
                records.append(
                    frame_to_records(
                        annotate_scene(scene, seated_animations, skeleton, schema, config)
                    )
                )
            return write_coco_dataset(records, out)

        p1 = build(tmp_path / "a")
        p2 = build(tmp_path / "b")
        assert open(p1["annotations"], "rb").read() == open(p2["annotations"], "rb").read()
        assert open(p1["metadata"], "rb").read() == open(p2["metadata"], "rb").read()

    def test_ids_dense_and_consistent(
        self, seated_animations, skeleton, schema, config, tmp_path
    ):
        lengths = {k: v.n_frames for k, v in seated_animations.items()}
        records = []
        for i in range(6):
            scene = sample_scene(config, 13, i, lengths)
            records.append(
                frame_to_records(
                    annotate_scene(scene, seated_animations, skeleton, schema, config)
                )
            )
        paths = write_coco_dataset(records, tmp_path / "ds")
        with open(paths["annotations"]) as f:
            doc = json.load(f)
        image_ids = [im["id"] for im in doc["images"]]
        ann_ids = [a["id"] for a in doc["annotations"]]
        assert ann_ids == list(range(1, len(ann_ids) + 1))
        assert len(set(image_ids)) == len(image_ids)
        valid = set(image_ids)
        assert all(a["image_id"] in valid for a in doc["annotations"])

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(AnnotateError):
            write_coco_dataset([], tmp_path / "ds")


class TestDebugRender:
    def test_empty_scene_background_only(
        self, rest_anims, skeleton, schema, config, tmp_path
    ):
        from PIL import Image

        empty = make_scene([])
        p1 = tmp_path / "empty.png"
        render_debug_frame(empty, rest_anims, skeleton, schema, config, p1)
        one = make_scene([centered_human()])
        p2 = tmp_path / "one.png"
        render_debug_frame(one, rest_anims, skeleton, schema, config, p2)
        a = np.asarray(Image.open(p1))
        b = np.asarray(Image.open(p2))
        assert a.shape == (IMAGE_HEIGHT, IMAGE_WIDTH)
        # The human adds foreground pixels over the empty render.
        assert (b != a).sum() > 100

    def test_identical_bytes_across_runs(
        self, rest_anims, skeleton, schema, config, tmp_path
    ):
        scene = make_scene([centered_human()])
        p1, p2 = tmp_path / "r1.png", tmp_path / "r2.png"
        render_debug_frame(scene, rest_anims, skeleton, schema, config, p1)
        render_debug_frame(scene, rest_anims, skeleton, schema, config, p2)
        assert p1.read_bytes() == p2.read_bytes()
