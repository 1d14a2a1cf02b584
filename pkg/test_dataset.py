#!/usr/bin/env python3
"""
Tests for the keypoint frame schema, annotation, splits and JSONL storage.
"""

import json
import os
import sys
import tempfile
import unittest
import logging

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from gaze.dataset import (
    KEYPOINT_NAMES, NUM_KEYPOINTS, OPENPOSE_INDEX_MAP, GazeClass, KeypointFrame,
    annotate_gaze, class_counts, encode_labels, decode_label, face_centroid, frame_to_record,
    from_openpose, make_keypoints, read_jsonl, scan_jsonl, select_frames, split_by_subject, write_jsonl,
    SplitPlan,
)
from gaze.errors import DegenerateTarget, MalformedRecord, NoValidKeypoints, TooFewSubjects, WrongKeypointCount
from gaze.geometry import CameraIntrinsics

logging.basicConfig(level=logging.ERROR)

CAM = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)


def make_frame(points=None, confidences=None, frame_id='f0', subject_id='s0', **kwargs):
    """Frame with every keypoint at the principal point unless given."""
    xyk = np.zeros((NUM_KEYPOINTS, 3))
    xyk[:, 0], xyk[:, 1], xyk[:, 2] = 320.0, 240.0, 1.0
    if points is not None:
        xyk[:len(points), :2] = points
    if confidences is not None:
        xyk[:, 2] = confidences
    return KeypointFrame(frame_id, subject_id, CAM, make_keypoints(xyk), **kwargs)


def random_frame(rng, i):
    xyk = np.column_stack([
        rng.uniform(0, 640, NUM_KEYPOINTS),
        rng.uniform(0, 480, NUM_KEYPOINTS),
        rng.uniform(0, 1, NUM_KEYPOINTS),
    ])
    label = [c for c in GazeClass][i % 4]
    return KeypointFrame(
        f'frame_{i}', f'subject_{i % 7}', CAM, make_keypoints(xyk), label=label,
        target_ccs=tuple(rng.uniform(-1, 1, 3)),
        centroid_depth=float(rng.uniform(0.5, 2.0)) if i % 2 else None,
        source='realsense' if i % 3 == 0 else 'icub',
    )


class TestSchema(unittest.TestCase):
    """Test the keypoint frame schema."""

    def test_canonical_names(self):
        self.assertEqual(NUM_KEYPOINTS, 19)
        self.assertEqual(KEYPOINT_NAMES[:3], ('nose', 'ear_L', 'ear_R'))

    def test_wrong_count(self):
        with self.assertRaises(WrongKeypointCount):
            make_keypoints(np.zeros((18, 3)))

    def test_confidence_out_of_range(self):
        with self.assertRaises(MalformedRecord):
            make_frame(confidences=np.full(NUM_KEYPOINTS, 1.5))

    def test_unknown_source(self):
        with self.assertRaises(MalformedRecord):
            make_frame(source='kinect')

    def test_label_string_is_coerced(self):
        frame = make_frame(label='workspace')
        self.assertIs(frame.label, GazeClass.WORKSPACE)

    def test_depth_fallback(self):
        self.assertEqual(make_frame().depth(), 1.0)
        self.assertEqual(make_frame(centroid_depth=0.7).depth(), 0.7)

    def test_label_encoding_order(self):
        idx = encode_labels(['eye_contact', 'other', 'icub', 'workspace'])
        np.testing.assert_array_equal(idx, [0, 1, 2, 3])
        self.assertIs(decode_label(3), GazeClass.WORKSPACE)


class TestOpenposeIngestion(unittest.TestCase):
    """Test mapping of raw pose-estimator arrays."""

    def test_indices_are_taken_from_the_right_model(self):
        body = np.zeros((25, 3))
        face = np.zeros((70, 3))
        body[:, 0] = np.arange(25)
        face[:, 0] = 100 + np.arange(70)
        body[:, 2] = face[:, 2] = 0.9
        frame = from_openpose('op', 's1', CAM, body, face)
        xyk = frame.as_array()
        for i, name in enumerate(KEYPOINT_NAMES):
            model, index = OPENPOSE_INDEX_MAP[name]
            expected = index if model == 'body' else 100 + index
            self.assertEqual(xyk[i, 0], expected)

    def test_short_array(self):
        with self.assertRaises(MalformedRecord):
            from_openpose('op', 's1', CAM, np.zeros((10, 3)), np.zeros((70, 3)))


class TestFaceCentroid(unittest.TestCase):
    """Test the face centroid."""

    def test_three_valid_points(self):
        conf = np.zeros(NUM_KEYPOINTS)
        conf[:3] = 1.0
        frame = make_frame(points=[(0, 0), (2, 0), (1, 3)], confidences=conf)
        np.testing.assert_allclose(face_centroid(frame), (1, 1))

    def test_single_valid_point(self):
        conf = np.zeros(NUM_KEYPOINTS)
        conf[0] = 0.4
        frame = make_frame(points=[(5, 7)], confidences=conf)
        np.testing.assert_allclose(face_centroid(frame), (5, 7))

    def test_no_valid_points(self):
        with self.assertRaises(NoValidKeypoints):
            face_centroid(make_frame(confidences=np.zeros(NUM_KEYPOINTS)))


class TestAnnotateGaze(unittest.TestCase):
    """Test ground-truth gaze annotation."""

    def test_axial_geometry(self):
        ann = annotate_gaze(make_frame(), target_ccs=(0, 0, 0.5), depth=1.0)
        np.testing.assert_allclose(ann.gaze3d, (0, 0, -1), atol=1e-12)
        np.testing.assert_allclose(ann.gaze2d, (0, 0), atol=1e-9)
        np.testing.assert_allclose(ann.centroid_px, (320, 240))

    def test_target_on_centroid(self):
        with self.assertRaises(DegenerateTarget):
            annotate_gaze(make_frame(), target_ccs=(0, 0, 1), depth=1.0)

    def test_missing_target(self):
        with self.assertRaises(DegenerateTarget):
            annotate_gaze(make_frame())

    def test_uses_frame_target_and_depth(self):
        frame = make_frame(target_ccs=(0.1, 0.0, 0.5), centroid_depth=0.5)
        ann = annotate_gaze(frame)
        np.testing.assert_allclose(ann.gaze3d, (1, 0, 0), atol=1e-12)
        # tip at (0.1, 0, 0.5) projects 120 px right of the centroid
        np.testing.assert_allclose(ann.gaze2d, (120, 0), atol=1e-9)

    def test_gaze3d_is_unit(self):
        ann = annotate_gaze(make_frame(), target_ccs=(0.3, -0.2, 0.4), depth=1.2)
        self.assertAlmostEqual(float(np.linalg.norm(ann.gaze3d)), 1.0, places=12)


class TestSplits(unittest.TestCase):
    """Test participant-wise splits."""

    def test_nineteen_to_five_protocol(self):
        subjects = [f's{i:02d}' for i in range(24)]
        plan = split_by_subject(subjects, k=5, ratio=(19, 5), seed=0)
        self.assertEqual(len(plan.splits), 5)
        for split in plan.splits:
            self.assertEqual(len(split.train_subjects), 19)
            self.assertEqual(len(split.test_subjects), 5)
            self.assertFalse(set(split.train_subjects) & set(split.test_subjects))
            self.assertEqual(set(split.train_subjects) | set(split.test_subjects), set(subjects))

    def test_two_subjects(self):
        plan = split_by_subject(['a', 'b'], k=1, ratio=(1, 1), seed=3)
        split = plan.splits[0]
        self.assertEqual(len(split.train_subjects), 1)
        self.assertEqual(len(split.test_subjects), 1)

    def test_too_few_subjects(self):
        with self.assertRaises(TooFewSubjects):
            split_by_subject(['a'], k=1)

    def test_deterministic(self):
        subjects = [f's{i}' for i in range(10)]
        a = split_by_subject(subjects, k=3, seed=11)
        b = split_by_subject(subjects, k=3, seed=11)
        self.assertEqual(a, b)

    def test_accepts_frames(self):
        frames = [make_frame(frame_id=f'f{i}', subject_id=f's{i % 4}') for i in range(12)]
        plan = split_by_subject(frames, k=2, ratio=(3, 1), seed=0)
        self.assertEqual(len(plan.splits[0].test_subjects), 1)

    def test_plan_dict_round_trip(self):
        plan = split_by_subject([f's{i}' for i in range(8)], k=2, seed=5)
        self.assertEqual(SplitPlan.from_dict(json.loads(json.dumps(plan.to_dict()))), plan)

    def test_select_frames_by_source(self):
        frames = [
            make_frame(frame_id='a', subject_id='s1'),
            make_frame(frame_id='b', subject_id='s1', source='realsense'),
            make_frame(frame_id='c', subject_id='s2'),
        ]
        self.assertEqual([f.frame_id for f in select_frames(frames, ['s1'])], ['a', 'b'])
        self.assertEqual([f.frame_id for f in select_frames(frames, ['s1'], ['icub'])], ['a'])


class TestJsonl(unittest.TestCase):
    """Test JSONL storage."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'frames.jsonl')

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        frames = [random_frame(rng, i) for i in range(100)]
        self.assertEqual(write_jsonl(self.path, frames), 100)
        self.assertEqual(read_jsonl(self.path), frames)

    def test_eighteen_keypoints(self):
        record = json.loads(json.dumps({
            'frame_id': 'x', 'subject_id': 's', 'camera': CAM.to_dict(),
            'keypoints': [{'name': n, 'x': 0, 'y': 0, 'k': 1} for n in KEYPOINT_NAMES[:18]],
        }))
        with open(self.path, 'w') as f:
            f.write(json.dumps(record) + '\n')
        with self.assertRaises(WrongKeypointCount) as ctx:
            read_jsonl(self.path)
        self.assertEqual(ctx.exception.line, 1)

    def test_empty_file(self):
        open(self.path, 'w').close()
        self.assertEqual(read_jsonl(self.path), [])

    def test_invalid_json_reports_line(self):
        rng = np.random.default_rng(1)
        write_jsonl(self.path, [random_frame(rng, 0)])
        with open(self.path, 'a') as f:
            f.write('{not json\n')
        with self.assertRaises(MalformedRecord) as ctx:
            read_jsonl(self.path)
        self.assertEqual(ctx.exception.line, 2)

    def test_unknown_fields(self):
        rng = np.random.default_rng(2)
        frame = random_frame(rng, 0)
        record = frame_to_record(frame)
        record['note'] = 'kept'
        with open(self.path, 'w') as f:
            f.write(json.dumps(record) + '\n')
        loaded = read_jsonl(self.path)[0]
        self.assertEqual(loaded.extras, {'note': 'kept'})
        with self.assertRaises(MalformedRecord):
            read_jsonl(self.path, strict=True)

    def test_scan_reports_bad_lines_and_continues(self):
        rng = np.random.default_rng(3)
        frames = [random_frame(rng, i) for i in range(2)]
        bad = frame_to_record(random_frame(rng, 2))
        bad['keypoints'][4]['k'] = 1.5
        with open(self.path, 'w') as f:
            f.write(json.dumps(frame_to_record(frames[0])) + '\n')
            f.write(json.dumps(bad) + '\n')
            f.write('\n')
            f.write('[1, 2\n')
            f.write(json.dumps(frame_to_record(frames[1])) + '\n')
        entries = list(scan_jsonl(self.path))
        self.assertEqual([e.line for e in entries], [1, 2, 4, 5])
        self.assertEqual([e.frame for e in entries if e.frame is not None], frames)
        self.assertEqual(entries[1].frame_id, bad['frame_id'])
        self.assertIsInstance(entries[1].error, MalformedRecord)
        self.assertEqual(entries[1].error.line, 2)
        self.assertEqual(entries[2].frame_id, 'line 4')
        self.assertEqual(entries[2].error.line, 4)
        with self.assertRaises(MalformedRecord) as ctx:
            read_jsonl(self.path)
        self.assertEqual(ctx.exception.line, 2)

    def test_class_counts(self):
        frames = [make_frame(label='icub'), make_frame(label='icub'), make_frame()]
        counts = class_counts(frames)
        self.assertEqual(counts['icub'], 2)
        self.assertEqual(counts['eye_contact'], 0)
        self.assertEqual(counts['unlabelled'], 1)


if __name__ == '__main__':
    unittest.main()
